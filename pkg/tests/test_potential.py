import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapweaver.errors import InvalidPotentialError
from gapweaver.potential import (PeriodicPotential, check_evenness, evaluate, load_potential,
                                 sample_potential)


def test_cosine_samples_on_nodes():
    p = PeriodicPotential.one_minus_cos()
    x = 2 * np.pi * np.arange(16) / 16
    assert np.allclose(sample_potential(p, 16), 1 - np.cos(x), atol=1e-15)


def test_zero_is_constant():
    assert PeriodicPotential.zero().is_constant
    assert not PeriodicPotential.one_minus_cos().is_constant
    assert PeriodicPotential.from_table([2.0] * 8).is_constant


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=5))
def test_table_interpolation_reproduces_trig_polynomial(cs):
    # a trigonometric polynomial sampled above Nyquist is interpolated exactly
    def w(x):
        return sum(c * np.cos(j * x) for j, c in enumerate(cs))

    p = PeriodicPotential.from_function(w, n=32)
    x = np.linspace(-7.0, 9.0, 57)
    assert np.allclose(evaluate(p, x), w(x), atol=1e-12)


def test_table_resampling_to_other_grid():
    p = PeriodicPotential.from_function(lambda x: np.cos(2 * x), n=24)
    x = 2 * np.pi * np.arange(40) / 40
    assert np.allclose(sample_potential(p, 40), np.cos(2 * x), atol=1e-12)


def test_evenness_check():
    even = PeriodicPotential.from_function(lambda x: np.cos(x) + 0.3 * np.cos(3 * x))
    odd = PeriodicPotential.from_function(lambda x: np.sin(x))
    assert check_evenness(even)[0]
    ok, defect = check_evenness(odd)
    assert not ok and defect > 0.5


def test_descriptor_round_trip(tmp_path):
    p = PeriodicPotential.from_function(lambda x: 1 + np.cos(x) ** 2, n=16, label="sq")
    q = PeriodicPotential.from_dict(json.loads(json.dumps(p.to_dict())))
    assert q == p and q.digest() == p.digest()
    path = tmp_path / "w.json"
    path.write_text(json.dumps(p.to_dict()))
    assert load_potential(str(path)) == p


def test_scale_only_changes_digest():
    assert PeriodicPotential.one_minus_cos(2.0).digest() != PeriodicPotential.one_minus_cos().digest()
    assert np.allclose(sample_potential(PeriodicPotential.one_minus_cos(2.0), 8),
                       2 * sample_potential(PeriodicPotential.one_minus_cos(), 8))


@pytest.mark.parametrize("bad", [
    lambda: PeriodicPotential("square"),
    lambda: PeriodicPotential.from_table([1.0, 2.0]),
    lambda: PeriodicPotential.from_table([1.0, np.nan, 0.0, 1.0]),
    lambda: load_potential("no-such-potential"),
    lambda: PeriodicPotential.from_dict({"samples": [1, 2, 3, 4]}),
])
def test_invalid_potentials(bad):
    with pytest.raises(InvalidPotentialError):
        bad()


def test_malformed_json_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(InvalidPotentialError):
        load_potential(str(path))
