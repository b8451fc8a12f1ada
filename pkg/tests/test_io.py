import json
import os

import numpy as np
import pytest

from gapweaver import io as gio
from gapweaver.errors import FormatError


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "a.txt"
    gio.atomic_write(p, "one")
    gio.atomic_write(p, b"two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["a.txt"]


def test_json_handles_numpy(tmp_path):
    obj = {"a": np.arange(3), "b": np.float64(0.5), "c": np.int64(4), "z": 1 + 2j}
    gio.write_json(tmp_path / "x.json", obj)
    assert gio.read_json(tmp_path / "x.json") == {"a": [0, 1, 2], "b": 0.5, "c": 4, "z": [1.0, 2.0]}


def test_csv_round_trip_keeps_full_precision(tmp_path):
    v = 0.1 + 0.2
    gio.write_csv(tmp_path / "t.csv", ["x", "tag"], [(v, "p"), (np.float64(1 / 3), "q")],
                  header={"eta": 0.17})
    head, cols, rows = gio.read_csv(tmp_path / "t.csv")
    assert head == {"eta": 0.17} and cols == ["x", "tag"]
    assert float(rows[0][0]) == v and float(rows[1][0]) == 1 / 3


def test_empty_csv_rejected(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(FormatError):
        gio.read_csv(tmp_path / "e.csv")


@pytest.mark.parametrize("arr", [np.linspace(0, 1, 7), np.exp(1j * np.arange(5.0))])
def test_payload_round_trip(tmp_path, arr):
    scalar = "complex128" if np.iscomplexobj(arr) else "float64"
    gio.write_payload(tmp_path / "p.bin", {"scalar": scalar}, arr)
    head, back = gio.read_payload(tmp_path / "p.bin")
    assert head["payload_bytes"] == arr.nbytes and head["format_version"] == gio.FORMAT_VERSION
    assert np.array_equal(back, arr)


def test_payload_errors(tmp_path):
    p = tmp_path / "p.bin"
    p.write_bytes(b"no newline here")
    with pytest.raises(FormatError, match="header"):
        gio.read_payload(p)
    p.write_bytes(b"{oops\n")
    with pytest.raises(FormatError, match="bad header"):
        gio.read_payload(p)
    gio.write_payload(p, {}, np.ones(4))
    p.write_bytes(p.read_bytes() + b"\0" * 8)
    with pytest.raises(FormatError, match="payload"):
        gio.read_payload(p)


def test_manifest_hashes_outputs(tmp_path):
    out = gio.write_json(tmp_path / "r.json", {"k": 1})
    man = gio.write_manifest(tmp_path, "demo", {"tol": 1e-10}, [out], {"ok": True})
    data = json.loads(open(man).read())
    assert data["outputs"] == [{"path": "r.json", "sha256": gio.sha256_file(out)}]
    assert data["results"] == {"ok": True} and data["command"] == "demo"
