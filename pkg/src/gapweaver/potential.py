"""Periodic potentials W(x) on [0, 2pi).

A potential is either a closed form (``one-minus-cos``, ``zero``) or a table of
uniform samples. Closed forms are evaluated exactly on any grid; tables are
resampled with trigonometric (FFT) interpolation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample

from .errors import InvalidPotentialError

TWO_PI = 2.0 * np.pi
CLOSED_FORMS = ("one-minus-cos", "zero")
EVEN_TOL = 1e-12


@dataclass(frozen=True)
class PeriodicPotential:
    """A 2pi-periodic real potential.

    ``scale`` multiplies the closed form (handy for checking that only the
    product eta*W matters). For ``kind="table"`` the samples live on
    x_j = 2 pi j / len(samples).
    """

    kind: str
    samples: tuple = field(default=())
    label: str = ""
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in CLOSED_FORMS + ("table",):
            raise InvalidPotentialError(f"unknown potential kind {self.kind!r}")
        if not np.isfinite(self.scale):
            raise InvalidPotentialError("scale must be finite")
        if self.kind == "table":
            arr = np.asarray(self.samples, dtype=float)
            if arr.ndim != 1 or arr.size < 4:
                raise InvalidPotentialError("a table potential needs at least 4 samples")
            if not np.all(np.isfinite(arr)):
                raise InvalidPotentialError("table contains non-finite samples")
            object.__setattr__(self, "samples", tuple(float(v) for v in arr))

    # -- constructors ------------------------------------------------------
    @classmethod
    def one_minus_cos(cls, scale=1.0):
        return cls("one-minus-cos", label="1-cos x" if scale == 1.0 else f"{scale:g}*(1-cos x)",
                   scale=float(scale))

    @classmethod
    def zero(cls):
        return cls("zero", label="0")

    @classmethod
    def from_table(cls, samples, label="table"):
        return cls("table", tuple(np.asarray(samples, dtype=float)), label)

    @classmethod
    def from_function(cls, fn, n=256, label="table"):
        x = TWO_PI * np.arange(n) / n
        return cls.from_table(fn(x), label)

    @property
    def is_constant(self):
        if self.kind == "zero" or self.scale == 0.0:
            return True
        if self.kind == "table":
            s = np.asarray(self.samples)
            return bool(np.ptp(s) == 0.0)
        return False

    # -- serialization -----------------------------------------------------
    def to_dict(self):
        d = {"kind": self.kind, "samples": list(self.samples), "label": self.label}
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            kind = d["kind"]
        except (KeyError, TypeError) as exc:
            raise InvalidPotentialError("potential descriptor needs a 'kind'") from exc
        return cls(kind, tuple(d.get("samples", ())), d.get("label", ""),
                   float(d.get("scale", 1.0)))

    def digest(self):
        """Short SHA-256 of the canonical JSON descriptor."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_potential(spec):
    """Accept a builtin name, a JSON file path or a descriptor dict."""
    if isinstance(spec, PeriodicPotential):
        return spec
    if isinstance(spec, dict):
        return PeriodicPotential.from_dict(spec)
    name = str(spec)
    if name in ("one-minus-cos", "1-cos", "cos"):
        return PeriodicPotential.one_minus_cos()
    if name == "zero":
        return PeriodicPotential.zero()
    try:
        with open(name, encoding="utf-8") as fh:
            return PeriodicPotential.from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise InvalidPotentialError(f"no builtin or file named {name!r}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidPotentialError(f"{name}: not valid JSON ({exc})") from exc


def evaluate(p: PeriodicPotential, x):
    """Evaluate a closed-form potential at arbitrary points."""
    x = np.asarray(x, dtype=float)
    if p.kind == "one-minus-cos":
        return p.scale * (1.0 - np.cos(x))
    if p.kind == "zero":
        return np.zeros_like(x)
    # tables: trigonometric interpolation through the FFT coefficients
    s = np.asarray(p.samples)
    m = s.size
    c = np.fft.rfft(s) / m
    k = np.arange(c.size)
    w = np.full(c.size, 2.0)
    w[0] = 1.0
    if m % 2 == 0:
        w[-1] = 1.0
    phase = np.exp(1j * np.multiply.outer(x, k))
    return p.scale * np.real(phase @ (w * c))


def sample_potential(p: PeriodicPotential, n: int) -> np.ndarray:
    """W at x_j = 2 pi j / n, j = 0..n-1."""
    if n < 4:
        raise InvalidPotentialError("need n >= 4 samples")
    if p.kind == "table":
        s = np.asarray(p.samples)
        out = s.copy() if s.size == n else resample(s, n)
        out = p.scale * out
    else:
        out = evaluate(p, TWO_PI * np.arange(n) / n)
    if not np.all(np.isfinite(out)):
        raise InvalidPotentialError("non-finite value while sampling potential")
    return out


def check_evenness(p: PeriodicPotential, n: int = 256):
    """Return (is_even, max |W(x_j) - W(2pi - x_j)|).

    Tables are checked on their own nodes, closed forms on an n-point grid.
    """
    s = np.asarray(p.samples) * p.scale if p.kind == "table" else sample_potential(p, n)
    mirror = np.roll(s[::-1], 1)  # index j -> (-j) mod m
    asym = float(np.max(np.abs(s - mirror)))
    return asym <= EVEN_TOL, asym
