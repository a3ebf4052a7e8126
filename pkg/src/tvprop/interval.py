"""Axis-aligned boxes and vectorized interval arithmetic.

Every interval operation widens its result outward by a relative slack of
``ROUNDING_SLACK`` times the largest magnitude involved in the operation.
That stands in for directed rounding and keeps enclosures sound under
floating-point evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tvprop.errors import ParameterError

ROUNDING_SLACK = 1e-12
_TINY = 1e-300
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned hyper-rectangle ``[lo_1, hi_1] x ... x [lo_d, hi_d]``.

    Bounds may be infinite so that half-spaces and the whole space can be
    expressed for probability queries; partition and enclosure code requires
    finite boxes (see :meth:`require_finite`).
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ParameterError(f"box bounds have different lengths: {lo.size} vs {hi.size}")
        if lo.size == 0:
            raise ParameterError("box must have at least one axis")
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise ParameterError("box bounds must not be NaN")
        if (lo > hi).any():
            bad = int(np.argmax(lo > hi))
            raise ParameterError(f"malformed box: lo[{bad}]={lo[bad]} > hi[{bad}]={hi[bad]}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def whole(cls, dim: int) -> Box:
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def around(cls, center: Sequence[float], half_widths) -> Box:
        c = np.asarray(center, dtype=float)
        w = np.broadcast_to(np.asarray(half_widths, dtype=float), c.shape)
        return cls(c - w, c + w)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.lo).all() and np.isfinite(self.hi).all())

    def require_finite(self) -> Box:
        if not self.is_finite():
            raise ParameterError("box must be bounded on every axis")
        return self

    def contains(self, x) -> np.ndarray:
        """Boolean mask of the points of ``x`` (shape ``(..., d)``) lying in the closed box."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def contains_box(self, other: Box) -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def scaled(self, factor: float) -> Box:
        """Box with the same center and every width multiplied by ``factor``."""
        c = self.center
        half = 0.5 * self.widths * factor
        return Box(c - half, c + half)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self) -> str:
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def _widen(lo, hi, scale):
    pad = ROUNDING_SLACK * scale + _TINY
    return lo - pad, hi + pad


def _mag(*arrays):
    out = np.abs(arrays[0])
    for a in arrays[1:]:
        out = np.maximum(out, np.abs(a))
    return out


class IntervalArray:
    """Elementwise intervals ``[lo, hi]`` over numpy arrays of matching shape.

    Supports the handful of operations the benchmark dynamics need:
    addition, subtraction, multiplication, integer powers, cos and sin.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        self.lo, self.hi = np.broadcast_arrays(lo, hi)

    @classmethod
    def from_box(cls, box: Box) -> IntervalArray:
        return cls(box.lo.copy(), box.hi.copy())

    @property
    def shape(self):
        return self.lo.shape

    def __getitem__(self, idx) -> IntervalArray:
        return IntervalArray(self.lo[idx], self.hi[idx])

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x) -> np.ndarray:
        return (x >= self.lo) & (x <= self.hi)

    @staticmethod
    def _coerce(other) -> IntervalArray:
        if isinstance(other, IntervalArray):
            return other
        return IntervalArray(other, other)

    def __add__(self, other) -> IntervalArray:
        o = self._coerce(other)
        lo, hi = self.lo + o.lo, self.hi + o.hi
        return IntervalArray(*_widen(lo, hi, _mag(self.lo, self.hi, o.lo, o.hi, lo, hi)))

    __radd__ = __add__

    def __neg__(self) -> IntervalArray:
        return IntervalArray(-self.hi, -self.lo)

    def __sub__(self, other) -> IntervalArray:
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> IntervalArray:
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> IntervalArray:
        if not isinstance(other, IntervalArray):
            c = np.asarray(other, dtype=float)
            a, b = self.lo * c, self.hi * c
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            return IntervalArray(*_widen(lo, hi, _mag(lo, hi)))
        p = np.stack([self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi])
        lo, hi = p.min(axis=0), p.max(axis=0)
        return IntervalArray(*_widen(lo, hi, _mag(lo, hi)))

    __rmul__ = __mul__

    def square(self) -> IntervalArray:
        a, b = self.lo * self.lo, self.hi * self.hi
        straddles = (self.lo <= 0.0) & (self.hi >= 0.0)
        lo = np.where(straddles, 0.0, np.minimum(a, b))
        hi = np.maximum(a, b)
        lo, hi = _widen(lo, hi, hi)
        return IntervalArray(np.where(straddles, 0.0, np.maximum(lo, 0.0)), hi)

    def __pow__(self, n: int) -> IntervalArray:
        n = int(n)
        if n < 0:
            raise ParameterError("negative interval powers are not supported")
        if n == 0:
            return IntervalArray(np.ones_like(self.lo))
        if n == 1:
            return IntervalArray(self.lo.copy(), self.hi.copy())
        if n % 2 == 0:
            base = self.square()
            return base if n == 2 else base ** (n // 2)
        a, b = self.lo ** n, self.hi ** n
        return IntervalArray(*_widen(a, b, _mag(a, b)))

    def cos(self) -> IntervalArray:
        """Exact range of cosine, found by locating extrema inside each interval."""
        a, b = self.lo, self.hi
        ca, cb = np.cos(a), np.cos(b)
        lo, hi = np.minimum(ca, cb), np.maximum(ca, cb)
        full = (b - a) >= _TWO_PI
        has_max = np.ceil(a / _TWO_PI) <= np.floor(b / _TWO_PI)
        has_min = np.ceil((a - np.pi) / _TWO_PI) <= np.floor((b - np.pi) / _TWO_PI)
        hi = np.where(full | has_max, 1.0, hi)
        lo = np.where(full | has_min, -1.0, lo)
        # endpoints within rounding distance of an extremum are covered by the slack
        lo, hi = _widen(lo, hi, np.maximum(_mag(lo, hi), ROUNDING_SLACK * _mag(a, b)))
        return IntervalArray(np.maximum(lo, -1.0), np.minimum(hi, 1.0))

    def sin(self) -> IntervalArray:
        return (self - np.pi / 2).cos()

    def __repr__(self) -> str:
        return f"IntervalArray(lo={self.lo!r}, hi={self.hi!r})"
