"""System models ``x_{t+1} = f(x_t) + eps_t`` and their interval extensions.

Each model provides a point map ``f`` on ``(N, d)`` arrays and a sound
enclosure of ``f`` over a batch of boxes. Three dynamics classes cover the
benchmarks: linear maps, polynomials given as monomial lists, and a
constant-velocity Dubins car.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tvprop.distributions import (
    GaussianKernel,
    MixtureDistribution,
    NoiseSpec,
    UniformKernel,
)
from tvprop.errors import ConfigurationError, ParameterError
from tvprop.interval import ROUNDING_SLACK, Box, IntervalArray


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Base class: dimension, noise, initial distribution and horizon.

    Subclasses implement :meth:`f` and :meth:`enclose`.
    """

    dim: int
    noise: NoiseSpec
    initial: MixtureDistribution
    horizon: int
    name: str = field(default="custom", kw_only=True)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("state dimension must be positive")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be a positive integer")
        if self.noise.dim != self.dim:
            raise ConfigurationError(f"noise has dimension {self.noise.dim}, system {self.dim}")
        if self.initial.dim != self.dim:
            raise ConfigurationError(f"initial distribution has dimension {self.initial.dim}, system {self.dim}")
        if self.noise.per_step and self.noise.n_steps != self.horizon:
            raise ConfigurationError(
                f"{self.noise.n_steps} per-step noise variances given for horizon {self.horizon}"
            )

    def f(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def f_interval(self, x: IntervalArray) -> IntervalArray:
        raise NotImplementedError

    def enclose(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bounds ``(lo', hi')`` with ``f(x)`` in ``[lo'_m, hi'_m]`` for every ``x`` in box ``m``."""
        out = self.f_interval(IntervalArray(lo, hi))
        return out.lo, out.hi

    def kernel(self, step: int) -> GaussianKernel | UniformKernel:
        return self.noise.kernel(step)

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "horizon": self.horizon, "noise": self.noise.to_dict()}


@dataclass(frozen=True, eq=False)
class LinearSystem(SystemModel):
    A: np.ndarray = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (self.dim, self.dim):
            raise ConfigurationError(f"matrix A must be {self.dim}x{self.dim}, got {A.shape}")
        A.flags.writeable = False
        object.__setattr__(self, "A", A)
        super().__post_init__()

    def f(self, x):
        return np.asarray(x, dtype=float) @ self.A.T

    def f_interval(self, x: IntervalArray) -> IntervalArray:
        # center-radius form gives the exact image box of a linear map
        c = 0.5 * (x.lo + x.hi)
        r = 0.5 * (x.hi - x.lo)
        absA = np.abs(self.A)
        mc = c @ self.A.T
        mr = r @ absA.T
        scale = np.abs(c) @ absA.T + mr
        pad = ROUNDING_SLACK * scale + 1e-300
        return IntervalArray(mc - mr - pad, mc + mr + pad)

    def describe(self) -> dict:
        return super().describe() | {"A": self.A.tolist()}


Monomial = tuple[float, tuple[int, ...]]


@dataclass(frozen=True, eq=False)
class PolynomialSystem(SystemModel):
    """Polynomial dynamics; ``terms[j]`` lists ``(coefficient, powers)`` monomials of ``f_j``."""

    terms: tuple = None

    def __post_init__(self):
        if self.terms is None or len(self.terms) != self.dim:
            raise ConfigurationError(f"need one monomial list per output ({self.dim})")
        clean = []
        for j, out in enumerate(self.terms):
            row = []
            for coef, powers in out:
                powers = tuple(int(p) for p in powers)
                if len(powers) != self.dim or min(powers) < 0:
                    raise ConfigurationError(f"bad monomial powers {powers} in output {j}")
                row.append((float(coef), powers))
            clean.append(tuple(row))
        object.__setattr__(self, "terms", tuple(clean))
        super().__post_init__()

    def f(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for j, row in enumerate(self.terms):
            for coef, powers in row:
                term = np.full(x.shape[:-1], coef)
                for i, p in enumerate(powers):
                    if p:
                        term = term * x[..., i] ** p
                out[..., j] += term
        return out

    def f_interval(self, x: IntervalArray) -> IntervalArray:
        cols = [x[..., i] for i in range(self.dim)]
        lo = np.zeros(x.shape)
        hi = np.zeros(x.shape)
        for j, row in enumerate(self.terms):
            acc = IntervalArray(np.zeros(x.shape[:-1]))
            for coef, powers in row:
                mono = None
                for i, p in enumerate(powers):
                    if p:
                        factor = cols[i] ** p
                        mono = factor if mono is None else mono * factor
                acc = acc + (IntervalArray(np.full(x.shape[:-1], coef)) if mono is None else mono * coef)
            lo[..., j], hi[..., j] = acc.lo, acc.hi
        return IntervalArray(lo, hi)

    def describe(self) -> dict:
        terms = [[{"coef": c, "powers": list(p)} for c, p in row] for row in self.terms]
        return super().describe() | {"terms": terms}


@dataclass(frozen=True, eq=False)
class DubinsSystem(SystemModel):
    """Constant-velocity Dubins car with state (x, y, heading); the heading is not wrapped."""

    velocity: float = 5.0
    dt: float = 0.3
    turn_rate: float = 2.0

    def f(self, x):
        x = np.asarray(x, dtype=float)
        hv = self.dt * self.velocity
        return np.stack(
            [
                x[..., 0] + hv * np.cos(x[..., 2]),
                x[..., 1] + hv * np.sin(x[..., 2]),
                x[..., 2] + self.dt * self.turn_rate,
            ],
            axis=-1,
        )

    def f_interval(self, x: IntervalArray) -> IntervalArray:
        hv = self.dt * self.velocity
        theta = x[..., 2]
        f0 = x[..., 0] + theta.cos() * hv
        f1 = x[..., 1] + theta.sin() * hv
        f2 = theta + self.dt * self.turn_rate
        return IntervalArray(np.stack([f0.lo, f1.lo, f2.lo], -1), np.stack([f0.hi, f1.hi, f2.hi], -1))

    def describe(self) -> dict:
        return super().describe() | {"velocity": self.velocity, "dt": self.dt, "turn_rate": self.turn_rate}


def eval_f(sys: SystemModel, x) -> np.ndarray:
    """``f(x)`` for a point or a batch of points."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.dim:
        raise ParameterError(f"state has {x.shape[-1]} coordinates, system expects {sys.dim}")
    if not np.isfinite(x).all():
        raise ParameterError("state must be finite")
    return sys.f(x)


def enclose_f(sys: SystemModel, box: Box) -> Box:
    """Box guaranteed to contain ``f(box)``."""
    if not isinstance(box, Box):
        box = Box(*box)
    box.require_finite()
    lo, hi = sys.enclose(box.lo[None, :], box.hi[None, :])
    return Box(lo[0], hi[0])


# -- benchmarks ----------------------------------------------------------------

BIMODAL_A = ((0.84, 0.10), (0.05, 0.72))
POLY_STEP = 0.05
BENCHMARKS = ("bimodal", "uniform_linear", "polynomial", "dubins")

# Variance used by the polynomial benchmark when no override is given.
POLYNOMIAL_DEFAULT_VARIANCE = 0.1


def polynomial_terms(h: float = POLY_STEP) -> tuple:
    return (
        ((1.0, (1, 0)), (1.25 * h, (0, 1))),
        (
            (1.4, (0, 1)),
            (0.3 * h * 0.25, (2, 0)),
            (-0.3 * h * 0.4, (1, 1)),
            (0.3 * h * 0.25, (0, 2)),
        ),
    )


def _variances(override, default: Sequence[float]) -> np.ndarray:
    if override is None:
        return np.asarray(default, dtype=float)
    v = np.asarray(override, dtype=float)
    return np.broadcast_to(v, (len(default),)).copy() if v.ndim == 0 else v


def make_benchmark(name: str, variance_override: Optional[float | Sequence[float]] = None) -> SystemModel:
    """One of the four reference systems with its reference constants.

    ``variance_override`` replaces the Gaussian noise variances (a scalar is
    broadcast to every axis); it is how the polynomial system's ``sigma^2``
    is selected.
    """
    if name == "bimodal":
        initial = MixtureDistribution([[6.0, 10.0], [8.0, 10.0]], [0.5, 0.5], GaussianKernel([0.005, 0.005]))
        noise = NoiseSpec.gaussian(_variances(variance_override, [0.03, 0.03]))
        return LinearSystem(2, noise, initial, 10, A=BIMODAL_A, name=name)
    if name == "uniform_linear":
        if variance_override is not None:
            raise ConfigurationError("the uniform benchmark has no variance to override")
        initial = MixtureDistribution.single([0.0, 0.0], UniformKernel([0.1, 0.1]))
        return LinearSystem(2, NoiseSpec.uniform([0.3, 0.3]), initial, 5, A=BIMODAL_A, name=name)
    if name == "polynomial":
        var = POLYNOMIAL_DEFAULT_VARIANCE if variance_override is None else variance_override
        initial = MixtureDistribution.single([1.0, 1.0], GaussianKernel([0.002, 0.002]))
        noise = NoiseSpec.gaussian(_variances(var, [1.0, 1.0]))
        return PolynomialSystem(2, noise, initial, 7, terms=polynomial_terms(), name=name)
    if name == "dubins":
        initial = MixtureDistribution.single([0.0, 0.0, 0.0], GaussianKernel([0.005, 0.005, 0.001]))
        noise = NoiseSpec.gaussian(_variances(variance_override, [0.06, 0.06, 0.01]))
        return DubinsSystem(3, noise, initial, 5, velocity=5.0, dt=0.3, turn_rate=1 / 0.5, name=name)
    raise ConfigurationError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
