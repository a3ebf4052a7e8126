"""Transition kernels, kernel-to-kernel TV distances, and finite mixtures.

Three kernel families are supported:

* ``GaussianKernel`` -- additive ``N(0, diag(variances))`` noise,
* ``UniformKernel`` -- additive zero-mean noise uniform on ``prod_i [-w_i, w_i]``,
* ``KLKernel`` -- a user kernel known only through an upper bound on the KL
  divergence between its translates; it can be bounded but not sampled,
  integrated or evaluated.

A ``MixtureDistribution`` holds components that share one kernel and differ
only in their centers, plus an optional *outer* component carrying the mass
that was not partitioned at the previous step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from tvprop import _masskernel
from tvprop.errors import ConfigurationError, ParameterError
from tvprop.interval import Box

# Absolute error budget for one evaluation of the standard normal CDF.
PHI_ABS_ERROR = 1e-12

_SQRT2 = math.sqrt(2.0)
_INV_2SQRT2 = 1.0 / (2.0 * math.sqrt(2.0))


def normal_cdf(x):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def _positive_vector(values, name) -> np.ndarray:
    v = np.array(values, dtype=float).reshape(-1)
    if v.size == 0 or not np.isfinite(v).all() or (v <= 0).any():
        raise ParameterError(f"{name} must be finite and strictly positive, got {values!r}")
    v.flags.writeable = False
    return v


def kernel_tv_gaussian(delta, variances):
    """TV distance between ``N(m, S)`` and ``N(m + delta, S)`` for diagonal ``S``.

    Equals ``erf(h)`` with ``h = sqrt(sum_i delta_i**2 / variances_i) / (2 sqrt 2)``.
    Leading axes of ``delta`` are treated as a batch.
    """
    var = _positive_vector(variances, "variances")
    delta = np.asarray(delta, dtype=float)
    if delta.shape[-1] != var.size:
        raise ParameterError(f"delta has {delta.shape[-1]} axes, variances {var.size}")
    if not np.isfinite(delta).all():
        raise ParameterError("delta must be finite")
    h = np.sqrt(np.sum(delta * delta / var, axis=-1)) * _INV_2SQRT2
    out = special.erf(h)
    return float(out) if np.ndim(out) == 0 else out


def kernel_tv_uniform(delta, half_widths):
    """TV distance between two translates of the uniform box ``prod_i [-w_i, w_i]``.

    One minus the overlap fraction ``prod_i max(0, 1 - |delta_i| / (2 w_i))``.
    """
    w = _positive_vector(half_widths, "half_widths")
    delta = np.asarray(delta, dtype=float)
    if delta.shape[-1] != w.size:
        raise ParameterError(f"delta has {delta.shape[-1]} axes, half_widths {w.size}")
    overlap = np.prod(np.maximum(0.0, 1.0 - np.abs(delta) / (2.0 * w)), axis=-1)
    out = 1.0 - overlap
    return float(out) if np.ndim(out) == 0 else out


def kernel_tv_pinsker(kl):
    """Pinsker upper bound ``min(1, sqrt(kl / 2))`` on a TV distance."""
    kl_arr = np.asarray(kl, dtype=float)
    if np.isnan(kl_arr).any() or (kl_arr < 0).any():
        raise ParameterError(f"KL divergence must be nonnegative, got {kl!r}")
    out = np.minimum(1.0, np.sqrt(kl_arr / 2.0))
    return float(out) if np.ndim(out) == 0 else out


def gaussian_kl(delta, variances):
    """KL divergence between two diagonal Gaussians with equal covariance."""
    var = _positive_vector(variances, "variances")
    delta = np.asarray(delta, dtype=float)
    return 0.5 * np.sum(delta * delta / var, axis=-1)


# -- kernels -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    variances: np.ndarray
    family = "gaussian_diagonal"

    def __post_init__(self):
        object.__setattr__(self, "variances", _positive_vector(self.variances, "variances"))

    @property
    def dim(self) -> int:
        return self.variances.size

    @property
    def scales(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def axis_cdf(self, axis, x, center):
        return normal_cdf((x - center) / math.sqrt(self.variances[axis]))

    def tv(self, delta):
        return kernel_tv_gaussian(delta, self.variances)

    def pdf(self, y, centers) -> np.ndarray:
        """Densities ``p(y_n | c_k)`` as an ``(N, K)`` array."""
        z = (y[:, None, :] - centers[None, :, :]) / self.scales
        norm = np.prod(np.sqrt(2.0 * np.pi * self.variances))
        return np.exp(-0.5 * np.sum(z * z, axis=-1)) / norm

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) * self.scales

    def params(self) -> dict:
        return {"family": self.family, "variances": self.variances.tolist()}


@dataclass(frozen=True, eq=False)
class UniformKernel:
    half_widths: np.ndarray
    family = "uniform_box"

    def __post_init__(self):
        object.__setattr__(self, "half_widths", _positive_vector(self.half_widths, "half_widths"))

    @property
    def dim(self) -> int:
        return self.half_widths.size

    def axis_cdf(self, axis, x, center):
        w = self.half_widths[axis]
        return np.clip((x - center + w) / (2.0 * w), 0.0, 1.0)

    def tv(self, delta):
        return kernel_tv_uniform(delta, self.half_widths)

    def pdf(self, y, centers) -> np.ndarray:
        inside = np.all(np.abs(y[:, None, :] - centers[None, :, :]) <= self.half_widths, axis=-1)
        return inside / np.prod(2.0 * self.half_widths)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, (n, self.dim)) * self.half_widths

    def params(self) -> dict:
        return {"family": self.family, "half_widths": self.half_widths.tolist()}


@dataclass(frozen=True, eq=False)
class KLKernel:
    """Kernel known only through ``kl_bound(lo, hi, reps)``.

    ``kl_bound`` receives arrays of box bounds and representative points
    (each ``(M, d)``) and must return, per box, an upper bound on
    ``KL(T_x || T_rep)`` over all ``x`` in the box.
    """

    dim: int
    kl_bound: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    family = "generic_kl"

    def _unsupported(self, what):
        raise ConfigurationError(f"generic-KL kernels support TV bounds only, not {what}")

    def axis_cdf(self, axis, x, center):
        self._unsupported("probability masses")

    def tv(self, delta):
        self._unsupported("closed-form TV distances")

    def pdf(self, y, centers):
        self._unsupported("densities")

    def sample(self, rng, n):
        self._unsupported("sampling")

    def params(self) -> dict:
        return {"family": self.family, "dim": self.dim}


Kernel = GaussianKernel | UniformKernel | KLKernel


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Additive noise family, optionally with one parameter vector per time step.

    ``params`` has shape ``(d,)`` for time-invariant noise or ``(T, d)`` for
    per-step Gaussian variances.
    """

    variant: str
    params: Optional[np.ndarray] = None
    kl_bound: Optional[Callable] = field(default=None, repr=False)
    dim: Optional[int] = None

    VARIANTS = ("gaussian_diagonal", "uniform_box", "generic_kl")

    def __post_init__(self):
        if self.variant not in self.VARIANTS:
            raise ConfigurationError(f"unknown noise variant {self.variant!r}")
        if self.variant == "generic_kl":
            if self.kl_bound is None or self.dim is None:
                raise ConfigurationError("generic_kl noise needs kl_bound and dim")
            return
        p = np.array(self.params, dtype=float)
        if p.ndim not in (1, 2) or p.size == 0:
            raise ParameterError("noise parameters must be a vector or a (T, d) array")
        if p.ndim == 2 and self.variant != "gaussian_diagonal":
            raise ParameterError("per-step parameters are only supported for Gaussian noise")
        if not np.isfinite(p).all() or (p <= 0).any():
            raise ParameterError(f"noise parameters must be strictly positive, got {p.tolist()}")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "dim", p.shape[-1])

    @classmethod
    def gaussian(cls, variances) -> NoiseSpec:
        """Diagonal Gaussian noise; a full covariance matrix is accepted only if diagonal."""
        v = np.asarray(variances, dtype=float)
        if v.ndim == 2 and v.shape[0] == v.shape[1] and v.shape[0] > 1:
            off = v - np.diag(np.diag(v))
            if np.any(off != 0.0):
                raise ConfigurationError(
                    "full noise covariance is not supported; box masses need a diagonal covariance"
                )
            v = np.diag(v)
        return cls("gaussian_diagonal", v)

    @classmethod
    def gaussian_per_step(cls, variances) -> NoiseSpec:
        v = np.asarray(variances, dtype=float)
        if v.ndim != 2:
            raise ParameterError("per-step variances must have shape (T, d)")
        return cls("gaussian_diagonal", v)

    @classmethod
    def uniform(cls, half_widths) -> NoiseSpec:
        return cls("uniform_box", half_widths)

    @classmethod
    def generic_kl(cls, dim: int, kl_bound: Callable) -> NoiseSpec:
        return cls("generic_kl", kl_bound=kl_bound, dim=dim)

    @property
    def per_step(self) -> bool:
        return self.params is not None and self.params.ndim == 2

    @property
    def n_steps(self) -> Optional[int]:
        return self.params.shape[0] if self.per_step else None

    def kernel(self, step: int = 0) -> Kernel:
        """Kernel of the transition from time ``step`` to ``step + 1``."""
        if self.variant == "generic_kl":
            return KLKernel(self.dim, self.kl_bound)
        if self.variant == "uniform_box":
            return UniformKernel(self.params)
        if self.per_step:
            if not 0 <= step < self.params.shape[0]:
                raise ParameterError(f"no noise variances for step {step}")
            return GaussianKernel(self.params[step])
        return GaussianKernel(self.params)

    def to_dict(self) -> dict:
        if self.variant == "generic_kl":
            return {"family": self.variant, "dim": self.dim}
        key = "variances" if self.variant == "gaussian_diagonal" else "half_widths"
        return {"family": self.variant, key: self.params.tolist()}


@dataclass(frozen=True)
class KernelComponent:
    center: np.ndarray
    kernel: Kernel

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        if not np.isfinite(c).all():
            raise ParameterError("component center must be finite")
        object.__setattr__(self, "center", c)


def component_mass_in_box(comp: KernelComponent, box: Box) -> float:
    """Probability that a single kernel component assigns to ``box``."""
    if not isinstance(box, Box):
        box = Box(*box)
    if box.dim != comp.center.size:
        raise ParameterError("box and component dimensions differ")
    p = 1.0
    for i in range(box.dim):
        p *= float(comp.kernel.axis_cdf(i, box.hi[i], comp.center[i]) - comp.kernel.axis_cdf(i, box.lo[i], comp.center[i]))
    return min(1.0, max(0.0, p))


# -- mixtures ----------------------------------------------------------------

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MixtureDistribution:
    """Finite mixture ``sum_k w_k K(. - c_k) + w_out K(. - c_out)``.

    ``centers`` has shape ``(K, d)``. The outer component is present when
    ``outer_center`` is given; ``outer_weight`` is its probability.
    """

    centers: np.ndarray
    weights: np.ndarray
    kernel: Kernel
    time_index: int = 0
    outer_center: Optional[np.ndarray] = None
    outer_weight: float = 0.0

    def __post_init__(self):
        c = np.array(self.centers, dtype=float)
        if c.ndim == 1:
            c = c.reshape(1, -1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if c.shape[0] != w.size:
            raise ParameterError(f"{c.shape[0]} centers but {w.size} weights")
        if not np.isfinite(c).all():
            raise ParameterError("component centers must be finite")
        if (w < 0).any() or (w > 1).any() or not np.isfinite(w).all():
            raise ParameterError("weights must lie in [0, 1]")
        ow = float(self.outer_weight)
        if not 0.0 <= ow <= 1.0:
            raise ParameterError("outer weight must lie in [0, 1]")
        oc = self.outer_center
        if oc is not None:
            oc = np.array(oc, dtype=float).reshape(-1)
            if oc.size != c.shape[1] or not np.isfinite(oc).all():
                raise ParameterError("outer center must be a finite vector of the state dimension")
            oc.flags.writeable = False
        elif ow > 0:
            raise ParameterError("an outer weight needs an outer center")
        total = float(w.sum()) + ow
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ParameterError(f"mixture weights sum to {total!r}, expected 1")
        if getattr(self.kernel, "dim", c.shape[1]) != c.shape[1]:
            raise ParameterError("kernel and centers have different dimensions")
        c.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "outer_center", oc)
        object.__setattr__(self, "outer_weight", ow)

    @classmethod
    def single(cls, center, kernel: Kernel, time_index: int = 0) -> MixtureDistribution:
        return cls(np.asarray(center, dtype=float).reshape(1, -1), [1.0], kernel, time_index)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def size(self) -> int:
        """Number of components, counting the outer one when present."""
        return self.centers.shape[0] + (self.outer_center is not None)

    def all_centers(self) -> np.ndarray:
        if self.outer_center is None:
            return self.centers
        return np.vstack([self.centers, self.outer_center[None, :]])

    def all_weights(self) -> np.ndarray:
        if self.outer_center is None:
            return self.weights
        return np.append(self.weights, self.outer_weight)

    @property
    def components(self) -> list[KernelComponent]:
        return [KernelComponent(c, self.kernel) for c in self.all_centers()]

    def mean(self) -> np.ndarray:
        w = self.all_weights()
        return w @ self.all_centers() / w.sum()


def mixture_masses(mix: MixtureDistribution, lo, hi) -> np.ndarray:
    """Mixture probability of each box ``[lo_m, hi_m]``; ``lo``/``hi`` are ``(M, d)``."""
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or lo.shape[1] != mix.dim:
        raise ParameterError(f"box arrays of shape {lo.shape}/{hi.shape} do not match dimension {mix.dim}")
    if (lo > hi).any():
        raise ParameterError("malformed box: lo > hi")
    masses = _masskernel.box_masses(mix.kernel.axis_cdf, mix.all_centers(), mix.all_weights(), lo, hi)
    return np.clip(masses, 0.0, 1.0)


def mixture_mass_in_box(mix: MixtureDistribution, box: Box) -> float:
    """``P_hat(box)`` for a single box."""
    if not isinstance(box, Box):
        box = Box(*box)
    return float(mixture_masses(mix, box.lo[None, :], box.hi[None, :])[0])


def mass_error_bound(n_boxes: int, dim: int) -> float:
    """Worst-case total absolute error of ``n_boxes`` computed box masses.

    Each mass is a weighted sum of products of ``dim`` CDF differences, each
    difference off by at most ``2 * PHI_ABS_ERROR``.
    """
    return n_boxes * 2.0 * dim * PHI_ABS_ERROR


def mixture_density(mix: MixtureDistribution, y, chunk: int = 4096) -> np.ndarray | float:
    """Mixture density at ``y`` (a point or an ``(N, d)`` batch)."""
    y_arr = np.asarray(y, dtype=float)
    single = y_arr.ndim == 1
    y2 = np.atleast_2d(y_arr)
    centers, weights = mix.all_centers(), mix.all_weights()
    keep = weights > 0
    centers, weights = centers[keep], weights[keep]
    out = np.zeros(y2.shape[0])
    for start in range(0, weights.size, chunk):
        sl = slice(start, start + chunk)
        out += mix.kernel.pdf(y2, centers[sl]) @ weights[sl]
    return float(out[0]) if single else out


def sample_mixture(mix: MixtureDistribution, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Draw ``n`` points: a component by weight, then kernel noise around its center."""
    if n < 0:
        raise ParameterError("sample count must be nonnegative")
    if n == 0:
        return np.empty((0, mix.dim))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = mix.all_weights()
    idx = rng.choice(w.size, size=n, p=w / w.sum())
    return mix.all_centers()[idx] + mix.kernel.sample(rng, n)
