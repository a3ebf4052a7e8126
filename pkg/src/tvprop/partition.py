"""Partitions of the high-probability region into boxes.

A :class:`Grid` stores its regions as parallel arrays (bounds, weights,
cached TV contributions) and remembers the mixture its weights were computed
from, so :func:`refine` can weigh new children without extra arguments.
Grids are immutable; refinement returns a new grid.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from tvprop.distributions import (
    GaussianKernel,
    MixtureDistribution,
    UniformKernel,
    mixture_mass_in_box,
    mixture_masses,
)
from tvprop.errors import ConfigurationError, HighProbRegionError, ParameterError, StateError
from tvprop.interval import Box

MIN_WIDTH = 1e-7
EXPANSION_FACTOR = 1.2
MAX_EXPANSIONS = 60


@dataclass(frozen=True)
class Region:
    box: Box
    representative: np.ndarray
    weight: float
    contribution: Optional[float] = None


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Disjoint boxes ``[lo_k, hi_k]`` tiling ``outer``, with their mixture weights.

    ``contributions`` holds NaN for regions whose TV contribution has not
    been evaluated yet.
    """

    lo: np.ndarray
    hi: np.ndarray
    weights: np.ndarray
    outer: Box
    contributions: Optional[np.ndarray] = None
    mixture: Optional[MixtureDistribution] = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = np.atleast_2d(self.lo), np.atleast_2d(self.hi)
        if lo.shape != hi.shape or lo.shape[1] != self.outer.dim:
            raise ParameterError("region bounds do not match the outer box dimension")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (lo.shape[0],):
            raise ParameterError("one weight per region is required")
        c = np.full(w.shape, np.nan) if self.contributions is None else np.asarray(self.contributions, dtype=float)
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "contributions", _frozen(c))

    @property
    def dim(self) -> int:
        return self.outer.dim

    @property
    def n_regions(self) -> int:
        return self.weights.size

    def __len__(self) -> int:
        return self.n_regions

    @property
    def representatives(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def remainder_mass(self) -> float:
        """Mixture mass not assigned to any region (the part outside ``outer``)."""
        return max(0.0, 1.0 - float(np.sum(self.weights)))

    @property
    def has_contributions(self) -> bool:
        return not np.isnan(self.contributions).any()

    @property
    def regions(self) -> list[Region]:
        reps = self.representatives
        out = []
        for k in range(self.n_regions):
            c = self.contributions[k]
            out.append(Region(Box(self.lo[k], self.hi[k]), reps[k], float(self.weights[k]), None if np.isnan(c) else float(c)))
        return out

    def volumes(self) -> np.ndarray:
        return np.prod(self.hi - self.lo, axis=1)

    def with_contributions(self, contributions) -> Grid:
        return Grid(self.lo, self.hi, self.weights, self.outer, contributions, self.mixture)


def _normal_quantile_upper(p: float) -> float:
    """``z`` with ``P(N(0,1) > z) = p``."""
    return float(-special.ndtri(p))


def identify_high_prob_region(mix: MixtureDistribution, eps: float) -> Box:
    """Box holding at least ``1 - eps`` of the mixture's mass.

    Starts from the bounding box of the (positively weighted) component
    centers, padded per axis by ``z`` kernel standard deviations where
    ``2 d Phi(-z) = eps`` (a union bound over axes), or by the full support
    for uniform kernels. The mass is then checked exactly and the box grown
    by ``EXPANSION_FACTOR`` until the check passes.
    """
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    centers = mix.all_centers()[mix.all_weights() > 0]
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    kernel = mix.kernel
    if isinstance(kernel, GaussianKernel):
        pad = _normal_quantile_upper(eps / (2 * mix.dim)) * kernel.scales
    elif isinstance(kernel, UniformKernel):
        pad = kernel.half_widths.copy()
    else:
        raise ConfigurationError(f"cannot locate probability mass for kernel family {kernel.family!r}")
    box = Box(lo - pad, hi + pad)
    target = 1.0 - eps
    mass = mixture_mass_in_box(mix, box)
    for _ in range(MAX_EXPANSIONS):
        if mass >= target:
            return box
        box = box.scaled(EXPANSION_FACTOR)
        mass = mixture_mass_in_box(mix, box)
    if mass >= target:
        return box
    raise HighProbRegionError(f"box reached only mass {mass!r} < {target!r}", achieved_mass=mass)


def _split_widest(lo: np.ndarray, hi: np.ndarray):
    axis = np.argmax(hi - lo, axis=1)  # first maximum on ties
    rows = np.arange(lo.shape[0])
    mid = 0.5 * (lo[rows, axis] + hi[rows, axis])
    left_hi = hi.copy()
    left_hi[rows, axis] = mid
    right_lo = lo.copy()
    right_lo[rows, axis] = mid
    new_lo = np.empty((2 * lo.shape[0], lo.shape[1]))
    new_hi = np.empty_like(new_lo)
    new_lo[0::2], new_hi[0::2] = lo, left_hi
    new_lo[1::2], new_hi[1::2] = right_lo, hi
    return new_lo, new_hi


def build_grid(outer: Box, mix: MixtureDistribution, p_thr: float, min_width: float = MIN_WIDTH) -> Grid:
    """Mass-balanced partition of ``outer``.

    Cells are halved along their widest axis until each holds mixture mass
    at most ``p_thr`` or is no wider than ``min_width`` on every axis.
    """
    if not 0.0 < p_thr <= 1.0:
        raise ParameterError(f"p_thr must lie in (0, 1], got {p_thr}")
    outer.require_finite()
    act_lo, act_hi = outer.lo[None, :].copy(), outer.hi[None, :].copy()
    leaves_lo, leaves_hi, leaves_w = [], [], []
    while act_lo.shape[0]:
        masses = mixture_masses(mix, act_lo, act_hi)
        split = (masses > p_thr) & ((act_hi - act_lo).max(axis=1) > min_width)
        leaves_lo.append(act_lo[~split])
        leaves_hi.append(act_hi[~split])
        leaves_w.append(masses[~split])
        act_lo, act_hi = _split_widest(act_lo[split], act_hi[split])
    return Grid(np.vstack(leaves_lo), np.vstack(leaves_hi), np.concatenate(leaves_w), outer, mixture=mix)


def _bisect_all_axes(lo: np.ndarray, hi: np.ndarray):
    """The ``2^d`` children of each box, children of one parent kept contiguous."""
    n, d = lo.shape
    mid = 0.5 * (lo + hi)
    bits = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1  # (2^d, d)
    c_lo = np.where(bits[None], mid[:, None, :], lo[:, None, :])
    c_hi = np.where(bits[None], hi[:, None, :], mid[:, None, :])
    return c_lo.reshape(n * 2**d, d), c_hi.reshape(n * 2**d, d)


def refine(grid: Grid, gamma: float) -> Grid:
    """Split every region whose cached contribution exceeds ``gamma`` into ``2^d`` children.

    Children get fresh weights from the grid's mixture and no contribution;
    all other regions are carried over unchanged.
    """
    if gamma < 0:
        raise ParameterError("gamma must be nonnegative")
    if not grid.has_contributions:
        raise StateError("refine needs every region's TV contribution; evaluate the bound first")
    if grid.mixture is None:
        raise StateError("grid does not carry the mixture needed to weigh new regions")
    split = grid.contributions > gamma
    if not split.any():
        return grid
    d = grid.dim
    c_lo, c_hi = _bisect_all_axes(grid.lo[split], grid.hi[split])
    c_w = mixture_masses(grid.mixture, c_lo, c_hi)
    counts = np.where(split, 2**d, 1)
    total = int(counts.sum())
    lo = np.empty((total, d))
    hi = np.empty((total, d))
    w = np.empty(total)
    contrib = np.full(total, np.nan)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    keep_pos = start[~split]
    lo[keep_pos], hi[keep_pos] = grid.lo[~split], grid.hi[~split]
    w[keep_pos] = grid.weights[~split]
    contrib[keep_pos] = grid.contributions[~split]
    child_pos = (start[split][:, None] + np.arange(2**d)[None, :]).reshape(-1)
    lo[child_pos], hi[child_pos], w[child_pos] = c_lo, c_hi, c_w
    return Grid(lo, hi, w, grid.outer, contrib, grid.mixture)


def equidistant_grid(outer: Box, n_per_axis: Sequence[int], mix: MixtureDistribution) -> Grid:
    """``prod_i n_i`` congruent boxes tiling ``outer``, weighted by ``mix``."""
    outer.require_finite()
    n = np.asarray(n_per_axis, dtype=int).reshape(-1)
    if n.size != outer.dim or (n < 1).any():
        raise ParameterError(f"need a positive cell count per axis, got {n_per_axis!r}")
    axes = [np.linspace(outer.lo[i], outer.hi[i], n[i] + 1) for i in range(outer.dim)]
    axes = [np.concatenate([[outer.lo[i]], a[1:-1], [outer.hi[i]]]) for i, a in enumerate(axes)]
    idx = np.stack(np.meshgrid(*[np.arange(k) for k in n], indexing="ij"), -1).reshape(-1, outer.dim)
    lo = np.stack([axes[i][idx[:, i]] for i in range(outer.dim)], axis=1)
    hi = np.stack([axes[i][idx[:, i] + 1] for i in range(outer.dim)], axis=1)
    return Grid(lo, hi, mixture_masses(mix, lo, hi), outer, mixture=mix)


def matched_cell_counts(outer: Box, target: int, scales: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-axis counts whose product is as close as possible to ``target``.

    Cells are kept roughly square in units of ``scales`` (defaults to the
    outer box widths, i.e. equal counts per axis).
    """
    d = outer.dim
    target = max(1, int(target))
    rel = np.ones(d) if scales is None else outer.widths / np.asarray(scales, dtype=float)
    rel = rel / np.prod(rel) ** (1.0 / d)
    ideal = rel * target ** (1.0 / d)
    best, best_err = None, np.inf
    # search a neighbourhood of the ideal counts on the first d-1 axes, solve the last
    ranges = [range(max(1, int(np.floor(x * 0.8))), int(np.ceil(x * 1.25)) + 2) for x in ideal[:-1]]
    for head in np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, d - 1) if d > 1 else [np.empty(0, int)]:
        rest = target / max(1, int(np.prod(head)))
        for last in {max(1, int(np.floor(rest))), max(1, int(np.ceil(rest)))}:
            counts = np.append(head, last).astype(int)
            total = int(np.prod(counts))
            err = abs(total - target) / target + 1e-3 * np.abs(np.log(counts / ideal)).sum()
            if err < best_err:
                best, best_err = counts, err
    return best


# -- CSV export ---------------------------------------------------------------


def grid_csv_header(dim: int) -> list[str]:
    return (
        [f"lo_{i}" for i in range(dim)]
        + [f"hi_{i}" for i in range(dim)]
        + [f"rep_{i}" for i in range(dim)]
        + ["weight", "contribution"]
    )


def write_grid_csv(grid: Grid, fh: io.TextIOBase) -> None:
    """One row per region; floats are written with ``repr`` so they round-trip exactly."""
    writer = csv.writer(fh)
    writer.writerow(grid_csv_header(grid.dim))
    reps = grid.representatives
    for k in range(grid.n_regions):
        row = [*grid.lo[k], *grid.hi[k], *reps[k], grid.weights[k], grid.contributions[k]]
        writer.writerow([repr(float(v)) for v in row])


def read_grid_csv(fh: io.TextIOBase, outer: Optional[Box] = None) -> Grid:
    reader = csv.reader(fh)
    header = next(reader)
    d = (len(header) - 2) // 3
    rows = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, 3 * d + 2)
    lo, hi = rows[:, :d], rows[:, d : 2 * d]
    if outer is None:
        outer = Box(lo.min(axis=0), hi.max(axis=0))
    return Grid(lo, hi, rows[:, 3 * d], outer, rows[:, 3 * d + 1])
