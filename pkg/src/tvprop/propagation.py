"""Mixture propagation with a certified TV bound per step.

At every step the previous mixture is partitioned, each region is replaced
by the transition kernel at its center weighted by the region's mass, and
the TV increment
``sum_k max_{x in X_k} TV(T_x, T_{x_k}) * w_k + (mass outside the grid)``
is added to the ledger. Regions contributing more than ``gamma`` are split
until the accumulated bound meets the per-step target or the refinement cap
is reached.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import special

from tvprop.distributions import (
    GaussianKernel,
    KLKernel,
    MixtureDistribution,
    UniformKernel,
    kernel_tv_pinsker,
    kernel_tv_uniform,
    mass_error_bound,
)
from tvprop.errors import ConfigurationError, ParameterError
from tvprop.interval import ROUNDING_SLACK, Box
from tvprop.partition import (
    MIN_WIDTH,
    Grid,
    build_grid,
    equidistant_grid,
    identify_high_prob_region,
    matched_cell_counts,
    refine,
)
from tvprop.systems import SystemModel

_INV_2SQRT2 = 1.0 / (2.0 * math.sqrt(2.0))
_UP = 1.0 + 1e-12
# Increments are rounded up to this grid so ledger sums are exact in floating point.
_LEDGER_QUANTUM = 2.0**-50


@dataclass(frozen=True)
class PropagationConfig:
    """Parameters of one propagation run.

    ``threshold_offset`` selects the per-step refinement target: with 0 the
    bound produced at step ``t`` is compared against ``(t - 1) * delta / T``,
    with 1 against ``t * delta / T``.
    """

    delta: float
    horizon: int
    eps: float = 1e-4
    p_thr: float = 0.01
    gamma: float = 1e-6
    max_refinements: int = 8
    seed: int = 0
    threshold_offset: int = 0
    min_width: float = MIN_WIDTH

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError("delta must be positive")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be a positive integer")
        if not 0.0 < self.eps < 1.0:
            raise ConfigurationError("eps must lie in (0, 1)")
        if not 0.0 < self.p_thr < 1.0:
            raise ConfigurationError("p_thr must lie in (0, 1)")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be nonnegative")
        if self.max_refinements < 0:
            raise ConfigurationError("max_refinements must be nonnegative")
        if self.threshold_offset not in (0, 1):
            raise ConfigurationError("threshold_offset must be 0 or 1")
        if self.eps > self.delta / (10 * self.horizon):
            warnings.warn(
                f"eps={self.eps} is not small compared with delta/T={self.delta / self.horizon}",
                stacklevel=2,
            )

    def threshold(self, t: int) -> float:
        """Refinement target for the bound produced at step ``t``."""
        return (t - 1 + self.threshold_offset) * self.delta / self.horizon

    def budget(self, t: int) -> float:
        """Share of ``delta`` the bound at step ``t`` may use."""
        return t * self.delta / self.horizon


# Defaults per benchmark; delta is chosen so the default runs meet their budget.
BENCHMARK_SETTINGS = {
    "bimodal": dict(delta=0.1, eps=1e-5, p_thr=0.01, gamma=1e-7, max_refinements=5),
    "uniform_linear": dict(delta=0.05, eps=1e-5, p_thr=0.01, gamma=1e-7, max_refinements=5),
    "polynomial": dict(delta=0.1, eps=1e-5, p_thr=0.01, gamma=1e-7, max_refinements=5),
    "dubins": dict(delta=0.5, eps=1e-5, p_thr=0.001, gamma=1e-5, max_refinements=5),
}
# Budget small enough that every step refines up to the cap (the fixed-count table protocol).
TABLE_DELTA = 0.01


def benchmark_config(name: str, horizon: int, **overrides) -> PropagationConfig:
    """Default configuration for a named benchmark, with keyword overrides."""
    if name not in BENCHMARK_SETTINGS:
        raise ConfigurationError(f"no default settings for benchmark {name!r}")
    return PropagationConfig(horizon=horizon, **(BENCHMARK_SETTINGS[name] | overrides))


@dataclass(frozen=True)
class Increment:
    """One evaluation of the TV increment over a grid."""

    value: float
    regional: float
    outer_term: float
    slack: float
    grid: Grid


def _round_up(x: float) -> float:
    return math.ceil(x / _LEDGER_QUANTUM) * _LEDGER_QUANTUM


def max_kernel_tv(sys: SystemModel, lo: np.ndarray, hi: np.ndarray, step: int = 0) -> np.ndarray:
    """Upper bound on ``max_{x in box} TV(T_x, T_rep)`` for each box, ``rep`` its center."""
    kernel = sys.kernel(step)
    reps = 0.5 * (lo + hi)
    if isinstance(kernel, KLKernel):
        kl = np.asarray(kernel.kl_bound(lo, hi, reps), dtype=float).reshape(-1)
        return np.minimum(1.0, kernel_tv_pinsker(np.maximum(kl, 0.0)) * _UP)
    f_rep = sys.f(reps)
    e_lo, e_hi = sys.enclose(lo, hi)
    # exact maximum of |f(x) - f(rep)| per axis over the enclosing box
    worst = np.maximum(np.abs(e_lo - f_rep), np.abs(e_hi - f_rep))
    worst += ROUNDING_SLACK * np.maximum(np.maximum(np.abs(e_lo), np.abs(e_hi)), np.abs(f_rep))
    if isinstance(kernel, GaussianKernel):
        z = worst / kernel.scales
        h = np.sqrt(np.sum(z * z, axis=1)) * _INV_2SQRT2 * _UP
        s = special.erf(h) * _UP
    elif isinstance(kernel, UniformKernel):
        s = np.asarray(kernel_tv_uniform(worst, kernel.half_widths)) * _UP
    else:
        raise ConfigurationError(f"unsupported noise family {getattr(kernel, 'family', kernel)!r}")
    return np.minimum(1.0, s)


def tv_increment(grid: Grid, sys: SystemModel, step: int = 0) -> Increment:
    """TV increment of the transition out of ``grid``'s mixture.

    Only regions whose contribution is not cached yet are evaluated. The
    returned grid carries every region's contribution.
    """
    contrib = np.array(grid.contributions, dtype=float)
    todo = np.isnan(contrib)
    if todo.any():
        s = max_kernel_tv(sys, grid.lo[todo], grid.hi[todo], step)
        contrib[todo] = s * grid.weights[todo]
    regional = float(np.sum(contrib))  # numpy sums pairwise: order-fixed
    outer_term = grid.remainder_mass
    # weight errors enter twice: in the bound terms and in the mixture itself
    slack = 2.0 * mass_error_bound(grid.n_regions, grid.dim)
    value = _round_up(regional + outer_term + slack)
    return Increment(value, regional, outer_term, slack, grid.with_contributions(contrib))


@dataclass(frozen=True)
class LedgerEntry:
    t: int
    increment: float
    accumulated: float
    outer_term: float


@dataclass
class TvLedger:
    """Accumulated TV bounds; step 0 has bound 0."""

    entries: list[LedgerEntry] = field(default_factory=list)

    @property
    def accumulated(self) -> float:
        return self.entries[-1].accumulated if self.entries else 0.0

    def append(self, t: int, increment: float, outer_term: float) -> LedgerEntry:
        entry = LedgerEntry(t, increment, self.accumulated + increment, outer_term)
        self.entries.append(entry)
        return entry

    def bounds(self) -> list[float]:
        return [min(1.0, e.accumulated) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class StepResult:
    t: int
    mixture: MixtureDistribution
    grid: Grid
    tv_bound: float
    increment: float
    outer_term: float
    refinements_used: int
    wall_time: float
    increment_trace: tuple[float, ...]
    size_trace: tuple[int, ...]
    budget_met: bool
    high_prob_region: Box

    @property
    def mixture_size(self) -> int:
        return self.mixture.size

    @property
    def status(self) -> str:
        return "ok" if self.budget_met else "budget-not-met"


def form_mixture(grid: Grid, sys: SystemModel, step: int, outer: Box) -> MixtureDistribution:
    """Kernels at ``f(representative)`` weighted by region mass, plus the outer component."""
    weights = np.asarray(grid.weights, dtype=float)
    remainder = grid.remainder_mass
    total = weights.sum() + remainder
    if total > 1.0:
        weights = weights / total
    return MixtureDistribution(
        sys.f(grid.representatives),
        weights,
        sys.kernel(step),
        time_index=step + 1,
        outer_center=sys.f(outer.center[None, :])[0],
        outer_weight=remainder,
    )


GridMethod = Literal["adaptive", "equidistant"]


def propagate_step(
    prev: MixtureDistribution,
    sys: SystemModel,
    cfg: PropagationConfig,
    t: int,
    prev_bound: float = 0.0,
    grid_method: GridMethod = "adaptive",
    n_regions: Optional[int] = None,
) -> StepResult:
    """Produce the step-``t`` mixture from the step ``t-1`` mixture ``prev``.

    With ``grid_method="equidistant"`` the partition is a uniform grid of
    about ``n_regions`` cells and no refinement takes place.
    """
    if t < 1:
        raise ParameterError("steps are numbered from 1")
    step = t - 1
    start = time.perf_counter()
    S = identify_high_prob_region(prev, cfg.eps)
    if grid_method == "adaptive":
        grid = build_grid(S, prev, cfg.p_thr, cfg.min_width)
    elif grid_method == "equidistant":
        if n_regions is None:
            raise ParameterError("equidistant grids need a target region count")
        grid = equidistant_grid(S, matched_cell_counts(S, n_regions), prev)
    else:
        raise ParameterError(f"unknown grid method {grid_method!r}")
    inc = tv_increment(grid, sys, step)
    incs, sizes = [inc.value], [inc.grid.n_regions]
    refinements = 0
    if grid_method == "adaptive":
        target = cfg.threshold(t)
        while prev_bound + inc.value >= target and refinements < cfg.max_refinements:
            finer = refine(inc.grid, cfg.gamma)
            if finer is inc.grid:
                break
            refinements += 1
            inc = tv_increment(finer, sys, step)
            incs.append(inc.value)
            sizes.append(inc.grid.n_regions)
    mixture = form_mixture(inc.grid, sys, step, S)
    accumulated = prev_bound + inc.value
    return StepResult(
        t=t,
        mixture=mixture,
        grid=inc.grid,
        tv_bound=min(1.0, accumulated),
        increment=inc.value,
        outer_term=inc.outer_term,
        refinements_used=refinements,
        wall_time=time.perf_counter() - start,
        increment_trace=tuple(incs),
        size_trace=tuple(sizes),
        budget_met=accumulated <= cfg.budget(t),
        high_prob_region=S,
    )


@dataclass
class RunResult:
    system: SystemModel
    config: PropagationConfig
    steps: list[StepResult]
    ledger: TvLedger
    grid_method: str = "adaptive"

    @property
    def tv_bounds(self) -> list[float]:
        return [s.tv_bound for s in self.steps]

    @property
    def budget_met(self) -> bool:
        return all(s.budget_met for s in self.steps)

    def mixture(self, t: int) -> MixtureDistribution:
        return self.system.initial if t == 0 else self.steps[t - 1].mixture

    def bound(self, t: int) -> float:
        return 0.0 if t == 0 else self.steps[t - 1].tv_bound


def run(
    sys: SystemModel,
    cfg: PropagationConfig,
    grid_method: GridMethod = "adaptive",
    region_counts: Optional[Sequence[int]] = None,
    progress=None,
) -> RunResult:
    """Propagate ``sys.initial`` for ``cfg.horizon`` steps.

    ``region_counts[t-1]`` sets the equidistant grid size at step ``t``.
    ``progress``, if given, is called with each finished :class:`StepResult`.
    """
    if sys.noise.per_step and cfg.horizon > sys.noise.n_steps:
        raise ConfigurationError("horizon exceeds the number of per-step noise variances")
    if grid_method == "equidistant" and (region_counts is None or len(region_counts) < cfg.horizon):
        raise ConfigurationError("equidistant runs need one region count per step")
    ledger = TvLedger()
    steps: list[StepResult] = []
    prev = sys.initial
    for t in range(1, cfg.horizon + 1):
        n = None if region_counts is None else int(region_counts[t - 1])
        res = propagate_step(prev, sys, cfg, t, ledger.accumulated, grid_method, n)
        ledger.append(t, res.increment, res.outer_term)
        steps.append(res)
        if progress is not None:
            progress(res)
        prev = res.mixture
    return RunResult(sys, cfg, steps, ledger, grid_method)


def refinement_trace(sys: SystemModel, cfg: PropagationConfig, levels: int) -> list[tuple[int, float, int]]:
    """One-step bounds of the initial grid and of ``levels`` successive refinements.

    Returns ``(level, increment, n_regions)`` triples, level 0 being the
    initial mass-balanced grid.
    """
    S = identify_high_prob_region(sys.initial, cfg.eps)
    inc = tv_increment(build_grid(S, sys.initial, cfg.p_thr, cfg.min_width), sys, 0)
    out = [(0, inc.value, inc.grid.n_regions)]
    for level in range(1, levels + 1):
        inc = tv_increment(refine(inc.grid, cfg.gamma), sys, 0)
        out.append((level, inc.value, inc.grid.n_regions))
    return out


def manifest(result: RunResult) -> dict:
    """Deterministic summary of a run (timings are kept out; see :func:`timings`)."""
    return {
        "schema_version": 1,
        "grid_method": result.grid_method,
        "system": result.system.describe(),
        "config": asdict(result.config),
        "steps": [
            {
                "t": s.t,
                "tv_bound": s.tv_bound,
                "increment": s.increment,
                "outer_term": s.outer_term,
                "mixture_size": s.mixture_size,
                "n_regions": s.grid.n_regions,
                "refinements_used": s.refinements_used,
                "increment_trace": list(s.increment_trace),
                "size_trace": list(s.size_trace),
                "status": s.status,
                "high_prob_region": s.high_prob_region.to_dict(),
                "kernel": s.mixture.kernel.params(),
            }
            for s in result.steps
        ],
        "final_tv_bound": result.steps[-1].tv_bound if result.steps else 0.0,
        "budget_met": result.budget_met,
    }


def timings(result: RunResult) -> dict:
    return {"steps": [{"t": s.t, "wall_time": s.wall_time} for s in result.steps]}
