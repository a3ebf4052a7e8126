"""Independent checks: Monte Carlo simulation, quadrature TV, event certificates.

Nothing here feeds back into the propagation; these routines exist to audit
its output. The soundness audit compares, for a battery of probe boxes, the
empirical probability of the simulated system against the mixture mass and
accepts when the difference is within the certified TV bound plus four
standard errors.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from tvprop.distributions import MixtureDistribution, mixture_masses, sample_mixture
from tvprop.errors import ParameterError
from tvprop.interval import Box
from tvprop.partition import identify_high_prob_region
from tvprop.systems import SystemModel

# Unsafe set for the bimodal hitting-probability certificates. Only a picture of
# the set exists, so the box was fitted (and rounded) to reproduce the reference
# empirical hitting probabilities per step.
BIMODAL_UNSAFE_BOX = Box([3.55, 2.0], [4.49, 3.01])
PROBE_BATTERY_VERSION = 1
PROBES_PER_STEP = 20
PROBE_MASS_RANGE = (0.05, 0.95)
SE_MULTIPLIER = 4.0
MC_CHUNK = 1 << 14


@dataclass(frozen=True, eq=False)
class McEnsemble:
    """``samples[t]`` holds ``n`` states of the true system at step ``t``."""

    samples: tuple[np.ndarray, ...]
    seed: int
    n: int

    @property
    def horizon(self) -> int:
        return len(self.samples) - 1

    def at(self, t: int) -> np.ndarray:
        if not 0 <= t <= self.horizon:
            raise ParameterError(f"step {t} outside 0..{self.horizon}")
        return self.samples[t]


def _simulate_chunk(sys: SystemModel, n: int, horizon: int, seq: np.random.SeedSequence) -> list[np.ndarray]:
    rng = np.random.default_rng(seq)
    x = sample_mixture(sys.initial, n, rng)
    out = [x]
    for step in range(horizon):
        x = sys.f(x) + sys.kernel(step).sample(rng, n)
        out.append(x)
    return out


def mc_simulate(
    sys: SystemModel, n: int, seed: int, horizon: Optional[int] = None, threads: int = 1
) -> McEnsemble:
    """Simulate ``n`` independent trajectories of the true system.

    Samples are drawn in fixed-size chunks, each with its own spawned seed, so
    the ensemble depends only on ``(n, seed)`` and not on ``threads``.
    """
    if n < 1:
        raise ParameterError("need at least one sample")
    horizon = sys.horizon if horizon is None else int(horizon)
    sizes = [min(MC_CHUNK, n - s) for s in range(0, n, MC_CHUNK)]
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, seqs))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda j: _simulate_chunk(sys, j[0], horizon, j[1]), jobs))
    else:
        parts = [_simulate_chunk(sys, m, horizon, s) for m, s in jobs]
    samples = tuple(np.concatenate([p[t] for p in parts]) for t in range(horizon + 1))
    for a in samples:
        a.flags.writeable = False
    return McEnsemble(samples, seed, n)


def empirical_event_prob(ens: McEnsemble, t: int, box: Box) -> tuple[float, float]:
    """Fraction of step-``t`` samples inside ``box`` and its binomial standard error."""
    inside = box.contains(ens.at(t))
    p = float(np.count_nonzero(inside)) / ens.n
    return p, math.sqrt(p * (1.0 - p) / ens.n)


@dataclass(frozen=True)
class EventCertificate:
    box: Box
    t: int
    mixture_mass: float
    tv_bound: float
    lower: float
    upper: float
    empirical: Optional[float] = None
    std_error: Optional[float] = None

    @property
    def consistent(self) -> Optional[bool]:
        """Whether the empirical estimate lies in the interval up to four standard errors."""
        if self.empirical is None:
            return None
        slack = SE_MULTIPLIER * self.std_error
        return self.lower - slack <= self.empirical <= self.upper + slack


def certify_event(
    mix: MixtureDistribution, tv_bound: float, box: Box, ens: Optional[McEnsemble] = None, t: Optional[int] = None
) -> EventCertificate:
    """Interval ``[mass - tv, mass + tv]`` (clipped to [0, 1]) for the true probability of ``box``.

    The interval holds for every event at once since it comes from a TV bound.
    """
    if tv_bound < 0:
        raise ParameterError("TV bound must be nonnegative")
    t = mix.time_index if t is None else t
    mass = float(mixture_masses(mix, box.lo[None, :], box.hi[None, :])[0])
    emp = se = None
    if ens is not None:
        emp, se = empirical_event_prob(ens, t, box)
    return EventCertificate(box, t, mass, tv_bound, max(0.0, mass - tv_bound), min(1.0, mass + tv_bound), emp, se)


class QuadratureEstimate(NamedTuple):
    value: float
    error: float


def quadrature_tv(
    density_a: Callable[[np.ndarray], np.ndarray],
    density_b: Callable[[np.ndarray], np.ndarray],
    support: Box,
    resolution: int | Sequence[int],
) -> QuadratureEstimate:
    """Midpoint-rule estimate of ``0.5 * int |p - q|`` over ``support`` (1-D or 2-D).

    Densities take an ``(N, d)`` array. The error estimate is the change from
    halving the resolution, which tracks the ``O(1 / resolution)`` error that
    kinks and jumps of ``|p - q|`` produce.
    """
    support.require_finite()
    d = support.dim
    if d > 2:
        raise ParameterError("quadrature TV is only supported in one or two dimensions")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    if (res < 2).any():
        raise ParameterError("resolution must be at least 2 per axis")

    def estimate(n):
        axes = [support.lo[i] + (np.arange(n[i]) + 0.5) * (support.widths[i] / n[i]) for i in range(d)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        cell = np.prod(support.widths / n)
        diff = np.abs(np.asarray(density_a(pts), dtype=float) - np.asarray(density_b(pts), dtype=float))
        return 0.5 * float(diff.sum()) * cell

    fine = estimate(res)
    coarse = estimate(np.maximum(res // 2, 1))
    return QuadratureEstimate(fine, abs(fine - coarse))


# -- probe battery and soundness audit -------------------------------------------


def probe_boxes(mix: MixtureDistribution, seed: int, t: int, count: int = PROBES_PER_STEP) -> list[Box]:
    """Reproducible random boxes whose mixture mass lies in ``PROBE_MASS_RANGE``.

    Candidate corners are drawn uniformly in the mixture's ``1 - 1e-3`` box from
    a stream keyed by ``(PROBE_BATTERY_VERSION, seed, t)``.
    """
    if count <= 0:
        return []
    rng = np.random.default_rng([PROBE_BATTERY_VERSION, seed, t])
    S = identify_high_prob_region(mix, 1e-3)
    lo_m, hi_m = PROBE_MASS_RANGE
    found: list[Box] = []
    for _ in range(100):
        a = rng.uniform(S.lo, S.hi, size=(64, mix.dim))
        b = rng.uniform(S.lo, S.hi, size=(64, mix.dim))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        mass = mixture_masses(mix, lo, hi)
        for k in np.flatnonzero((mass >= lo_m) & (mass <= hi_m)):
            found.append(Box(lo[k], hi[k]))
            if len(found) == count:
                return found
    raise ParameterError(f"could only place {len(found)} of {count} probe boxes")


@dataclass(frozen=True)
class AuditRow:
    t: int
    probe: int
    box: Box
    mixture_mass: float
    empirical: float
    std_error: float
    tv_bound: float

    @property
    def allowance(self) -> float:
        return self.tv_bound + SE_MULTIPLIER * self.std_error

    @property
    def deviation(self) -> float:
        return abs(self.empirical - self.mixture_mass)

    @property
    def ok(self) -> bool:
        return self.deviation <= self.allowance


@dataclass
class AuditReport:
    rows: list[AuditRow]
    n_samples: int
    seed: int

    @property
    def violations(self) -> list[AuditRow]:
        return [r for r in self.rows if not r.ok]

    @property
    def passed(self) -> bool:
        return not self.violations

    def verdict(self) -> dict:
        worst = max((r.deviation - r.allowance for r in self.rows), default=None)
        return {
            "schema_version": 1,
            "passed": self.passed,
            "n_checks": len(self.rows),
            "n_violations": len(self.violations),
            "mc_samples": self.n_samples,
            "seed": self.seed,
            "probe_battery_version": PROBE_BATTERY_VERSION,
            "se_multiplier": SE_MULTIPLIER,
            "worst_margin": worst,
        }


def soundness_audit(
    mixtures: Sequence[MixtureDistribution],
    bounds: Sequence[float],
    ens: McEnsemble,
    probes: int = PROBES_PER_STEP,
    seed: int = 0,
    extra_boxes: Sequence[Box] = (),
) -> AuditReport:
    """Check ``|MC - mixture mass| <= tv_t + 4 se`` for every step and probe box.

    ``mixtures[t-1]`` and ``bounds[t-1]`` belong to step ``t``.
    """
    if len(mixtures) != len(bounds):
        raise ParameterError("need one TV bound per mixture")
    rows = []
    for t, (mix, tv) in enumerate(zip(mixtures, bounds), start=1):
        boxes = probe_boxes(mix, seed, t, probes) + list(extra_boxes)
        if not boxes:
            continue
        lo = np.stack([b.lo for b in boxes])
        hi = np.stack([b.hi for b in boxes])
        masses = mixture_masses(mix, lo, hi)
        for k, box in enumerate(boxes):
            emp, se = empirical_event_prob(ens, t, box)
            rows.append(AuditRow(t, k, box, float(masses[k]), emp, se, float(tv)))
    return AuditReport(rows, ens.n, ens.seed)


def audit_csv_header(dim: int) -> list[str]:
    return (
        ["t", "probe"]
        + [f"lo_{i}" for i in range(dim)]
        + [f"hi_{i}" for i in range(dim)]
        + ["mixture_mass", "empirical", "std_error", "tv_bound", "ok"]
    )


def write_audit_csv(report: AuditReport, fh: io.TextIOBase) -> None:
    writer = csv.writer(fh)
    dim = report.rows[0].box.dim if report.rows else 0
    writer.writerow(audit_csv_header(dim))
    for r in report.rows:
        writer.writerow(
            [r.t, r.probe, *map(repr, map(float, r.box.lo)), *map(repr, map(float, r.box.hi)),
             repr(r.mixture_mass), repr(r.empirical), repr(r.std_error), repr(r.tv_bound), int(r.ok)]
        )
