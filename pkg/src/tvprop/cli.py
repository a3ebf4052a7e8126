"""Command line interface: ``tvprop run | audit | compare-grids | bench``.

Every command writes into a temporary sibling directory and renames it into
place only on success, so a failed invocation leaves no partial output.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Literal, Optional, Union

import click
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tvprop.distributions import GaussianKernel, MixtureDistribution, NoiseSpec, UniformKernel
from tvprop.errors import ConfigurationError, TVPropError
from tvprop.partition import write_grid_csv
from tvprop.propagation import (
    BENCHMARK_SETTINGS,
    PropagationConfig,
    RunResult,
    manifest,
    refinement_trace,
    run,
    timings,
)
from tvprop.systems import (
    BENCHMARKS,
    DubinsSystem,
    LinearSystem,
    PolynomialSystem,
    SystemModel,
    make_benchmark,
)
from tvprop.validation import (
    BIMODAL_UNSAFE_BOX,
    certify_event,
    mc_simulate,
    soundness_audit,
    write_audit_csv,
)

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_AUDIT = 4

# -- configuration schema -------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelModel(_Strict):
    family: Literal["gaussian", "uniform"]
    variances: Optional[list[float]] = None
    half_widths: Optional[list[float]] = None

    @model_validator(mode="after")
    def _params(self):
        if self.family == "gaussian" and self.variances is None:
            raise ValueError("gaussian kernels need 'variances'")
        if self.family == "uniform" and self.half_widths is None:
            raise ValueError("uniform kernels need 'half_widths'")
        return self

    def build(self):
        if self.family == "gaussian":
            return GaussianKernel(self.variances)
        return UniformKernel(self.half_widths)


class NoiseModel(_Strict):
    family: Literal["gaussian", "uniform"]
    variances: Optional[Union[list[float], list[list[float]]]] = Field(None, description="state units squared")
    half_widths: Optional[list[float]] = Field(None, description="state units")

    def build(self) -> NoiseSpec:
        if self.family == "gaussian":
            if self.variances is None:
                raise ValueError("gaussian noise needs 'variances'")
            if self.variances and isinstance(self.variances[0], list):
                return NoiseSpec.gaussian_per_step(self.variances)
            return NoiseSpec.gaussian(self.variances)
        if self.half_widths is None:
            raise ValueError("uniform noise needs 'half_widths'")
        return NoiseSpec.uniform(self.half_widths)


class InitialModel(_Strict):
    kernel: KernelModel
    centers: list[list[float]]
    weights: list[float]


class MonomialModel(_Strict):
    coef: float
    powers: list[int]


class InlineSystemModel(_Strict):
    kind: Literal["linear", "polynomial", "dubins"]
    dim: int = Field(gt=0)
    horizon: int = Field(gt=0)
    noise: NoiseModel
    initial: InitialModel
    A: Optional[list[list[float]]] = None
    terms: Optional[list[list[MonomialModel]]] = None
    velocity: float = 5.0
    dt: float = 0.3
    turn_rate: float = 2.0


class SystemSection(_Strict):
    benchmark: Optional[Literal["bimodal", "uniform_linear", "polynomial", "dubins"]] = None
    sigma2: Optional[float] = Field(None, gt=0, description="noise variance override, state units squared")
    inline: Optional[InlineSystemModel] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.benchmark is None) == (self.inline is None):
            raise ValueError("give exactly one of 'benchmark' or 'inline'")
        return self


class PropagationSection(_Strict):
    delta: Optional[float] = Field(None, gt=0)
    eps: Optional[float] = Field(None, gt=0, lt=1)
    p_thr: Optional[float] = Field(None, gt=0, lt=1)
    gamma: Optional[float] = Field(None, ge=0)
    max_refinements: Optional[int] = Field(None, ge=0)
    seed: int = 0
    threshold_offset: Literal[0, 1] = 0
    horizon: Optional[int] = Field(None, gt=0)


class ExportSection(_Strict):
    grids: bool = True
    mixtures: bool = True
    samples: int = Field(0, ge=0, description="number of mixture samples per step to export")


class RunConfigModel(_Strict):
    schema_version: Literal[1]
    system: SystemSection
    propagation: PropagationSection = PropagationSection()
    export: ExportSection = ExportSection()


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def load_config(data: dict) -> RunConfigModel:
    try:
        return RunConfigModel.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_validation(err)) from None


def build_system(sec: SystemSection) -> SystemModel:
    if sec.benchmark is not None:
        return make_benchmark(sec.benchmark, sec.sigma2)
    s = sec.inline
    try:
        noise = s.noise.build()
        init = MixtureDistribution(s.initial.centers, s.initial.weights, s.initial.kernel.build())
    except (ValueError, TVPropError) as err:
        raise ConfigError(f"system.inline: {err}") from None
    common = dict(dim=s.dim, noise=noise, initial=init, horizon=s.horizon, name=f"inline-{s.kind}")
    if s.kind == "linear":
        if s.A is None:
            raise ConfigError("system.inline.A: required for linear systems")
        return LinearSystem(**common, A=s.A)
    if s.kind == "polynomial":
        if s.terms is None:
            raise ConfigError("system.inline.terms: required for polynomial systems")
        terms = [[(m.coef, tuple(m.powers)) for m in row] for row in s.terms]
        return PolynomialSystem(**common, terms=terms)
    return DubinsSystem(**common, velocity=s.velocity, dt=s.dt, turn_rate=s.turn_rate)


def build_propagation(cfg: RunConfigModel, sys_: SystemModel) -> PropagationConfig:
    p = cfg.propagation
    base = dict(BENCHMARK_SETTINGS.get(cfg.system.benchmark or "", BENCHMARK_SETTINGS["bimodal"]))
    for key in ("delta", "eps", "p_thr", "gamma", "max_refinements"):
        value = getattr(p, key)
        if value is not None:
            base[key] = value
    horizon = p.horizon or sys_.horizon
    return PropagationConfig(horizon=horizon, seed=p.seed, threshold_offset=p.threshold_offset, **base)


def resolve(config_path, benchmark, seed, refinements, sigma2, horizon=None):
    """Config file plus flag overrides, validated, as ``(model, system, PropagationConfig)``."""
    if config_path is not None:
        try:
            data = yaml.safe_load(Path(config_path).read_text())
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse {config_path}: {err}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{config_path}: expected a mapping at the top level")
    elif benchmark is not None:
        data = {"schema_version": SCHEMA_VERSION, "system": {"benchmark": benchmark}}
    else:
        raise ConfigError("give --benchmark or --config")
    data.setdefault("system", {})
    data.setdefault("propagation", {})
    if benchmark is not None and config_path is not None:
        data["system"] = {"benchmark": benchmark}
    if sigma2 is not None:
        data["system"]["sigma2"] = sigma2
    if seed is not None:
        data["propagation"]["seed"] = seed
    if refinements is not None:
        data["propagation"]["max_refinements"] = refinements
    if horizon is not None:
        data["propagation"]["horizon"] = horizon
    model = load_config(data)
    try:
        sys_ = build_system(model.system)
        pcfg = build_propagation(model, sys_)
    except ConfigurationError as err:
        raise ConfigError(str(err)) from None
    return model, sys_, pcfg


# -- output helpers ---------------------------------------------------------------


@contextlib.contextmanager
def atomic_dir(out: Path):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_atomic(path: Path, write) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        write(fh)
    os.replace(tmp, path)


LEDGER_HEADER = [
    "t", "increment", "accumulated", "tv_bound", "outer_term",
    "mixture_size", "n_regions", "refinements_used", "status",
]


def write_ledger_csv(result: RunResult, fh) -> None:
    w = csv.writer(fh)
    w.writerow(LEDGER_HEADER)
    for entry, step in zip(result.ledger.entries, result.steps):
        w.writerow([
            step.t, repr(entry.increment), repr(entry.accumulated), repr(step.tv_bound), repr(entry.outer_term),
            step.mixture_size, step.grid.n_regions, step.refinements_used, step.status,
        ])


def read_ledger_bounds(path: Path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(row["tv_bound"]) for row in csv.DictReader(fh)]


def write_mixture_csv(mix: MixtureDistribution, fh) -> None:
    """Component centers and weights; the outer component, if any, is flagged."""
    w = csv.writer(fh)
    w.writerow([f"c_{i}" for i in range(mix.dim)] + ["weight", "outer"])
    for c, wt in zip(mix.centers, mix.weights):
        w.writerow([*map(repr, map(float, c)), repr(float(wt)), 0])
    if mix.outer_center is not None:
        w.writerow([*map(repr, map(float, mix.outer_center)), repr(float(mix.outer_weight)), 1])


def read_mixture_csv(path: Path, kernel, t: int) -> MixtureDistribution:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = rows.shape[1] - 2
    inner, outer = rows[rows[:, -1] == 0], rows[rows[:, -1] == 1]
    oc = outer[0, :d] if len(outer) else None
    ow = float(outer[0, d]) if len(outer) else 0.0
    return MixtureDistribution(inner[:, :d], inner[:, d], kernel, time_index=t, outer_center=oc, outer_weight=ow)


def _kernel_from_params(p: dict):
    if p["family"] == "gaussian_diagonal":
        return GaussianKernel(p["variances"])
    return UniformKernel(p["half_widths"])


def _set_threads(threads: Optional[int]) -> int:
    import numba

    n = threads or os.cpu_count() or 1
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    return n


def _export_run(result: RunResult, model: RunConfigModel, dest: Path, prefix: str = "") -> None:
    _write_json(dest / f"{prefix}manifest.json", manifest(result))
    _write_json(dest / f"{prefix}timings.json", timings(result))
    with open(dest / f"{prefix}ledger.csv", "w", newline="") as fh:
        write_ledger_csv(result, fh)
    if model.export.mixtures:
        (dest / f"{prefix}mixtures").mkdir()
        for s in result.steps:
            with open(dest / f"{prefix}mixtures" / f"step_{s.t:03d}.csv", "w", newline="") as fh:
                write_mixture_csv(s.mixture, fh)
    if model.export.grids:
        (dest / f"{prefix}grids").mkdir()
        for s in result.steps:
            with open(dest / f"{prefix}grids" / f"step_{s.t - 1:03d}.csv", "w", newline="") as fh:
                write_grid_csv(s.grid, fh)
    if model.export.samples:
        from tvprop.distributions import sample_mixture

        (dest / f"{prefix}samples").mkdir()
        for s in result.steps:
            x = sample_mixture(s.mixture, model.export.samples, [result.config.seed, s.t])
            header = ",".join(f"x_{i}" for i in range(x.shape[1]))
            np.savetxt(dest / f"{prefix}samples" / f"step_{s.t:03d}.csv", x, delimiter=",", header=header,
                       comments="", fmt="%.17g")


def _progress(step) -> None:
    click.echo(
        f"t={step.t:>3}  tv={step.tv_bound:.6f}  regions={step.grid.n_regions:>7}  "
        f"refinements={step.refinements_used}  {step.wall_time:.1f}s",
        err=True,
    )


# -- commands -------------------------------------------------------------------

_common = [
    click.option("--benchmark", type=click.Choice(BENCHMARKS), help="Named reference system."),
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML run config."),
    click.option("--seed", type=int, default=None, help="Seed for any sampling."),
    click.option("--refinements", type=click.IntRange(min=0), default=None, help="Refinement cap per step."),
    click.option("--sigma2", type=click.FloatRange(min=0, min_open=True), default=None,
                 help="Gaussian noise variance override."),
    click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads (default: all cores)."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Mixture propagation with certified total variation bounds."""


@main.command("run")
@common_options
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--one-step", is_flag=True, help="Only trace one step over successive refinements.")
def cmd_run(benchmark, config_path, seed, refinements, sigma2, threads, out, one_step):
    """Propagate a system and write the manifest, ledger, mixtures and grids."""
    model, sys_, pcfg = resolve(config_path, benchmark, seed, refinements, sigma2)
    _set_threads(threads)
    with atomic_dir(Path(out)) as dest:
        _write_json(dest / "config.json", model.model_dump(mode="json") | {"resolved": _resolved(pcfg)})
        if one_step:
            levels = pcfg.max_refinements
            trace = refinement_trace(sys_, pcfg, levels)
            with open(dest / "trace.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["level", "tv_bound", "n_regions"])
                for level, tv, n in trace:
                    w.writerow([level, repr(tv), n])
                    click.echo(f"level={level}  tv={tv:.6f}  regions={n}")
            _write_json(dest / "manifest.json", {
                "schema_version": 1, "mode": "one-step", "system": sys_.describe(), "config": _resolved(pcfg),
                "trace": [{"level": lv, "tv_bound": tv, "n_regions": n} for lv, tv, n in trace],
            })
            return
        result = run(sys_, pcfg, progress=_progress)
        _export_run(result, model, dest)
    for s in result.steps:
        click.echo(f"{s.t},{s.tv_bound!r},{s.mixture_size},{s.status}")
    if not result.budget_met:
        click.echo("budget not met: TV bound exceeds t*delta/T at some step", err=True)
        sys.exit(EXIT_BUDGET)


def _resolved(pcfg: PropagationConfig) -> dict:
    from dataclasses import asdict

    return asdict(pcfg)


@main.command("audit")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--mc-samples", type=click.IntRange(min=1), default=100_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--probes", type=click.IntRange(min=0), default=20, show_default=True, help="Probe boxes per step.")
@click.option("--threads", type=click.IntRange(min=1), default=None)
def cmd_audit(run_dir, mc_samples, seed, probes, threads):
    """Check a run's TV ledger against Monte Carlo simulation of the true system."""
    run_dir = Path(run_dir)
    needed = ["config.json", "manifest.json", "ledger.csv", "mixtures"]
    missing = [n for n in needed if not (run_dir / n).exists()]
    if missing:
        raise click.ClickException(f"{run_dir} lacks run artifacts: {', '.join(missing)}")
    n_threads = _set_threads(threads)
    cfg_data = json.loads((run_dir / "config.json").read_text())
    cfg_data.pop("resolved", None)
    model = load_config(cfg_data)
    sys_ = build_system(model.system)
    man = json.loads((run_dir / "manifest.json").read_text())
    bounds = read_ledger_bounds(run_dir / "ledger.csv")
    mixtures = [
        read_mixture_csv(run_dir / "mixtures" / f"step_{s['t']:03d}.csv", _kernel_from_params(s["kernel"]), s["t"])
        for s in man["steps"]
    ]
    if len(bounds) != len(mixtures):
        raise click.ClickException("ledger and mixtures disagree on the number of steps")
    ens = mc_simulate(sys_, mc_samples, seed, horizon=len(mixtures), threads=n_threads)
    extra = [BIMODAL_UNSAFE_BOX] if model.system.benchmark == "bimodal" else []
    report = soundness_audit(mixtures, bounds, ens, probes=probes, seed=seed, extra_boxes=extra)
    _write_atomic(run_dir / "audit.csv", lambda fh: write_audit_csv(report, fh))
    verdict = report.verdict()
    if extra:
        rows = []
        for t, (mix, tv) in enumerate(zip(mixtures, bounds), start=1):
            cert = certify_event(mix, tv, BIMODAL_UNSAFE_BOX, ens, t)
            rows.append(cert)
            click.echo(f"t={t:>3}  empirical={100 * cert.empirical:5.1f}%  upper={100 * cert.upper:5.1f}%")

        def write_hits(fh):
            w = csv.writer(fh)
            w.writerow(["t", "empirical", "std_error", "mixture_mass", "lower", "upper"])
            for c in rows:
                w.writerow([c.t, repr(c.empirical), repr(c.std_error), repr(c.mixture_mass), repr(c.lower),
                            repr(c.upper)])

        _write_atomic(run_dir / "hitting.csv", write_hits)
        verdict["unsafe_box"] = BIMODAL_UNSAFE_BOX.to_dict()
    _write_atomic(run_dir / "verdict.json", lambda fh: fh.write(json.dumps(verdict, indent=2, sort_keys=True)))
    click.echo(f"{verdict['n_checks']} checks, {verdict['n_violations']} violations")
    if not report.passed:
        sys.exit(EXIT_AUDIT)


@main.command("compare-grids")
@common_options
@click.option("--out", type=click.Path(file_okay=False), required=True)
def cmd_compare_grids(benchmark, config_path, seed, refinements, sigma2, threads, out):
    """Run adaptive and size-matched equidistant grids and tabulate both bounds."""
    model, sys_, pcfg = resolve(config_path, benchmark, seed, refinements, sigma2)
    _set_threads(threads)
    adaptive = run(sys_, pcfg, progress=_progress)
    sizes = [s.grid.n_regions for s in adaptive.steps]
    equid = run(sys_, pcfg, "equidistant", sizes, progress=_progress)
    ratios = [e.grid.n_regions / a for e, a in zip(equid.steps, sizes)]
    if any(abs(r - 1.0) > 0.05 for r in ratios):
        raise click.ClickException(f"equidistant grid sizes not within 5% of adaptive: {ratios}")
    with atomic_dir(Path(out)) as dest:
        _export_run(adaptive, model, dest, "adaptive_")
        _export_run(equid, model, dest, "equidistant_")
        with open(dest / "comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "adaptive_tv", "equidistant_tv", "adaptive_regions", "equidistant_regions"])
            for a, e in zip(adaptive.steps, equid.steps):
                w.writerow([a.t, repr(a.tv_bound), repr(e.tv_bound), a.grid.n_regions, e.grid.n_regions])
        table = {
            name: {"tv_1": r.tv_bounds[0], "tv_T": r.tv_bounds[-1], "avg_tv": float(np.mean(r.tv_bounds))}
            for name, r in (("adaptive", adaptive), ("equidistant", equid))
        }
        _write_json(dest / "table.json", table)
    for name, row in table.items():
        click.echo(f"{name:12s} TV_1={row['tv_1']:.3f}  TV_T={row['tv_T']:.3f}  avg={row['avg_tv']:.3f}")


@main.command("bench")
@common_options
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write timings JSON here.")
def cmd_bench(benchmark, config_path, seed, refinements, sigma2, threads, out):
    """Time one-step refinement levels (grid build, bound and mass evaluation)."""
    model, sys_, pcfg = resolve(config_path, benchmark, seed, refinements, sigma2)
    n = _set_threads(threads)
    start = time.perf_counter()
    trace = refinement_trace(sys_, pcfg, pcfg.max_refinements)
    elapsed = time.perf_counter() - start
    report = {
        "system": sys_.name,
        "threads": n,
        "levels": [{"level": lv, "tv_bound": tv, "n_regions": k} for lv, tv, k in trace],
        "seconds": elapsed,
    }
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)


if __name__ == "__main__":
    main()
