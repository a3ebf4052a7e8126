import io

import numpy as np
import pytest
from scipy import stats

from tvprop.distributions import GaussianKernel, MixtureDistribution, UniformKernel, mixture_mass_in_box
from tvprop.errors import ParameterError
from tvprop.interval import Box
from tvprop.propagation import benchmark_config, run
from tvprop.systems import make_benchmark
from tvprop.validation import (
    BIMODAL_UNSAFE_BOX,
    PROBE_MASS_RANGE,
    certify_event,
    empirical_event_prob,
    mc_simulate,
    probe_boxes,
    quadrature_tv,
    soundness_audit,
    write_audit_csv,
)


def _normal(mean, var):
    return lambda x: stats.norm.pdf(x[:, 0], mean, np.sqrt(var))


def _uniform(lo, hi):
    return lambda x: ((x[:, 0] >= lo) & (x[:, 0] <= hi)) / (hi - lo)


def test_quadrature_identical_densities():
    q = quadrature_tv(_normal(0, 1), _normal(0, 1), Box([-8.0], [8.0]), 1000)
    assert q.value == 0.0


def test_quadrature_gaussian_shift():
    q = quadrature_tv(_normal(0, 1), _normal(2, 1), Box([-10.0], [12.0]), 4000)
    assert q.value == pytest.approx(0.6826894921370859, abs=1e-4)
    assert q.error < 1e-3


def test_quadrature_uniform_overlap():
    # breakpoints 0, 0.3, 0.6, 0.9 fall on cell edges of this support at n = 4000
    q = quadrature_tv(_uniform(0.0, 0.6), _uniform(0.3, 0.9), Box([-0.3], [1.2]), 4000)
    assert q.value == pytest.approx(0.5, abs=1e-9)


def test_quadrature_two_dimensional():
    k = GaussianKernel([0.5, 0.2])
    p = lambda x: k.pdf(x, np.array([[0.0, 0.0]]))[:, 0]
    q_ = lambda x: k.pdf(x, np.array([[0.4, -0.3]]))[:, 0]
    q = quadrature_tv(p, q_, Box([-5.0, -4.0], [5.0, 4.0]), 600)
    assert q.value == pytest.approx(k.tv([0.4, -0.3]), abs=1e-4)


def test_quadrature_rejects_three_dimensions():
    with pytest.raises(ParameterError):
        quadrature_tv(_normal(0, 1), _normal(0, 1), Box(np.zeros(3), np.ones(3)), 10)


def test_mc_is_deterministic_and_chunk_independent():
    sys = make_benchmark("bimodal")
    a = mc_simulate(sys, 40000, seed=5, horizon=2)
    b = mc_simulate(sys, 40000, seed=5, horizon=2, threads=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.samples, b.samples))
    assert a.horizon == 2 and len(a.samples) == 3
    c = mc_simulate(sys, 40000, seed=6, horizon=2)
    assert not np.array_equal(a.at(1), c.at(1))


def test_mc_linear_mean():
    sys = make_benchmark("bimodal")
    n = 100000
    ens = mc_simulate(sys, n, seed=1, horizon=1)
    expect = sys.A @ np.array([7.0, 10.0])
    sd = ens.at(1).std(axis=0)
    assert np.all(np.abs(ens.at(1).mean(axis=0) - expect) < 4 * sd / np.sqrt(n))


def test_mc_rejects_empty():
    with pytest.raises(ParameterError):
        mc_simulate(make_benchmark("bimodal"), 0, seed=0)


def test_empirical_probability_edge_cases():
    ens = mc_simulate(make_benchmark("uniform_linear"), 1000, seed=0, horizon=1)
    assert empirical_event_prob(ens, 1, Box.whole(2)) == (1.0, 0.0)
    assert empirical_event_prob(ens, 1, Box([50.0, 50.0], [51.0, 51.0])) == (0.0, 0.0)
    with pytest.raises(ParameterError):
        empirical_event_prob(ens, 2, Box.whole(2))


def test_certificate_interval():
    mix = MixtureDistribution.single([0.0, 0.0], GaussianKernel([1.0, 1.0]), time_index=1)
    box = Box([-1.0, -1.0], [1.0, 1.0])
    mass = mixture_mass_in_box(mix, box)
    tight = certify_event(mix, 0.0, box)
    assert tight.lower == tight.upper == tight.mixture_mass == pytest.approx(mass)
    wide = certify_event(mix, 0.1, box)
    assert wide.upper - wide.lower == pytest.approx(0.2)
    clipped = certify_event(mix, 0.9, box)
    assert clipped.lower == 0.0 and clipped.upper == 1.0
    with pytest.raises(ParameterError):
        certify_event(mix, -0.1, box)


def test_probe_battery_is_reproducible():
    mix = MixtureDistribution([[0.0, 0.0], [2.0, 1.0]], [0.5, 0.5], GaussianKernel([0.3, 0.3]))
    a = probe_boxes(mix, seed=3, t=1)
    b = probe_boxes(mix, seed=3, t=1)
    c = probe_boxes(mix, seed=3, t=2)
    assert a == b and a != c and len(a) == 20
    for box in a:
        assert PROBE_MASS_RANGE[0] <= mixture_mass_in_box(mix, box) <= PROBE_MASS_RANGE[1]
    assert probe_boxes(mix, seed=3, t=1, count=0) == []


def test_probe_battery_uniform_mixture():
    mix = MixtureDistribution.single([0.0, 0.0], UniformKernel([0.3, 0.3]))
    assert len(probe_boxes(mix, seed=0, t=1, count=5)) == 5


@pytest.fixture(scope="module")
def small_bimodal_run():
    sys = make_benchmark("bimodal")
    res = run(sys, benchmark_config("bimodal", 3, gamma=1e-5, max_refinements=2))
    ens = mc_simulate(sys, 20000, seed=11, horizon=3)
    return res, ens


def test_audit_passes_on_a_real_run(small_bimodal_run):
    res, ens = small_bimodal_run
    mixtures = [s.mixture for s in res.steps]
    report = soundness_audit(mixtures, res.tv_bounds, ens, seed=0, extra_boxes=[BIMODAL_UNSAFE_BOX])
    assert report.passed, report.violations[:3]
    assert len(report.rows) == 3 * 21
    verdict = report.verdict()
    assert verdict["passed"] and verdict["n_violations"] == 0
    buf = io.StringIO()
    write_audit_csv(report, buf)
    assert buf.getvalue().count("\n") == len(report.rows) + 1


def test_audit_detects_a_wrong_mixture(small_bimodal_run):
    res, ens = small_bimodal_run
    shifted = [MixtureDistribution(s.mixture.centers + 0.5, s.mixture.weights, s.mixture.kernel, s.t,
                                   s.mixture.outer_center, s.mixture.outer_weight) for s in res.steps]
    report = soundness_audit(shifted, [0.0] * len(shifted), ens, seed=0)
    assert not report.passed


def test_audit_with_no_probes_passes(small_bimodal_run):
    res, ens = small_bimodal_run
    report = soundness_audit([s.mixture for s in res.steps], [0.0] * 3, ens, probes=0)
    assert report.passed and not report.rows
