import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvprop.distributions import GaussianKernel, MixtureDistribution, NoiseSpec, UniformKernel
from tvprop.errors import ConfigurationError, ParameterError
from tvprop.interval import Box
from tvprop.systems import (
    BIMODAL_A,
    LinearSystem,
    PolynomialSystem,
    enclose_f,
    eval_f,
    make_benchmark,
)


def test_benchmark_constants():
    poly = make_benchmark("polynomial", 1.0)
    assert np.array_equal(poly.kernel(0).variances, [1.0, 1.0])
    assert poly.horizon == 7
    dub = make_benchmark("dubins")
    assert dub.dim == 3 and dub.horizon == 5
    assert np.array_equal(dub.kernel(0).variances, [0.06, 0.06, 0.01])
    bim = make_benchmark("bimodal")
    assert bim.horizon == 10 and np.array_equal(bim.A, BIMODAL_A)
    assert np.allclose(bim.initial.centers, [[6.0, 10.0], [8.0, 10.0]])
    uni = make_benchmark("uniform_linear")
    assert isinstance(uni.kernel(0), UniformKernel) and uni.horizon == 5


def test_benchmark_errors():
    with pytest.raises(ConfigurationError):
        make_benchmark("lorenz")
    with pytest.raises(ConfigurationError):
        make_benchmark("uniform_linear", 0.1)


def test_polynomial_map_values():
    sys = make_benchmark("polynomial", 1.0)
    h = 0.05
    x1, x2 = 1.2, -0.7
    expect = [x1 + 1.25 * h * x2, 1.4 * x2 + 0.3 * h * (0.25 * x1**2 - 0.4 * x1 * x2 + 0.25 * x2**2)]
    assert eval_f(sys, [x1, x2]) == pytest.approx(expect, abs=1e-15)


def test_dubins_map_values():
    sys = make_benchmark("dubins")
    out = eval_f(sys, [[0.0, 0.0, 0.0], [1.0, 2.0, np.pi / 2]])
    assert out[0] == pytest.approx([1.5, 0.0, 0.6])
    assert out[1] == pytest.approx([1.0, 3.5, np.pi / 2 + 0.6])


def test_eval_f_rejects_bad_state():
    sys = make_benchmark("bimodal")
    with pytest.raises(ParameterError):
        eval_f(sys, [1.0, 2.0, 3.0])
    with pytest.raises(ParameterError):
        eval_f(sys, [np.inf, 0.0])


def test_linear_enclosure_is_the_vertex_hull():
    sys = make_benchmark("bimodal")
    box = Box([1.0, -2.0], [3.0, 0.5])
    verts = np.array([[a, b] for a in (1.0, 3.0) for b in (-2.0, 0.5)])
    img = eval_f(sys, verts)
    enc = enclose_f(sys, box)
    assert enc.lo == pytest.approx(img.min(axis=0), abs=1e-10)
    assert enc.hi == pytest.approx(img.max(axis=0), abs=1e-10)


@st.composite
def small_boxes(draw, dim, span=3.0, max_width=1.0):
    lo = np.array([draw(st.floats(-span, span)) for _ in range(dim)])
    w = np.array([draw(st.floats(0.0, max_width)) for _ in range(dim)])
    return Box(lo, lo + w)


@pytest.mark.parametrize("name", ["bimodal", "polynomial", "dubins"])
@given(data=st.data())
def test_enclosure_contains_sampled_images(name, data):
    sys = make_benchmark(name)
    box = data.draw(small_boxes(sys.dim, max_width=2.0 if name == "dubins" else 1.0))
    rng = np.random.default_rng(0)
    x = box.lo + rng.random((500, sys.dim)) * box.widths
    x = np.vstack([x, box.lo, box.hi])
    assert enclose_f(sys, box).contains(eval_f(sys, x)).all()


def test_degenerate_box_encloses_point():
    sys = make_benchmark("dubins")
    p = np.array([0.3, -0.2, 1.1])
    enc = enclose_f(sys, Box(p, p))
    assert enc.contains(eval_f(sys, p))
    assert np.max(enc.widths) < 1e-9


def test_model_validation():
    init = MixtureDistribution.single([0.0, 0.0], GaussianKernel([1.0, 1.0]))
    with pytest.raises(ConfigurationError):
        LinearSystem(2, NoiseSpec.gaussian([1.0]), init, 3, A=np.eye(2))
    with pytest.raises(ConfigurationError):
        LinearSystem(2, NoiseSpec.gaussian([1.0, 1.0]), init, 3, A=np.eye(3))
    with pytest.raises(ConfigurationError):
        LinearSystem(2, NoiseSpec.gaussian_per_step([[1.0, 1.0]] * 2), init, 3, A=np.eye(2))
    with pytest.raises(ConfigurationError):
        PolynomialSystem(2, NoiseSpec.gaussian([1.0, 1.0]), init, 3, terms=(((1.0, (1, 0, 0)),), ()))


def test_per_step_noise_kernels():
    init = MixtureDistribution.single([0.0], GaussianKernel([1.0]))
    sys = LinearSystem(1, NoiseSpec.gaussian_per_step([[1.0], [0.5]]), init, 2, A=[[0.9]])
    assert sys.kernel(1).variances[0] == 0.5
    assert sys.describe()["noise"]
