import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.convolution import (FiberQuadrature, Kernel, associativity_check, convolve,
                                  edge_operator_demo, gaussian_composition_error,
                                  gaussian_density, gaussian_kernel, map_rows,
                                  right_invariance_check, smooth_step, thread_count)
from artifact.errors import TruncationError
from artifact.geometry import euclidean
from artifact.groupoid import dilation_groupoid, group_bundle, pair_groupoid, space_groupoid

# max error of N(1) * N(1) against N(2) on a 13 x 13 grid in [-3, 3]^2 with R = 8
# (frozen; the reference is the closed form of the convolved Gaussians)
FROZEN_ERRORS = {16: 8.467351805420e-3, 32: 1.070846066e-7}


def test_frozen_composition_errors():
    for order, err in FROZEN_ERRORS.items():
        assert gaussian_composition_error(order) == pytest.approx(err, rel=1e-6)


def test_composition_converges():
    errs = [gaussian_composition_error(o) for o in (16, 32, 64)]
    assert errs[2] < 1e-12
    assert errs[0] / errs[1] >= 4 and errs[1] / errs[2] >= 4


@given(st.floats(0.6, 1.5), st.floats(0.6, 1.5))
def test_composition_matches_closed_form_for_other_widths(s1, s2):
    assert gaussian_composition_error(64, sigmas=(s1, s2)) < 1e-6


def test_pair_density_is_lebesgue():
    G = pair_groupoid(euclidean(1))
    q = FiberQuadrature(G, 16, 5.0)
    assert np.allclose(q.volume(np.array([[0.3], [-2.0]])), 10.0)


def test_dilation_fiber_volume_is_log_measure():
    # the d-fiber over t > 0 is parameterized by sigma in [-R, R] with density 1
    q = FiberQuadrature(dilation_groupoid(), 12, 6.0)
    assert np.allclose(q.volume(np.array([[1.0], [0.0]])), 12.0)


def test_space_groupoid_fiber_is_a_point():
    q = FiberQuadrature(space_groupoid(euclidean(2)), 8, 1.0)
    h, w = q.nodes(np.zeros((3, 2)))
    assert h.shape == (3, 1, 2) and np.allclose(w, 1.0)


def _gauss(g):
    return np.exp(-np.sum(np.asarray(g) ** 2, -1))


@pytest.mark.parametrize("G", [pair_groupoid(euclidean(1)), dilation_groupoid()],
                         ids=["pair", "T"])
def test_right_invariance_of_haar_system(G):
    q = FiberQuadrature(G, 48, 8.0)
    assert right_invariance_check(q, _gauss, samples=20).passed


def test_right_invariance_on_affine_bundle():
    # right Haar measure dv dsigma; the exponential chart only covers |v| < R phi1(a),
    # so the integrand is localized in sigma and R is taken large
    G = group_bundle(euclidean(1), 1, "dilation")
    c = G.sample_arrows(np.random.default_rng(0), 10)
    c[:, 1:] *= 0.3
    f = lambda g: np.exp(-g[..., 1] ** 2 - 4 * g[..., 2] ** 2)
    assert right_invariance_check(FiberQuadrature(G, 120, 7.0), f, arrows=c,
                                  tol=1e-7).passed
    h, w = FiberQuadrature(G, 8, 2.0).nodes(np.zeros((1, 1)))
    _, w0 = FiberQuadrature(pair_groupoid(euclidean(2)), 8, 2.0).nodes(np.zeros((1, 2)))
    a = h[0, :, 2]
    assert np.allclose(w[0], w0[0] * np.expm1(a) / a)


def test_truncation_has_compact_support():
    G = pair_groupoid(euclidean(1))
    k = gaussian_kernel(G, 1.0).truncate(2.0)
    assert k.compact and k.support == 2.0
    assert k.support_check(scale=3.0).passed
    assert np.allclose(k(np.array([[0.5, 0.0]])), gaussian_density(0.5, 1.0))


def test_convolve_requires_compact_second_factor():
    G = pair_groupoid(euclidean(1))
    q = FiberQuadrature(G, 16, 4.0)
    with pytest.raises(TruncationError):
        convolve(gaussian_kernel(G, 1.0), gaussian_kernel(G, 1.0), q)
    with pytest.raises(TruncationError) as e:
        convolve(gaussian_kernel(G, 1.0), gaussian_kernel(G, 1.0).truncate(5.0), q)
    assert e.value.witness["R"] == 4.0


def test_associativity():
    G = pair_groupoid(euclidean(1))
    q = FiberQuadrature(G, 64, 8.0)
    ks = [gaussian_kernel(G, s, center=c).truncate(4.0)
          for s, c in [(0.5, 0.3), (0.55, -0.2), (0.45, 0.1)]]
    rep = associativity_check(*ks, q, samples=40)
    assert rep.passed, rep.witness


def test_smooth_step():
    s = np.linspace(-1, 2, 31)
    v = smooth_step(s)
    assert np.all(v[s <= 0] == 0) and np.all(v[s >= 1] == 1)
    assert np.all(np.diff(v) >= 0)
    assert smooth_step(np.array(0.5)) == pytest.approx(0.5)


def test_map_rows_independent_of_threads():
    x = np.random.default_rng(0).standard_normal((500, 3))
    fn = lambda a: np.sin(a).sum(-1)
    assert np.array_equal(map_rows(fn, x, threads=1), map_rows(fn, x, threads=4, chunk=7))


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("ARTIFACT_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("ARTIFACT_THREADS", "zero")
    assert thread_count() == 1
    monkeypatch.delenv("ARTIFACT_THREADS")
    assert thread_count() == 1


def test_convolution_same_for_thread_counts():
    G = pair_groupoid(euclidean(1))
    q = FiberQuadrature(G, 32, 6.0)
    a, b = gaussian_kernel(G, 1.0).truncate(6.0), gaussian_kernel(G, 0.7).truncate(6.0)
    g = G.sample_arrows(np.random.default_rng(0), 300)
    assert np.array_equal(convolve(a, b, q, threads=1)(g), convolve(a, b, q, threads=4)(g))


def test_kernel_is_plain_callable():
    G = pair_groupoid(euclidean(1))
    k = Kernel(G, lambda g: g[..., 0] * 0 + 2.0)
    assert np.allclose(k(np.zeros((4, 2))), 2.0) and not k.compact


def test_edge_operator_demo():
    rep = edge_operator_demo(2, 1, order=8, points=10)
    assert rep.passed, rep.witness
    assert all("scale" in p.details for p in rep.parts[:2])


def test_space_groupoid_convolution_is_pointwise():
    G = space_groupoid(euclidean(1))
    q = FiberQuadrature(G, 8, 1.0)
    a = Kernel(G, lambda g: np.sin(g[..., 0]))
    b = Kernel(G, lambda g: np.cos(g[..., 0]), support=0.0, compact=True)
    g = np.linspace(-2, 2, 9)[:, None]
    assert np.allclose(convolve(a, b, q)(g), np.sin(g[:, 0]) * np.cos(g[:, 0]))


def test_bundle_convolution_is_fiberwise():
    G = group_bundle(euclidean(1), 1)
    q = FiberQuadrature(G, 64, 8.0)
    a, b = gaussian_kernel(G, 0.8).truncate(8.0), gaussian_kernel(G, 1.1).truncate(8.0)
    g = np.stack([np.linspace(-1, 1, 11), np.linspace(-3, 3, 11)], -1)
    exact = gaussian_density(g[:, 1], 0.8 ** 2 + 1.1 ** 2)
    assert np.max(np.abs(convolve(a, b, q)(g) - exact)) < 1e-9


def test_space_groupoid_associativity_is_exact():
    G = space_groupoid(euclidean(1))
    q = FiberQuadrature(G, 4, 1.0)
    # dyadic values keep every product exact, so no rounding enters
    ks = [Kernel(G, lambda g, j=j: np.round(4 * g[..., 0]) / 4 + j, support=0.0, compact=True)
          for j in range(3)]
    rep = associativity_check(*ks, q, samples=50, budget=0.0)
    assert rep.passed and rep.max_residual == 0.0
    smooth = [Kernel(G, fn, support=0.0, compact=True) for fn in
              (lambda g: np.sin(g[..., 0]), lambda g: g[..., 0] ** 2, np.exp)]
    assert associativity_check(*smooth, q, samples=50, budget=1e-14).passed
