import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from artifact import dual as D

finite = st.floats(-2.0, 2.0, allow_nan=False)


def _f(x):
    return D.concatenate([D.sin(x[..., :1]) * D.exp(x[..., 1:2]),
                          D.phi1(x[..., :1] * x[..., 1:2]),
                          D.sqrt(1.0 + D.sum(x * x, -1))[..., None]], -1)


@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_jvp_matches_finite_differences(x, v):
    x, v = np.array(x), np.array(v)
    d = D.primal(D.derivative(_f, x, v))
    assert np.allclose(d, D.richardson(_f, x, v), atol=1e-7)


@given(finite)
def test_phi1_closed_form(a):
    expect = 1.0 if a == 0 else np.expm1(a) / a
    assert abs(float(D.phi1(np.array(a))) - expect) < 1e-12
    # derivative against the closed form (a e^a - e^a + 1) / a^2
    if abs(a) > 1e-2:
        dexp = (a * np.exp(a) - np.expm1(a)) / a ** 2
        assert abs(float(D.primal(D.derivative(D.phi1, np.array(a), np.array(1.0)))) - dexp) \
            < 1e-9


def test_second_derivative_by_nesting():
    x = np.array(0.7)
    d2 = D.derivative(lambda y: D.derivative(D.sin, y, np.array(1.0)), x, np.array(1.0))
    assert abs(float(D.primal(d2)) + np.sin(0.7)) < 1e-14


def test_jacobian_shape_and_values():
    x = np.array([[0.3, -0.4], [1.0, 0.2]])
    J = D.primal(D.jacobian(_f, x))
    assert J.shape == (2, 3, 2)
    assert np.allclose(J, D.fd_jacobian(_f, x), atol=1e-7)


def test_vector_field_bracket_of_rotation_and_dilation():
    rot = lambda p: D.concatenate([-p[..., 1:2], p[..., :1]], -1)
    dil = lambda p: p
    p = np.array([[1.0, 2.0], [-0.5, 0.3]])
    assert np.allclose(D.primal(D.vf_bracket(rot, dil, p)), 0.0)
    dx = lambda p: D.concatenate([np.ones_like(p[..., :1]), np.zeros_like(p[..., :1])], -1)
    # [d/dx, rot] = d/dy
    assert np.allclose(D.primal(D.vf_bracket(dx, rot, p)), [[0.0, 1.0]] * 2)


def test_finite_difference_context_switches_path():
    x, v = np.array([0.2, 0.1]), np.array([1.0, -1.0])
    exact = D.primal(D.derivative(_f, x, v))
    with D.finite_differences():
        assert D.fd_active()
        approx = D.derivative(_f, x, v)
    assert not D.fd_active()
    assert not np.array_equal(exact, approx)
    assert np.allclose(exact, approx, atol=1e-8)
