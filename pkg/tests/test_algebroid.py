import numpy as np
import pytest

from artifact import dual as D
from artifact.algebroid import (Rescaled, TangentAlgebroid, adiabatic_algebroid,
                                algebroid_axiom_suite, b_tangent_halfline, bracket_closure,
                                check_algebroid_iso, direct_product, fd_bracket_agreement,
                                isotropy_closure, lie_algebroid_of, rescale, tangent_algebroid,
                                thick_pullback, time_pullback)
from artifact.errors import CapabilityError, DegeneracyError
from artifact.geometry import HALF, LINE, SPHERE, Projection, euclidean, manifold
from artifact.groupoid import (dilation_groupoid, group_bundle, pair_groupoid,
                               pullback_groupoid)


def _sphere_rotations():
    M = manifold(SPHERE(2))
    return tangent_algebroid(M)


ALGEBROIDS = {
    "T(R^3)": lambda: tangent_algebroid(euclidean(3)),
    "T(S^2)": _sphere_rotations,
    "A(pair(R^2))": lambda: lie_algebroid_of(pair_groupoid(euclidean(2))),
    "A(T)": lambda: lie_algebroid_of(dilation_groupoid()),
    "b-tangent": b_tangent_halfline,
    "rescaled": lambda: Rescaled(lambda x: 1.0 + x[..., 0] ** 2, tangent_algebroid(euclidean(2))),
    "product": lambda: direct_product(tangent_algebroid(euclidean(1)), b_tangent_halfline()),
    "time pullback": lambda: time_pullback(tangent_algebroid(euclidean(2))),
    "adiabatic": lambda: adiabatic_algebroid(tangent_algebroid(euclidean(2))),
}


@pytest.mark.parametrize("name", sorted(ALGEBROIDS))
def test_axioms_and_fd_oracle(name):
    A = ALGEBROIDS[name]()
    rep = algebroid_axiom_suite(A, points=40, seed=2)
    assert rep.passed, rep.witness
    fd = fd_bracket_agreement(A, points=40, seed=2)
    assert fd.passed, fd.witness
    assert bracket_closure(A, points=20, seed=2).passed


def test_pair_algebroid_anchor_is_identity(rng):
    M = euclidean(3)
    A = lie_algebroid_of(pair_groupoid(M))
    x = M.sample(rng, 30)
    for i in range(3):
        v = D.primal(A.anchor(x, A.frame(x)[..., :, i]))
        assert np.array_equal(v, np.broadcast_to(np.eye(3)[i], v.shape))


def test_dilation_bundle_bracket_is_minus_matrix_commutator(rng):
    # right invariant fields: [X, Y] = -(XY - YX) on the affine group of the line
    M = euclidean(2)
    A = lie_algebroid_of(group_bundle(M, 1, "dilation"))
    x = M.sample(rng, 10)
    ev, es = A.frame_section(0), A.frame_section(1)
    Ev, Es = np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 0.0]])
    comm = -(Ev @ Es - Es @ Ev)
    br = D.primal(A.bracket_at(ev, es, x))
    coeff = np.einsum("...ij,...i->...j", D.primal(A.frame(x)), br)
    assert np.allclose(coeff, [comm[0, 1], comm[0, 0]])
    assert isotropy_closure(A, points=20).passed


def test_dilation_groupoid_gives_b_tangent(rng):
    AT = lie_algebroid_of(dilation_groupoid())
    x = AT.base.sample(rng, 60)
    assert check_algebroid_iso(AT, b_tangent_halfline(), x).passed


def test_pullback_algebroid_iso(rng):
    M = euclidean(3)
    f = Projection(M, (2,), name="f")
    H = pair_groupoid(f.codomain)
    A = lie_algebroid_of(pullback_groupoid(f, H))
    x = M.sample(rng, 40)
    assert check_algebroid_iso(A, thick_pullback(f, lie_algebroid_of(H)), x).passed


def test_iso_check_detects_mismatch(rng):
    M = euclidean(2)
    x = M.sample(rng, 20)
    # off {x0 = 0} the two are isomorphic, so the mismatch only shows on it
    assert check_algebroid_iso(TangentAlgebroid(M), b_tangent_like(M), x).passed
    x[:5, 0] = 0.0
    rep = check_algebroid_iso(TangentAlgebroid(M), b_tangent_like(M), x)
    assert not rep.passed and rep.witness is not None


def b_tangent_like(M):
    return Rescaled(lambda x: x[..., 0], TangentAlgebroid(M), name="x0 TM")


def test_rescale_rejects_vanishing_function():
    with pytest.raises(DegeneracyError):
        rescale(lambda x: 0.0 * x[..., 0], tangent_algebroid(euclidean(2)))
    A = rescale(lambda x: x[..., 0], tangent_algebroid(manifold(HALF, LINE)))
    assert algebroid_axiom_suite(A, points=30).passed


def test_rescaled_bracket_formula(rng):
    # [fX, fY] = f X(f) Y - f Y(f) X + f^2 [X, Y] for constant X, Y
    M = euclidean(2)
    f = lambda x: D.sin(x[..., 0]) + 2.0
    A = Rescaled(f, TangentAlgebroid(M))
    x = M.sample(rng, 10)
    e0, e1 = A.frame_section(0), A.frame_section(1)
    br = D.primal(A.bracket_at(e0, e1, x))
    # in units of f: coefficient of e1 is X(f) = cos(x0)
    assert np.allclose(br[:, 1], np.cos(x[:, 0])) and np.allclose(br[:, 0], 0.0)


def test_adiabatic_bracket_scales_with_time(rng):
    M = manifold(SPHERE(1))
    A = adiabatic_algebroid(TangentAlgebroid(M))
    x = A.base.sample(rng, 20)
    x[:5, -1] = 0.0
    rot = A.section(lambda z: D.concatenate([-z[..., 1:2], z[..., :1]], -1))
    rad = A.section(lambda z: D.concatenate([z[..., 1:2] ** 2, z[..., :1]], -1))
    br = D.primal(A.bracket_at(rot, rad, x))
    assert np.allclose(br[:5], 0.0)


def test_piecewise_algebroid_requires_pieces():
    from artifact import desing as DS
    A = lie_algebroid_of(DS.desingularize(*DS.linear_slice(1, 1)))
    x = A.base.sample(np.random.default_rng(0), 4)
    with pytest.raises(CapabilityError):
        A.frame(x)


@pytest.mark.parametrize("k", [1, 2])
def test_dilation_generator_bracket_sign(k, rng):
    # [D, e_i] = -e_i for the dilation generator D and the translation generators e_i
    A = lie_algebroid_of(group_bundle(euclidean(1), k, "dilation"))
    x = A.base.sample(rng, 8)
    F = D.primal(A.frame(x))
    Dg = A.frame_section(k)
    for i in range(k):
        br = D.primal(A.bracket_at(Dg, A.frame_section(i), x))
        assert np.allclose(br, -F[..., :, i], atol=1e-12)


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (1, 2)])
def test_thick_pullback_rank(n, k):
    M = euclidean(n + k)
    f = Projection(M, tuple(range(n, n + k)), name="f")
    for B, rk in [(tangent_algebroid(f.codomain), k),
                  (lie_algebroid_of(group_bundle(f.codomain, 1)), 1)]:
        assert B.rank == rk
        assert thick_pullback(f, B).rank == rk + (n + k) - k


def test_product_factor_sections_commute(rng):
    A = direct_product(tangent_algebroid(euclidean(1)), b_tangent_halfline())
    x = A.base.sample(rng, 20)
    X = A.section(lambda z: D.concatenate([D.sin(z[..., :1]), 0.0 * z[..., 1:]], -1))
    Y = A.section(lambda z: D.concatenate([0.0 * z[..., :1], z[..., 1:] ** 2 + 1.0], -1))
    assert np.allclose(D.primal(A.bracket_at(X, Y, x)), 0.0)


def test_rescaled_bracket_on_half_line(rng):
    # [r d/dx, r x d/dx] on [0, inf) in units of r: the expansion against the FD oracle
    A = Rescaled(lambda x: x[..., 0], TangentAlgebroid(manifold(HALF)))
    X = A.section(lambda z: D.concatenate([1.0 + 0.0 * z[..., :1]], -1))
    Y = A.section(lambda z: z)
    x = A.base.sample(rng, 30)
    exact = D.primal(A.bracket_at(X, Y, x))
    with D.finite_differences():
        fd = D.primal(A.bracket_at(X, Y, x))
    assert np.allclose(exact, fd, atol=1e-5)
    # r X(r) Y - r Y(r) X + r^2 [X, Y] = r x - r x + r^2 = r^2, so x in units of r
    assert np.allclose(exact[..., 0], x[..., 0])


def test_space_algebroid_is_zero(rng):
    from artifact.groupoid import space_groupoid
    A = lie_algebroid_of(space_groupoid(euclidean(2)))
    assert A.rank == 0
