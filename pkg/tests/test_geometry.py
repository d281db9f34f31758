import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact import dual as D
from artifact.errors import ConstraintError, ShapeError, UnsupportedSubmanifoldError
from artifact.geometry import (HALF, LINE, SPHERE, CornerFace, LinearSlice, ModelBlock,
                               Point, Projection, SmoothMap, TangentVector,
                               check_tame_submersion, blow_up, depth, euclidean,
                               inward_cone_membership, manifold)


def test_block_dimensions():
    blk = ModelBlock([SPHERE(2), HALF, LINE])
    assert blk.dim == 4 and blk.width == 5


def test_samples_lie_in_block_and_hit_strata(rng):
    M = manifold(HALF, HALF, SPHERE(1), LINE)
    x = M.sample(rng, 400)
    assert M.contains(x).all()
    depths = set(M.block.depth(x).tolist())
    assert {0, 1, 2} <= depths


def test_constraints_are_enforced():
    M = manifold(HALF, SPHERE(1))
    with pytest.raises(ConstraintError):
        M.block.validate(np.array([-1.0, 1.0, 0.0]))
    with pytest.raises(ConstraintError):
        M.block.validate(np.array([0.0, 0.5, 0.5]))
    with pytest.raises(ShapeError):
        Point(M, [0.0, 1.0])


def test_depth_and_inward_cone():
    M = manifold(HALF, HALF, LINE)
    p = Point(M, [0.0, 0.0, 1.0])
    assert depth(p) == 2
    assert inward_cone_membership(TangentVector(p, [1.0, 0.0, -3.0]))
    assert not inward_cone_membership(TangentVector(p, [1.0, -1.0, 0.0]))
    assert depth(Point(M, [0.0, 2.0, 1.0])) == 1


def test_sphere_tangent_check():
    M = manifold(SPHERE(1))
    p = Point(M, [1.0, 0.0])
    TangentVector(p, [0.0, 2.0])
    with pytest.raises(ConstraintError):
        TangentVector(p, [1.0, 0.0])


def test_projection_is_tame():
    M = manifold(HALF, LINE, LINE)
    f = Projection(M, (0, 1), name="f")
    assert check_tame_submersion(f, samples=200).passed


def test_dropping_a_boundary_factor_changes_depth():
    M = manifold(HALF, LINE)
    f = Projection(M, (1,), name="drop")
    rep = check_tame_submersion(f, samples=100)
    assert not rep.passed and rep.witness["point"][0] == 0.0


def test_non_surjective_map_is_caught():
    M = euclidean(2)
    h = SmoothMap(M, euclidean(2), lambda x: D.concatenate([x[..., :1], x[..., :1]], -1))
    rep = check_tame_submersion(h, samples=20)
    assert not rep.passed and rep.witness["reason"] == "differential not surjective"


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (3, 1), (2, 2)])
def test_blow_up_linear_slice(n, k, rng):
    M = euclidean(n + k)
    B = blow_up(M, LinearSlice(tuple(range(n))))
    assert B.total.dim == M.dim
    x = M.sample(rng, 200)
    z = D.primal(B.lift(x))
    assert B.total.contains(z).all()
    assert np.allclose(D.primal(B.blow_down(z)), x, atol=1e-12)
    # blow-down Jacobian matches the dual derivative
    J = D.primal(B.blow_down.jacobian(z))
    assert np.allclose(J, D.fd_jacobian(lambda q: D.primal(B.blow_down(q)), z), atol=1e-8)
    s = B.boundary.sample(rng, 50)
    e = D.primal(B.boundary_embedding(s))
    assert np.all(D.primal(B.radius(e)) == 0.0)
    assert np.allclose(D.primal(B.blow_down(e))[:, :n], 0.0)


def test_blow_up_corner_face(rng):
    M = manifold(HALF, HALF, LINE)
    B = blow_up(M, CornerFace((0, 1)))
    z = B.total.sample(rng, 200)
    x = D.primal(B.blow_down(z))
    assert M.contains(x).all()
    assert B.total.block.factors[0] == SPHERE(1, clipped=True)


def test_blow_up_rejects_bad_presentation():
    with pytest.raises(UnsupportedSubmanifoldError):
        blow_up(manifold(HALF, LINE), LinearSlice((0,)))
    with pytest.raises(UnsupportedSubmanifoldError):
        blow_up(euclidean(2), CornerFace((0,)))


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3))
def test_lift_is_inverse_off_locus(x):
    x = np.array(x)
    B = blow_up(euclidean(3), LinearSlice((0, 1)))
    if np.hypot(x[0], x[1]) < 1e-6:
        return
    assert np.allclose(D.primal(B.blow_down(D.primal(B.lift(x)))), x, atol=1e-12)


def test_blow_down_formula():
    # (w, r, y) -> (r w, y) with the normal factors in their original slots
    B = blow_up(euclidean(3), LinearSlice((0, 2)))
    z = np.array([0.6, 0.8, 2.0, -1.5])
    assert np.allclose(D.primal(B.blow_down(z)), [1.2, -1.5, 1.6])
    assert B.total.block.factors[:2] == (SPHERE(1), HALF)
