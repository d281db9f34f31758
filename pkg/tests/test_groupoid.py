import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact import dual as D
from artifact.errors import ComposabilityError, RankError, ShapeError, TamenessError
from artifact.geometry import HALF, LINE, Projection, euclidean, manifold, open_region
from artifact.groupoid import (axiom_suite, dilation_groupoid, group_bundle, morphism,
                               morphism_suite, pair_groupoid, product_groupoid,
                               pullback_groupoid, reduction, relabel, semidirect_product,
                               space_groupoid, structure_maps_tame)


def _slice(n, k):
    M = euclidean(n + k)
    return Projection(M, tuple(range(n, n + k)), name="f")


GROUPOIDS = {
    "pair": lambda: pair_groupoid(euclidean(3)),
    "space": lambda: space_groupoid(manifold(HALF, LINE)),
    "additive bundle": lambda: group_bundle(euclidean(1), 3),
    "dilation bundle": lambda: group_bundle(manifold(HALF), 2, "dilation"),
    "T": dilation_groupoid,
    "pullback": lambda: pullback_groupoid(_slice(2, 1), pair_groupoid(euclidean(1))),
    "product": lambda: product_groupoid(pair_groupoid(euclidean(1)), dilation_groupoid()),
    "fibered pair": lambda: pair_groupoid(manifold(HALF, LINE),
                                          fibered_over=Projection(manifold(HALF, LINE),
                                                                  (0,), name="f")),
}


@pytest.mark.parametrize("name", sorted(GROUPOIDS))
def test_axioms(name):
    rep = axiom_suite(GROUPOIDS[name](), pairs=300, triples=100, seed=1)
    assert rep.passed, rep.witness


@pytest.mark.parametrize("name", ["pair", "space", "T", "pullback", "additive bundle"])
def test_structure_maps_tame(name):
    rep = structure_maps_tame(GROUPOIDS[name](), samples=100)
    assert rep.passed, rep.witness


def test_axiom_suite_is_seed_deterministic():
    G = GROUPOIDS["dilation bundle"]()
    a = axiom_suite(G, seed=3)
    b = axiom_suite(G, seed=3)
    assert a.max_residual == b.max_residual and a.summary() == b.summary()


def test_mul_rejects_non_composable():
    G = pair_groupoid(euclidean(1))
    with pytest.raises(ComposabilityError) as e:
        G.mul(np.array([0.0, 1.0]), np.array([2.0, 3.0]))
    assert e.value.witness["gap"] == 1.0


def test_pair_groupoid_needs_corner_free_units():
    with pytest.raises(RankError):
        pair_groupoid(manifold(HALF))


def test_pullback_requires_tame_map():
    f = Projection(manifold(HALF, LINE), (1,), name="drop")
    with pytest.raises(TamenessError) as e:
        pullback_groupoid(f, pair_groupoid(euclidean(1)))
    assert e.value.witness is not None


def test_pullback_codomain_must_match():
    with pytest.raises(ShapeError):
        pullback_groupoid(_slice(1, 2), pair_groupoid(euclidean(1)))


@given(st.floats(0.0, 5.0), st.floats(-2, 2), st.floats(-2, 2))
def test_dilation_groupoid_closed_form(t, a, b):
    # (t', e^a)(t, e^b) with t' = e^-b t is the arrow (t, e^(a+b)) with target e^-(a+b) t
    T = dilation_groupoid()
    h = np.array([t, b])
    g = np.array([float(D.primal(T.r(h))[0]), a])
    gh = D.primal(T.mul(g, h))
    assert np.allclose(gh, [t, a + b])
    assert np.isclose(D.primal(T.r(gh))[0], np.exp(-(a + b)) * t)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_dilation_bundle_is_affine_group(v):
    # (v, s)(w, u) = (v + s w, s u) on R x| R+*, realized as 2x2 affine matrices
    G = group_bundle(euclidean(1), 1, "dilation")
    g = np.array([0.0, v[0], v[1]])
    h = np.array([0.0, v[2], v[3]])

    def mat(a):
        return np.array([[np.exp(a[2]), a[1]], [0.0, 1.0]])
    assert np.allclose(mat(D.primal(G.mul(g, h))), mat(g) @ mat(h))


def test_reduction_and_relabel():
    G = pair_groupoid(euclidean(1))
    A = open_region(lambda x: np.abs(x[..., 0]) < 1, "(-1,1)")
    R = reduction(G, A)
    rng = np.random.default_rng(0)
    g = R.sample_arrows(rng, 100)
    assert A.contains(D.primal(R.r(g))).all() and A.contains(D.primal(R.d(g))).all()
    assert axiom_suite(R, pairs=100, triples=50).passed
    units = euclidean(1)
    E = relabel(G, units, lambda x: 2.0 * x, lambda y: 0.5 * y, name="2x")
    assert axiom_suite(E, pairs=100, triples=50).passed


def test_semidirect_product_with_dilations():
    B = group_bundle(euclidean(1), 1)

    def action(c, g):
        return D.concatenate([g[..., :1], D.exp(c) * g[..., 1:]], -1)

    def unit_action(c, x):
        return x
    S = semidirect_product(B, 1, action, unit_action, name="R x| R")
    assert axiom_suite(S, pairs=200, triples=100).passed


def test_morphism_suite_flags_a_non_functor():
    G = pair_groupoid(euclidean(1))
    ok = morphism(G, G, lambda g: g[..., ::-1], lambda x: x, name="swap",
                  inverse=lambda g: g[..., ::-1])
    rep = morphism_suite(ok, pairs=50)
    assert not rep.passed and rep.witness is not None
    ident = morphism(G, G, lambda g: g, lambda x: x, inverse=lambda g: g)
    assert morphism_suite(ident, pairs=50).passed


def test_pair_product_closed_form():
    G = pair_groupoid(euclidean(1))
    assert np.array_equal(G.mul(np.array([1.0, 2.0]), np.array([2.0, 3.0])), [1.0, 3.0])


def test_pullback_product_closed_form():
    # (m, g, m')(m', g', m'') = (m, g g', m'')
    f = _slice(1, 1)
    H = pair_groupoid(euclidean(1))
    P = pullback_groupoid(f, H)
    g = np.array([0.1, 5.0, 6.0, 0.2])
    k = np.array([0.2, 6.0, 7.0, 0.3])
    assert np.array_equal(P.mul(g, k), [0.1, 5.0, 7.0, 0.3])


def test_nested_reduction():
    G = pair_groupoid(euclidean(1))
    A = open_region(lambda x: np.abs(x[..., 0]) < 2, "A")
    B = open_region(lambda x: np.abs(x[..., 0]) < 1, "B")
    RB, RAB = reduction(G, B), reduction(reduction(G, A), B)
    g = np.random.default_rng(0).uniform(-3, 3, (400, 2))
    assert np.array_equal(RB.arrows.contains(g), RAB.arrows.contains(g))
