import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact import dual as D
from artifact.deformation import (adiabatic_groupoid, adiabatic_restrictions, chart,
                                  chart_image, chart_taylor_check, comparison_morphism,
                                  edge_modification, edge_modification_ni,
                                  edge_ni_as_pullback, edge_ni_restriction, edge_restrictions,
                                  open_half_line_pair, scaling_action)
from artifact.errors import TamenessError
from artifact.geometry import HALF, LINE, Projection, euclidean, manifold
from artifact.groupoid import (axiom_suite, group_bundle, morphism_suite, pair_groupoid,
                               structure_maps_tame)


def _fH(n=2, k=1):
    M = euclidean(n + k)
    f = Projection(M, tuple(range(n, n + k)), name="f")
    return f, pair_groupoid(f.codomain)


BASES = {
    "pair": lambda: pair_groupoid(euclidean(2)),
    "dilation bundle": lambda: group_bundle(euclidean(1), 1, "dilation"),
}


@pytest.mark.parametrize("name", sorted(BASES))
def test_adiabatic_axioms_and_tameness(name):
    Gad = adiabatic_groupoid(BASES[name]())
    assert axiom_suite(Gad, pairs=300, triples=100).passed
    assert structure_maps_tame(Gad, samples=100).passed


@pytest.mark.parametrize("name", sorted(BASES))
def test_chart_is_first_order_at_zero(name):
    rep = chart_taylor_check(adiabatic_groupoid(BASES[name]()))
    assert rep.passed, rep.witness


def test_chart_image_splits_by_time():
    Gad = adiabatic_groupoid(pair_groupoid(euclidean(1)))
    x = np.array([[1.0], [1.0]])
    X = np.array([[2.0], [2.0]])
    t = np.array([[0.5], [0.0]])
    arrow, vec = chart_image(Gad, x, X, t)
    # t > 0: the pair (x + tX, x) at time t
    assert np.allclose(arrow[0], [2.0, 1.0, 0.5]) and np.isnan(vec[0]).all()
    assert np.allclose(vec[1], [1.0, 2.0]) and np.isnan(arrow[1]).all()


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_scaling_group_law(s, s2):
    Gad = adiabatic_groupoid(BASES["dilation bundle"]())
    rng = np.random.default_rng(0)
    g = Gad.sample_arrows(rng, 30)
    a = scaling_action(Gad, s).on_arrows(scaling_action(Gad, s2).on_arrows(g))
    b = scaling_action(Gad, s * s2).on_arrows(g)
    assert np.max(np.abs(D.primal(a) - D.primal(b))) < 1e-10 * max(1.0, s * s2, 1 / (s * s2))


@pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
def test_scaling_is_automorphism(s):
    Gad = adiabatic_groupoid(BASES["pair"]())
    assert morphism_suite(scaling_action(Gad, s), pairs=200).passed


def test_scaling_commutes_with_chart():
    Gad = adiabatic_groupoid(BASES["pair"]())
    rng = np.random.default_rng(1)
    x, X = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
    t = rng.uniform(0, 3, (40, 1))
    for s in (0.5, 2.0, 10.0):
        lhs = scaling_action(Gad, s).on_arrows(chart(Gad, x, X, t))
        assert np.allclose(D.primal(lhs), chart(Gad, x, s * X, t / s), atol=1e-12)


def test_adiabatic_restrictions():
    Gad = adiabatic_groupoid(BASES["pair"]())
    for res in adiabatic_restrictions(Gad):
        rep = res.check(pairs=200)
        assert rep.passed, (res.iso.name, rep.witness)


def test_open_half_line_pair():
    assert axiom_suite(open_half_line_pair(), pairs=200, triples=100).passed


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (1, 2)])
def test_edge_modification(n, k):
    f, H = _fH(n, k)
    E = edge_modification(f, H)
    assert axiom_suite(E, pairs=300, triples=100).passed
    for res in edge_restrictions(E):
        assert res.check(pairs=150).passed, res.iso.name


@pytest.mark.parametrize("n,k", [(1, 1), (2, 1)])
def test_edge_modification_ni(n, k):
    f, H = _fH(n, k)
    E, Eni = edge_modification(f, H), edge_modification_ni(f, H)
    assert axiom_suite(Eni, pairs=300, triples=100).passed
    assert morphism_suite(comparison_morphism(E, Eni), pairs=150).passed
    assert edge_ni_restriction(Eni).check(pairs=150).passed
    P, iso = edge_ni_as_pullback(f, H)
    assert axiom_suite(P, pairs=150, triples=50).passed
    assert morphism_suite(iso, pairs=150).passed


def test_edge_needs_tame_map():
    M = manifold(HALF, LINE)
    f = Projection(M, (1,), name="drop")
    with pytest.raises(TamenessError) as e:
        edge_modification(f, pair_groupoid(f.codomain))
    assert e.value.witness["point"][0] == 0.0


def test_adiabatic_product_at_time_zero():
    # (x, X)(x, Y) = (x, X + Y) at t = 0 for pair(R^n)
    Gad = adiabatic_groupoid(pair_groupoid(euclidean(2)))
    x, X, Y = np.array([0.5, -1.0]), np.array([1.0, 2.0]), np.array([-3.0, 0.25])
    g = chart(Gad, x, X, np.zeros(1))
    h = chart(Gad, x, Y, np.zeros(1))
    assert np.allclose(D.primal(Gad.mul(g, h)), np.concatenate([x, X + Y, [0.0]]))


def test_comparison_collapses_at_time_zero():
    f, H = _fH(1, 1)
    E, Eni = edge_modification(f, H), edge_modification_ni(f, H)
    g = E.sample_arrows(np.random.default_rng(0), 50, strata=False)
    wsd = E.meta["sd"].arrows.width
    g[:, 1 + 2] = 0.0
    out = D.primal(comparison_morphism(E, Eni).on_arrows(g))
    y = g[:, 1:2]
    assert np.allclose(out[:, 1:3], D.primal(H.u(y)))
    assert np.allclose(out[:, -2], 0.0) and np.allclose(out[:, -1], g[:, 1 + wsd - 1])
