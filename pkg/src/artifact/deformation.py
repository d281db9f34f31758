"""Adiabatic groupoids, the dilation action and edge modifications.

The adiabatic groupoid is realized in the single chart (x, X, t) where x is
the source, X an algebroid vector and the arrow is exp(x, tX) for t > 0 and
the vector X itself at t = 0. This needs exp data whose exponential is a
diffeomorphism of each A_x onto the source fiber, which holds for the
supported classes (pair groupoids of euclidean blocks, vector and dilation
group bundles, and their pull-backs).
"""

from dataclasses import dataclass

import numpy as np

from . import dual as D
from .errors import CapabilityError, PairingError, UnsupportedError
from .geometry import HALF, LINE, CoordinateManifold, ModelBlock, Projection, Region
from .groupoid import (COMPOSE_TOL, ExpData, FiberChart, LieGroupoid, _lead, _zeros,
                       dilation_groupoid, group_bundle, morphism, pair_groupoid,
                       product_groupoid, pullback_groupoid, reduction, relabel,
                       semidirect_product, space_groupoid)
from .report import Report


def _time_half():
    return ModelBlock([HALF])


def positive_times(units):
    """Region t > 0 of units whose last coordinate is time."""
    return Region(lambda x: x[..., -1] > 0, "t>0")


def zero_time(units):
    def sampler(rng, n, base):
        x = base.sample(rng, n, strata=False)
        x[..., -1] = 0.0
        return x
    return Region(lambda x: np.abs(x[..., -1]) <= 1e-12, "t=0", closed=True, sampler=sampler)


def adiabatic_groupoid(G):
    """G_ad over M x [0, inf) in the exponential chart (x, X, t)."""
    e = G.exp
    if e is None:
        raise CapabilityError(f"{G.name} carries no exp data")
    if e.frame is not None:
        raise UnsupportedError("the adiabatic chart needs exp data with a global linear frame")
    if e.ad_mul is None or e.ad_inv is None or e.log is None:
        raise CapabilityError(f"{G.name} lacks the product formula in exponential coordinates")
    M = G.units
    wm = M.width
    N = e.ambient
    units = CoordinateManifold(M.block + _time_half(), name=f"{M.name} x [0,inf)")
    arrows = CoordinateManifold(M.block + ModelBlock([LINE] * N) + _time_half(),
                                name=f"{G.name}_ad")

    def parts(g):
        return g[..., :wm], g[..., wm:wm + N], g[..., wm + N:]

    def arrow(x, X, t):
        return D.concatenate([x, X, t], -1)

    def underlying(g):
        """The arrow exp(x, tX) of G."""
        x, X, t = parts(g)
        return e.exp(x, t * X)

    def d(g):
        x, _, t = parts(g)
        return D.concatenate([x, t], -1)

    def r(g):
        _, _, t = parts(g)
        return D.concatenate([G.r(underlying(g)), t], -1)

    def u(y):
        return arrow(y[..., :wm], _zeros(y, N), y[..., wm:])

    def inv(g):
        x, X, t = parts(g)
        return arrow(G.r(underlying(g)), e.ad_inv(x, X, t), t)

    def mul(g, h):
        _, X1, t = parts(g)
        x2, X2, _ = parts(h)
        return arrow(x2, e.ad_mul(x2, X1, X2, t), t)

    def exp(y, xi):
        return arrow(y[..., :wm], xi, y[..., wm:])

    def ad_mul(y2, X1, X2, s):
        return e.ad_mul(y2[..., :wm], X1, X2, s * y2[..., wm:])

    def ad_inv(y, X, s):
        return e.ad_inv(y[..., :wm], X, s * y[..., wm:])

    def log(g):
        x, X, t = parts(g)
        return D.concatenate([x, t], -1), X

    def sampler(y, rng):
        X = rng.standard_normal(y.shape[:-1] + (N,))
        return np.concatenate([y[..., :wm], X, y[..., wm:]], -1)

    connector = None
    if G.connector is not None:
        def connector(y, z):
            t, s = y[..., wm:], z[..., wm:]
            g = G.connector(y[..., :wm], z[..., :wm])
            with np.errstate(invalid="ignore", divide="ignore"):
                _, X = e.log(np.nan_to_num(g))
                X = np.asarray(X) / np.where(t > 0, t, 1.0)
            same = np.max(np.abs(y[..., :wm] - z[..., :wm]), -1, initial=0.0) <= COMPOSE_TOL
            X = np.where((t[..., 0] > 0)[..., None], X, 0.0)
            bad = (np.abs(t - s)[..., 0] > COMPOSE_TOL) | np.isnan(g).any(-1)
            bad |= (t[..., 0] <= 0) & ~same
            out = np.concatenate([y[..., :wm], X, t], -1)
            out[bad] = np.nan
            return out

    fc = FiberChart(ModelBlock([LINE] * N), lambda y, th: D.concatenate(
        [D.broadcast_to(y[..., :wm], _lead(th) + (wm,)), th,
         D.broadcast_to(y[..., wm:], _lead(th) + (1,))], -1))
    out = LieGroupoid(units, arrows, d, r, u, inv, mul, name=f"{G.name}_ad",
                      exp=ExpData(N, exp, None, ad_mul, ad_inv, log), sampler=sampler,
                      connector=connector, fiber_chart=fc, tol=G.tol,
                      meta={"kind": "adiabatic", "base": G})
    out.underlying = underlying
    return out


def chart(G_ad, x, X, t):
    """Phi(X, t): the arrow of G_ad with exponential coordinates (x, X, t)."""
    return D.concatenate([x, X, t], -1)


def chart_image(G_ad, x, X, t):
    """Phi(X, t) read in the disjoint-union description: (exp(x, tX), t) for t > 0
    and the vector (x, X) at t = 0."""
    G = G_ad.meta["base"]
    pos = D.primal(t)[..., 0] > 0
    g = D.primal(D.concatenate([G.exp.exp(x, t * X), t], -1))
    v = D.primal(D.concatenate([x, X], -1))
    return np.where(pos[..., None], g, np.nan), np.where(pos[..., None], np.nan, v)


def chart_taylor_check(G_ad, samples=50, seed=0, ts=(1e-2, 5e-3, 2.5e-3)):
    """First-order agreement of the two chart descriptions as t -> 0:
    |(exp(x, tX) - u(x)) / t - D exp_x[X]| = O(t)."""
    G = G_ad.meta["base"]
    rng = np.random.default_rng(seed)
    x = G.units.sample(rng, samples, strata=False)
    X = rng.standard_normal((samples, G.exp.ambient))
    zero = np.zeros_like(X)
    lin = D.primal(D.derivative(lambda V: G.exp.exp(x, V), zero, X))
    base = D.primal(G.u(x))
    errs = []
    for t in ts:
        q = (D.primal(G.exp.exp(x, t * X)) - base) / t
        errs.append(np.max(np.abs(q - lin), axis=-1))
    errs = np.array(errs)
    ratio = errs[1:] / np.maximum(errs[:-1], 1e-300)
    ok = errs[:-1] > 1e-12
    res = np.where(ok, np.abs(ratio - np.array(ts[1:])[:, None] / np.array(ts[:-1])[:, None]),
                   0.0)
    # first order: halving t halves the remainder (up to O(t) corrections)
    return Report.from_residuals("chart Taylor agreement", res.ravel(), 0.1,
                                 errors=errs.max(axis=1).tolist())


def scaling_action(G_ad, s):
    """Dilation s . (x, X, t) = (x, sX, t/s), a groupoid automorphism of G_ad."""
    wm = G_ad.units.width - 1

    def on_arrows(g):
        return D.concatenate([g[..., :wm], s * g[..., wm:-1], g[..., -1:] / s], -1)

    def on_units(y):
        return D.concatenate([y[..., :wm], y[..., wm:] / s], -1)

    def back(g):
        return D.concatenate([g[..., :wm], g[..., wm:-1] / s, g[..., -1:] * s], -1)
    return morphism(G_ad, G_ad, on_arrows, on_units, name=f"scale[{s:g}]", inverse=back)


def _log_action(G_ad):
    """The dilation action with s = e^c, as used in semidirect products."""
    wm = G_ad.units.width - 1

    def action(c, g):
        return D.concatenate([g[..., :wm], D.exp(c) * g[..., wm:-1], D.exp(-c) * g[..., -1:]],
                             -1)

    def unit_action(c, y):
        return D.concatenate([y[..., :wm], D.exp(-c) * y[..., wm:]], -1)
    return action, unit_action


def time_projection(f):
    """f x id: M x [0, inf) -> L x [0, inf) for a block projection f."""
    dom = CoordinateManifold(f.domain.block + _time_half(), name=f"{f.domain.name} x [0,inf)")
    cod = CoordinateManifold(f.codomain.block + _time_half())
    last = len(f.domain.block.factors)
    return Projection(dom, tuple(f.keep) + (last,), cod, name=f"{f.name} x id")


def edge_modification(f, H, require_tame=True):
    """E(M, f, H) = f1^(H_ad x| R+*) with f1 = f x id."""
    H_ad = adiabatic_groupoid(H)
    action, unit_action = _log_action(H_ad)
    SD = semidirect_product(H_ad, 1, action, unit_action, name=f"{H_ad.name} x| R+*")
    f1 = time_projection(f)
    E = pullback_groupoid(f1, SD, require_tame=require_tame, name=f"E({H.name})")
    E.meta.update({"kind": "edge", "f": f, "H": H, "H_ad": H_ad, "sd": SD, "f1": f1})
    return E


def edge_modification_ni(f, H, require_tame=True):
    """E_ni(M, f, H) = f^(H) x T."""
    P = pullback_groupoid(f, H, require_tame=require_tame)
    E = product_groupoid(P, dilation_groupoid(), name=f"E_ni({H.name})")
    E.meta.update({"kind": "edge_ni", "f": f, "H": H, "pullback": P})
    return E


def edge_ni_as_pullback(f, H, require_tame=True):
    """The same groupoid as f1^((H x [0, inf)) x| R+*), with its identification."""
    half = CoordinateManifold(_time_half(), name="[0,inf)")
    HT = product_groupoid(H, space_groupoid(half))
    wh = H.arrows.width
    wl = H.units.width

    def action(c, g):
        return D.concatenate([g[..., :wh], D.exp(-c) * g[..., wh:]], -1)

    def unit_action(c, y):
        return D.concatenate([y[..., :wl], D.exp(-c) * y[..., wl:]], -1)
    SD = semidirect_product(HT, 1, action, unit_action, name=f"({H.name} x [0,inf)) x| R+*")
    f1 = time_projection(f)
    P = pullback_groupoid(f1, SD, require_tame=require_tame)
    E = edge_modification_ni(f, H, require_tame=require_tame)
    wf = f.free_block.width

    def fwd(g):
        a, h, tt, c, b = (g[..., :wf], g[..., wf:wf + wh], g[..., wf + wh:wf + wh + 1],
                          g[..., wf + wh + 1:wf + wh + 2], g[..., wf + wh + 2:])
        return D.concatenate([a, h, b, D.exp(c) * tt, c], -1)

    def bwd(g):
        a, h, b = g[..., :wf], g[..., wf:wf + wh], g[..., wf + wh:wf + wh + wf]
        td, c = g[..., -2:-1], g[..., -1:]
        return D.concatenate([a, h, D.exp(-c) * td, c, b], -1)
    return P, morphism(P, E, fwd, lambda y: y, name="E_ni identification", inverse=bwd)


def comparison_morphism(E, E_ni):
    """Psi: E -> E_ni, (m, (y, X, t), c, m') -> ((m, exp(y, tX), m'), (e^c t, c)).

    At t = 0 the A(H) component collapses to the unit u(y)."""
    if E.meta.get("kind") != "edge" or E_ni.meta.get("kind") != "edge_ni":
        raise PairingError("expected an edge modification and its anisotropic variant")
    if E.meta["H"] is not E_ni.meta["H"] or E.meta["f"] is not E_ni.meta["f"]:
        raise PairingError("E and E_ni are built from different (f, H)")
    f, H = E.meta["f"], E.meta["H"]
    wf = f.free_block.width
    wl = H.units.width
    N = H.exp.ambient
    wsd = E.meta["sd"].arrows.width

    def on_arrows(g):
        a, sd, b = g[..., :wf], g[..., wf:wf + wsd], g[..., wf + wsd:]
        y, X, t, c = sd[..., :wl], sd[..., wl:wl + N], sd[..., wl + N:wl + N + 1], sd[..., -1:]
        h = H.exp.exp(y, t * X)
        return D.concatenate([a, h, b, D.exp(c) * t, c], -1)
    return morphism(E, E_ni, on_arrows, lambda y: y, name="Psi")


# ---------------------------------------------------------------- restrictions

@dataclass
class Restriction:
    """A restricted groupoid, a model groupoid and an explicit isomorphism."""
    restricted: LieGroupoid
    model: LieGroupoid
    iso: object

    def check(self, pairs=200, seed=0, tol=1e-10):
        from .groupoid import morphism_suite
        return morphism_suite(self.iso, pairs=pairs, seed=seed, tol=tol)


def open_half_line_pair():
    """(0, inf)^2 as the pair groupoid of R relabeled by t = e^tau."""
    P = pair_groupoid(CoordinateManifold(ModelBlock([LINE]), name="R"))
    units = CoordinateManifold(_time_half(), region=Region(lambda x: x[..., 0] > 0, "t>0"),
                               name="(0,inf)")
    out = relabel(P, units, D.exp, D.log, name="(0,inf)^2")
    return out


def adiabatic_restrictions(G_ad):
    """Zero part A(G) (vector bundle) and positive part G x (0, inf)."""
    G = G_ad.meta["base"]
    e = G.exp
    wm = G.units.width
    N = e.ambient
    zero = reduction(G_ad, zero_time(G_ad.units), name=f"{G_ad.name}|t=0")
    A = group_bundle(G.units, N, "additive")
    iso0 = morphism(zero, A, lambda g: g[..., :wm + N], lambda y: y[..., :wm],
                    name="t=0 part",
                    inverse=lambda v: D.concatenate([v, _zeros(v, 1)], -1))
    pos = reduction(G_ad, positive_times(G_ad.units), name=f"{G_ad.name}|t>0")
    half = CoordinateManifold(_time_half(), region=Region(lambda x: x[..., 0] > 0, "t>0"),
                              name="(0,inf)")
    GT = product_groupoid(G, space_groupoid(half), name=f"{G.name} x (0,inf)")
    wa = G.arrows.width

    def fwd(g):
        return D.concatenate([G_ad.underlying(g), g[..., -1:]], -1)

    def bwd(k):
        y, X = e.log(k[..., :wa])
        t = k[..., wa:]
        return D.concatenate([y, X / t, t], -1)
    iso1 = morphism(pos, GT, fwd, lambda y: y, name="t>0 part", inverse=bwd)
    return Restriction(zero, A, iso0), Restriction(pos, GT, iso1)


def edge_restrictions(E):
    """E|_{t=0} ~ f^(A(H) x| R+*) and E|_{t>0} ~ f^(H) x (0, inf)^2."""
    f, H = E.meta["f"], E.meta["H"]
    wf = f.free_block.width
    wl = H.units.width
    N = H.exp.ambient
    wsd = E.meta["sd"].arrows.width
    AH = group_bundle(H.units, N, "additive")
    AHR = semidirect_product(
        AH, 1, lambda c, g: D.concatenate([g[..., :wl], D.exp(c) * g[..., wl:]], -1),
        lambda c, y: y, name=f"A({H.name}) x| R+*")
    model0 = pullback_groupoid(f, AHR, require_tame=False,
                               name=f"f^(A({H.name}) x| R+*)")
    zero = reduction(E, zero_time(E.units), name=f"{E.name}|t=0")
    M = f.domain
    wm = M.width

    def split(g):
        a, sd, b = g[..., :wf], g[..., wf:wf + wsd], g[..., wf + wsd:]
        return a, sd[..., :wl], sd[..., wl:wl + N], sd[..., wl + N:wl + N + 1], sd[..., -1:], b

    def fwd0(g):
        a, y, X, t, c, b = split(g)
        return D.concatenate([a, y, X, c, b], -1)

    def bwd0(k):
        a, rest = k[..., :wf], k[..., wf:]
        y, X, c, b = rest[..., :wl], rest[..., wl:wl + N], rest[..., wl + N:wl + N + 1], \
            rest[..., wl + N + 1:]
        return D.concatenate([a, y, X, _zeros(k, 1), c, b], -1)
    iso0 = morphism(zero, model0, fwd0, lambda y: y[..., :wm], name="E at t=0", inverse=bwd0)

    pos = reduction(E, positive_times(E.units), name=f"{E.name}|t>0")
    P = pullback_groupoid(f, H, require_tame=False)
    T2 = open_half_line_pair()
    model1 = product_groupoid(P, T2, name=f"f^({H.name}) x (0,inf)^2")
    wp = P.arrows.width

    def fwd1(g):
        a, y, X, t, c, b = split(g)
        h = H.exp.exp(y, t * X)
        return D.concatenate([a, h, b, D.log(t), c + D.log(t)], -1)

    def bwd1(k):
        a, h, b = k[..., :wf], k[..., wf:wp - wf], k[..., wp - wf:wp]
        lt, ld = k[..., wp:wp + 1], k[..., wp + 1:]
        t = D.exp(lt)
        y, X = H.exp.log(h)
        return D.concatenate([a, y, X / t, t, ld - lt, b], -1)
    iso1 = morphism(pos, model1, fwd1, lambda y: y, name="E at t>0", inverse=bwd1)
    return Restriction(zero, model0, iso0), Restriction(pos, model1, iso1)


def edge_ni_restriction(E_ni):
    """E_ni|_{t>0} ~ f^(H) x (0, inf)^2."""
    P = E_ni.meta["pullback"]
    wp = P.arrows.width
    pos = reduction(E_ni, positive_times(E_ni.units), name=f"{E_ni.name}|t>0")
    T2 = open_half_line_pair()
    model = product_groupoid(P, T2, name=f"{P.name} x (0,inf)^2")

    def fwd(g):
        td, c = g[..., wp:wp + 1], g[..., wp + 1:]
        return D.concatenate([g[..., :wp], D.log(td) - c, D.log(td)], -1)

    def bwd(k):
        lr, ld = k[..., wp:wp + 1], k[..., wp + 1:]
        return D.concatenate([k[..., :wp], D.exp(ld), ld - lr], -1)
    return Restriction(pos, model, morphism(pos, model, fwd, lambda y: y,
                                            name="E_ni at t>0", inverse=bwd))
