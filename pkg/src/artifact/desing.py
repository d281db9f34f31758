"""Tame submanifolds, gluing and the desingularization of groupoids and algebroids.

Points of the blow-up [M:L] are (w, r, y): w on the normal sphere, r the
distance to L and y on L. The desingularization is the edge modification
over S = {r = 0} reduced to r < 1, glued along 0 < r < 1 to the reduction
of G off L.
"""

from dataclasses import dataclass

import numpy as np

from . import dual as D
from .algebroid import (Rescaled, TangentAlgebroid, b_tangent_halfline, direct_product,
                        lie_algebroid_of, thick_pullback, check_algebroid_iso, Section)
from .deformation import comparison_morphism, edge_modification, edge_modification_ni
from .errors import GluingError, GluingHypothesisError, SectionError, UnsupportedError
from .geometry import (HALF, LINE, CoordinateManifold, CornerFace, LinearSlice,
                       ModelBlock, Projection, Region, blow_up, manifold)
from .groupoid import (LieGroupoid, morphism, morphism_suite, pair_groupoid,
                       pullback_groupoid, reduction, relabel, group_bundle,
                       semidirect_product)
from .report import Report


# ---------------------------------------------------------------- tame submanifolds

@dataclass
class TameSubmanifold:
    """L inside M with tube pi: U -> L (U = normal vectors of length < 1).

    ``to_pb`` and ``from_pb`` identify G_U^U with pi^(H), H = G_L^L, whose
    arrows are stored as (a, h, b) with a, b the normal coordinates of the
    range and source. B is the algebroid over L with A|_U ~ pi^(B).
    """
    G: LieGroupoid
    ambient: CoordinateManifold
    locus: CoordinateManifold
    presentation: object
    tube: Projection
    H: LieGroupoid
    B: object
    to_pb: callable
    from_pb: callable
    blow: object = None
    name: str = "L"

    @property
    def normal_idx(self):
        return self.tube.free_idx

    @property
    def n(self):
        return len(self.presentation.normal)

    def radius(self, x):
        return D.norm(x[..., self.normal_idx])

    def embed(self, y):
        """Inclusion L -> M (zero normal coordinates)."""
        return self.tube.assemble(np.zeros(np.shape(y)[:-1] + (len(self.normal_idx),)), y)

    def tube_region(self):
        return Region(lambda x: np.linalg.norm(x[..., self.normal_idx], axis=-1) < 1, "U")

    def splitting(self, x):
        """g(u): the arrow from u to pi(u) (as an arrow of G)."""
        y = self.tube(x)
        z = np.zeros(np.shape(D.primal(x))[:-1] + (len(self.normal_idx),))
        return self.from_pb(D.concatenate([z, self.H.u(y), self.tube.free_part(x)], -1))

    def check(self, points=50, seed=0):
        """pi o embed = id, and A|_U ~ pi^(B) on anchors and brackets."""
        rng = np.random.default_rng(seed)
        y = self.locus.sample(rng, points)
        r1 = Report.from_residuals("pi(embed(y)) = y",
                                   np.max(np.abs(self.tube(self.embed(y)) - y), -1), 1e-10)
        x = self.ambient.restrict(self.tube_region()).sample(rng, points)
        A = lie_algebroid_of(self.G)
        TB = thick_pullback(self.tube, self.B, require_tame=False)
        r2 = check_algebroid_iso(A, TB, x, tol=1e-7, name="A|_U ~ pi^(B)")
        return Report.combine(f"tame submanifold[{self.name}]", [r1, r2])


def linear_slice(n, k):
    """G = pair(R^{n+k}) and L = {0} x R^k, normal coordinates first."""
    M = manifold(*([LINE] * (n + k)), name=f"R^{n + k}")
    G = pair_groupoid(M)
    pi = Projection(M, tuple(range(n, n + k)), name="pi")
    Lm = CoordinateManifold(pi.codomain.block, name=f"R^{k}")
    H = pair_groupoid(Lm)
    w = M.width

    def to_pb(g):
        p, q = g[..., :w], g[..., w:]
        return D.concatenate([pi.free_part(p), pi(p), pi(q), pi.free_part(q)], -1)

    def from_pb(a):
        kw = Lm.width
        fa, h, fb = a[..., :n], a[..., n:n + 2 * kw], a[..., n + 2 * kw:]
        return D.concatenate([pi.assemble(fa, h[..., :kw]), pi.assemble(fb, h[..., kw:])], -1)

    pres = LinearSlice(tuple(range(n)))
    L = TameSubmanifold(G, M, Lm, pres, pi, H, TangentAlgebroid(Lm), to_pb, from_pb,
                        name=f"R^{k} in R^{n + k}")
    L.blow = blow_up(M, pres)
    return G, L


def corner_face(n, k):
    """M = [0, inf)^n x R^k, L = {0} x R^k, and G = pi^(pair(L)), the pair
    groupoid of M written over L (pi is not tame on the corner, so the
    pull-back is built without the tameness check)."""
    M = manifold(*([HALF] * n + [LINE] * k), name=f"[0,inf)^{n} x R^{k}")
    pi = Projection(M, tuple(range(n, n + k)), name="pi")
    Lm = CoordinateManifold(pi.codomain.block, name=f"R^{k}")
    H = pair_groupoid(Lm)
    G = pullback_groupoid(pi, H, require_tame=False, name=f"pair_L({M.name})")
    pres = CornerFace(tuple(range(n)))
    L = TameSubmanifold(G, M, Lm, pres, pi, H, TangentAlgebroid(Lm), lambda g: g,
                        lambda g: g, name=f"face R^{k} of {M.name}")
    L.blow = blow_up(M, pres)
    return G, L


def canonical_form_check(G, L, g=None, pairs=200, seed=0, tol=1e-10):
    """Psi(c) = (r(c), g(r(c)) c g(d(c))^-1, d(c)) is an isomorphism G_U^U -> pi^(G_L^L)."""
    g = g or L.splitting
    rng = np.random.default_rng(seed)
    U = L.tube_region()
    GU = reduction(G, U, name=f"{G.name}|U")
    x = GU.units.sample(rng, 100)
    sec = g(x)
    bad_d = G.unit_distance(G.d(sec), x)
    bad_r = G.unit_distance(G.r(sec), L.embed(L.tube(x)))
    if np.any(bad_d > 1e-10) or np.any(bad_r > 1e-10):
        i = int(np.argmax(np.maximum(bad_d, bad_r)))
        raise SectionError("g must satisfy d(g(u)) = u and r(g(u)) = pi(u)",
                           witness={"point": x[i].tolist()})
    pi = Projection(GU.units, L.tube.keep, name="pi|U")
    target = pullback_groupoid(pi, L.H, require_tame=False, name=f"pi^({L.H.name})")
    nw = len(L.normal_idx)

    def psi(c):
        rc, dc = G.r(c), G.d(c)
        core = G.mul(G.mul(g(rc), c), G.inv(g(dc)))
        h = L.to_pb(core)[..., nw:-nw]
        return D.concatenate([L.tube.free_part(rc), h, L.tube.free_part(dc)], -1)

    def back(a):
        fa, h, fb = a[..., :nw], a[..., nw:-nw], a[..., -nw:]
        core = L.from_pb(D.concatenate([np.zeros_like(fa), h, np.zeros_like(fb)], -1))
        rc = L.tube.assemble(fa, L.H.r(h))
        dc = L.tube.assemble(fb, L.H.d(h))
        return G.mul(G.mul(G.inv(g(rc)), core), g(dc))
    phi = morphism(GU, target, psi, lambda y: y, name="canonical form", inverse=back)
    rep = morphism_suite(phi, pairs=pairs, seed=seed, tol=tol)
    x = GU.units.sample(rng, 100)
    fix = Report.from_residuals("Psi fixes units", target.distance(psi(G.u(x)), target.u(x)),
                                tol)
    return Report.combine("canonical form", [rep, fix])


# ---------------------------------------------------------------- gluing

@dataclass
class GlueData:
    """G1 and G2 with units in common coordinates, overlap region U and
    phi: (G1)_U^U -> (G2)_U^U with inverse phi_inv (identity on units)."""
    G1: LieGroupoid
    G2: LieGroupoid
    U: Region
    phi: callable
    phi_inv: callable
    name: str = "glued"


def _reach(G, x, target, rng, depth=3, fanout=4, probes=16):
    """Sampled orbit exploration: for each x, a point of the region ``target``
    reached from x by breadth-first arrow sampling or by the connector."""
    n = len(x)
    found = np.full((n, x.shape[-1]), np.nan)
    frontier = [(np.arange(n), x)]
    for _ in range(depth):
        nxt = []
        for idx, pts in frontier:
            for _ in range(fanout):
                try:
                    a = G.sample_d_fiber(pts, rng)
                except Exception:
                    continue
                y = D.primal(G.r(a))
                hit = target(y) & np.isnan(found[idx, 0])
                found[idx[hit]] = y[hit]
                nxt.append((idx, y))
        frontier = nxt
    if G.connector is not None:
        cand = G.units.sample(rng, probes * 8)
        cand = cand[target(cand)][:probes]
        for y in cand:
            ys = np.broadcast_to(y, x.shape)
            a = G.connector(x, ys)
            ok = ~np.isnan(a).any(-1) & np.isnan(found[:, 0])
            found[ok] = y
    return found


def check_glue_hypothesis(data, samples=100, seed=0):
    """Sampled form of: no point of the overlap meets both the G1-saturation of
    the complement of U in M1 and the G2-saturation of its complement in M2."""
    rng = np.random.default_rng(seed)
    G1, G2, U = data.G1, data.G2, data.U
    x = G1.units.restrict(U).sample(rng, samples)
    c1 = _reach(G1, x, lambda y: G1.units.contains(y) & ~U.contains(y), rng)
    c2 = _reach(G2, x, lambda y: G2.units.contains(y) & ~U.contains(y), rng)
    bad = ~np.isnan(c1[:, 0]) & ~np.isnan(c2[:, 0])
    res = bad.astype(float)
    rep = Report.from_residuals(
        "gluing hypothesis", res, 0.0,
        lambda i: {"point": x[i].tolist(), "reaches_M1_minus_U": c1[i].tolist(),
                   "reaches_M2_minus_U": c2[i].tolist()},
        samples=samples)
    return rep


def glue(data, units=None, check=True, samples=100, seed=0):
    """G1 u_phi G2. Arrows are stored as [chart id, coordinates, zero padding];
    an arrow is kept in chart 0 whenever both its ends lie in M1."""
    if check:
        rep = check_glue_hypothesis(data, samples=samples, seed=seed)
        if not rep.passed:
            raise GluingHypothesisError("the orbit hypothesis of the gluing fails",
                                        witness=rep.witness)
    G1, G2 = data.G1, data.G2
    w1, w2 = G1.arrows.width, G2.arrows.width
    W = max(w1, w2)
    M1, M2 = G1.units, G2.units
    if units is None:
        U1, U2 = M1, M2
        units = CoordinateManifold(M1.blocks, Region(
            lambda x: U1.contains(x) | U2.contains(x), "M1 u M2"), name=data.name + " units")
    arrows = CoordinateManifold(ModelBlock([LINE] * (1 + W)), name=data.name)

    def pack(cid, a):
        a = np.asarray(D.primal(a), dtype=float)
        out = np.zeros(a.shape[:-1] + (1 + W,))
        out[..., 0] = cid
        out[..., 1:1 + a.shape[-1]] = a
        return out

    def c1(g):
        return g[..., 1:1 + w1]

    def c2(g):
        return g[..., 1:1 + w2]

    def ends(g):
        g = np.asarray(g, dtype=float)
        zero = g[..., 0] == 0
        wu = units.width
        r = np.where(zero[..., None], _safe(G1.r, c1(g), zero, wu),
                     _safe(G2.r, c2(g), ~zero, wu))
        d = np.where(zero[..., None], _safe(G1.d, c1(g), zero, wu),
                     _safe(G2.d, c2(g), ~zero, wu))
        return r, d

    def canonical(g):
        g = np.array(g, dtype=float)
        one = g[..., 0] == 1
        if one.any():
            r, d = ends(g)
            move = one & M1.contains(r) & M1.contains(d)
            if move.any():
                g[move] = pack(0, data.phi_inv(c2(g[move])))
        return g

    def to_chart1(g):
        g = np.array(g, dtype=float)
        zero = g[..., 0] == 0
        if zero.any():
            r, d = ends(g[zero])
            if not (U_contains(r) & U_contains(d)).all():
                raise GluingError("arrow of G1 does not lie over the overlap")
            g[zero] = pack(1, data.phi(c1(g[zero])))
        return g

    U_contains = data.U.contains

    def d(g):
        return ends(g)[1]

    def r(g):
        return ends(g)[0]

    def u(x):
        x = np.asarray(x, dtype=float)
        in1 = M1.contains(x)
        out = np.zeros(x.shape[:-1] + (1 + W,))
        if in1.any():
            out[in1] = pack(0, G1.u(x[in1]))
        if (~in1).any():
            out[~in1] = pack(1, G2.u(x[~in1]))
        return out

    def inv(g):
        g = np.asarray(g, dtype=float)
        out = np.array(g)
        zero = g[..., 0] == 0
        if zero.any():
            out[zero] = pack(0, G1.inv(c1(g[zero])))
        if (~zero).any():
            out[~zero] = pack(1, G2.inv(c2(g[~zero])))
        return canonical(out)

    def mul(g, h):
        g, h = np.broadcast_arrays(canonical(g), canonical(h))
        g, h = np.array(g), np.array(h)
        out = np.zeros_like(g)
        both0 = (g[..., 0] == 0) & (h[..., 0] == 0)
        if both0.any():
            out[both0] = pack(0, G1._mul(c1(g[both0]), c1(h[both0])))
        rest = ~both0
        if rest.any():
            a, b = to_chart1(g[rest]), to_chart1(h[rest])
            out[rest] = canonical(pack(1, G2._mul(c2(a), c2(b))))
        return out

    def distance(g, h):
        g, h = np.broadcast_arrays(canonical(g), canonical(h))
        dist = np.max(np.abs(g - h), axis=-1)
        return np.where(g[..., 0] == h[..., 0], dist, np.inf)

    def sampler(x, rng):
        x = np.asarray(x, dtype=float)
        in1 = M1.contains(x)
        in2 = M2.contains(x)
        use1 = in1 & (~in2 | (rng.random(len(x)) < 0.5))
        out = np.zeros(x.shape[:-1] + (1 + W,))
        if use1.any():
            out[use1] = pack(0, G1.sample_d_fiber(x[use1], rng))
        if (~use1).any():
            out[~use1] = pack(1, G2.sample_d_fiber(x[~use1], rng))
        return canonical(out)

    connector = None
    if G1.connector is not None and G2.connector is not None:
        def connector(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            out = np.full(x.shape[:-1] + (1 + W,), np.nan)
            both1 = M1.contains(x) & M1.contains(y)
            if both1.any():
                out[both1] = pack(0, G1.connector(x[both1], y[both1]))
            todo = np.isnan(out[..., 1]) & M2.contains(x) & M2.contains(y)
            if todo.any():
                out[todo] = pack(1, G2.connector(x[todo], y[todo]))
            ok = ~np.isnan(out).any(-1)
            out[ok] = canonical(out[ok])
            return out

    Gl = LieGroupoid(units, arrows, d, r, u, inv, mul, name=data.name, sampler=sampler,
                     connector=connector, distance=distance,
                     meta={"kind": "glued", "data": data})
    Gl.charts = [(G1, Region(lambda x: M1.contains(x), "M1")),
                 (G2, Region(lambda x: M2.contains(x) & ~M1.contains(x), "M2 - M1"))]
    Gl.canonical = canonical
    Gl.pack = pack
    Gl.to_chart1 = to_chart1
    return Gl


def _safe(fn, a, mask, width):
    """fn on the rows selected by mask, NaN elsewhere (charts differ in layout)."""
    out = np.full(a.shape[:-1] + (width,), np.nan)
    if mask.any():
        out[mask] = D.primal(fn(a[mask]))
    return out


# ---------------------------------------------------------------- desingularization

def _boundary_projection(L):
    if getattr(L, "_pi_s", None) is None:
        S = L.blow.boundary
        nf = len(S.block.factors)
        L._pi_s = Projection(S, tuple(range(1, nf)), L.locus, name="pi_S")
    return L._pi_s


def _unit_maps(L):
    """E units (w, y, t) <-> blow-up coordinates (w, r, y)."""
    nw = L.blow.total.block.factors[0].width

    def fwd(e):
        return D.concatenate([e[..., :nw], e[..., -1:], e[..., nw:-1]], -1)

    def bwd(z):
        return D.concatenate([z[..., :nw], z[..., nw + 1:], z[..., nw:nw + 1]], -1)
    return fwd, bwd


def _regions(L):
    nw = L.blow.total.block.factors[0].width

    def below1(z):
        return z[..., nw] < 1

    def positive(z):
        return z[..., nw] > 0
    inner = Region(below1, "r<1")
    outer = Region(positive, "r>0")
    overlap = Region(lambda z: below1(z) & positive(z), "0<r<1")
    return inner, outer, overlap


def _off_locus(G, L):
    idx = L.normal_idx
    return reduction(G, Region(lambda x: np.linalg.norm(x[..., idx], axis=-1) > 0, "M-L"),
                     name=f"{G.name}|M-L")


def _phi_maps(L, E, anisotropic=False):
    """phi: E over 0 < t < 1 -> G off L, and its inverse."""
    H = L.H
    nw = L.blow.total.block.factors[0].width
    kw = L.locus.width
    N = H.exp.ambient
    wh = H.arrows.width

    if not anisotropic:
        def phi(e):
            w1, y, X, t, c, w2 = (e[..., :nw], e[..., nw:nw + kw], e[..., nw + kw:nw + kw + N],
                                  e[..., nw + kw + N:nw + kw + N + 1],
                                  e[..., nw + kw + N + 1:nw + kw + N + 2], e[..., -nw:])
            h = H.exp.exp(y, t * X)
            return L.from_pb(D.concatenate([t * w1, h, D.exp(c) * t * w2], -1))

        def phi_inv(g):
            p = L.to_pb(g)
            a, h, b = p[..., :nw], p[..., nw:nw + wh], p[..., nw + wh:]
            t, td = D.norm(a)[..., None], D.norm(b)[..., None]
            y, X = H.exp.log(h)
            with np.errstate(divide="ignore", invalid="ignore"):
                return D.concatenate([a / t, y, X / t, t, D.log(td / t), b / td], -1)
    else:
        def phi(e):
            w1, h, w2 = e[..., :nw], e[..., nw:nw + wh], e[..., nw + wh:2 * nw + wh]
            td, s = e[..., -2:-1], e[..., -1:]
            tr = D.exp(-s) * td
            return L.from_pb(D.concatenate([tr * w1, h, td * w2], -1))

        def phi_inv(g):
            p = L.to_pb(g)
            a, h, b = p[..., :nw], p[..., nw:nw + wh], p[..., nw + wh:]
            tr, td = D.norm(a)[..., None], D.norm(b)[..., None]
            with np.errstate(divide="ignore", invalid="ignore"):
                return D.concatenate([a / tr, h, b / td, td, D.log(td / tr)], -1)
    return phi, phi_inv


def _build(G, L, anisotropic, check, require_tame):
    b = L.blow
    fS = _boundary_projection(L)
    if anisotropic:
        E = edge_modification_ni(fS, L.H, require_tame=require_tame)
    else:
        E = edge_modification(fS, L.H, require_tame=require_tame)
    fwd, bwd = _unit_maps(L)
    inner, outer, overlap = _regions(L)
    total = b.total
    Erel = relabel(E, total, fwd, bwd, name=E.name)
    G1 = reduction(Erel, inner, name=f"{E.name}|r<1")
    kappa, lift = b.blow_down, b.lift
    G2 = relabel(_off_locus(G, L), total.restrict(outer), lift, kappa,
                 name=f"{G.name}|M-L")
    phi, phi_inv = _phi_maps(L, E, anisotropic)
    suffix = "_ni" if anisotropic else ""
    data = GlueData(G1, G2, overlap, phi, phi_inv, name=f"[[{G.name}:L]]{suffix}")
    out = glue(data, units=total, check=check)
    out.meta.update({"kind": "desing" + suffix, "L": L, "E": E, "G": G, "G1": G1, "G2": G2,
                     "phi": phi, "phi_inv": phi_inv})
    return out


def desingularize(G, L, check=True):
    """[[G:L]] = E(S, pi, H)_{U1}^{U1} u_phi G_{M-L}^{M-L} over [M:L]."""
    if L.blow is None:
        L.blow = blow_up(L.ambient, L.presentation)
    tame = isinstance(L.presentation, LinearSlice)
    return _build(G, L, False, check, tame)


def desingularize_ni(G, L, check=True, glued=None):
    """[[G:L]]_ni and the morphism Psi: [[G:L]] -> [[G:L]]_ni over the identity."""
    if glued is None:
        glued = desingularize(G, L, check=check)
    tame = isinstance(L.presentation, LinearSlice)
    ni = _build(G, L, True, check, tame)
    cmp = comparison_morphism(glued.meta["E"], ni.meta["E"])

    def on_arrows(g):
        g = glued.canonical(g)
        out = np.array(g)
        zero = g[..., 0] == 0
        w = glued.meta["G1"].arrows.width
        if zero.any():
            out[zero] = ni.pack(0, cmp(g[zero][..., 1:1 + w]))
        if (~zero).any():
            out[~zero] = g[~zero]
        return ni.canonical(out)
    psi = morphism(glued, ni, on_arrows, lambda z: z, name="Psi")
    return ni, psi


def hyperbolic_desingularize(G, L, check=True):
    """Desingularization along a corner face, with S a spherical simplex bundle."""
    if not isinstance(L.presentation, CornerFace):
        raise UnsupportedError("expected a corner face presentation")
    return desingularize(G, L, check=check)


# ---------------------------------------------------------------- structure checks

def _s_region(L):
    nw = L.blow.total.block.factors[0].width

    def sampler(rng, n, base):
        z = base.sample(rng, n, strata=False)
        z[..., nw] = 0.0
        return z
    return Region(lambda z: np.abs(z[..., nw]) <= 1e-12, "S", closed=True, sampler=sampler)


def desing_restrictions(glued):
    """Explicit isomorphisms [[G:L]]_S ~ pi^(A(H) x| R+*) and
    [[G:L]]_{M-L} ~ G_{M-L}^{M-L}."""
    L, E = glued.meta["L"], glued.meta["E"]
    H = L.H
    fS = E.meta["f"]
    nw = L.blow.total.block.factors[0].width
    kw, N = L.locus.width, H.exp.ambient
    if glued.meta["kind"] == "desing_ni":
        iso_s = _ni_restriction_s(glued)
        return iso_s, _restriction_off(glued)
    AH = group_bundle(H.units, N, "additive")
    AHR = semidirect_product(
        AH, 1, lambda c, g: D.concatenate([g[..., :kw], D.exp(c) * g[..., kw:]], -1),
        lambda c, y: y, name=f"A({H.name}) x| R+*")
    model_s = pullback_groupoid(fS, AHR, require_tame=False,
                                name=f"pi^(A({H.name}) x| R+*)")
    on_s = reduction(glued, _s_region(L), name=f"{glued.name}|S")
    w1 = glued.meta["G1"].arrows.width
    t_at = nw + kw + N

    def fwd_s(g):
        e = g[..., 1:1 + w1]
        return np.concatenate([e[..., :t_at], e[..., t_at + 1:]], -1)

    def bwd_s(a):
        e = np.concatenate([a[..., :t_at], np.zeros(a.shape[:-1] + (1,)), a[..., t_at:]], -1)
        return glued.pack(0, e)

    def units_s(z):
        return np.concatenate([z[..., :nw], z[..., nw + 1:]], -1)
    iso_s = morphism(on_s, model_s, fwd_s, units_s, name="[[G:L]] at S", inverse=bwd_s)

    return iso_s, _restriction_off(glued)


def _ni_restriction_s(glued):
    """[[G:L]]_ni at S is pi^(H) x R, the second factor being log-scales."""
    from .groupoid import product_groupoid
    L, E = glued.meta["L"], glued.meta["E"]
    nw = L.blow.total.block.factors[0].width
    P = pullback_groupoid(E.meta["f"], L.H, require_tame=False)
    line = group_bundle(CoordinateManifold(ModelBlock(())), 1, "additive")
    model = product_groupoid(P, line, name=f"pi^({L.H.name}) x R")
    on_s = reduction(glued, _s_region(L), name=f"{glued.name}|S")
    w1 = glued.meta["G1"].arrows.width

    def fwd(g):
        e = g[..., 1:1 + w1]
        return np.concatenate([e[..., :-2], e[..., -1:]], -1)

    def bwd(a):
        e = np.concatenate([a[..., :-1], np.zeros(a.shape[:-1] + (1,)), a[..., -1:]], -1)
        return glued.pack(0, e)

    def units(z):
        return np.concatenate([z[..., :nw], z[..., nw + 1:]], -1)
    return morphism(on_s, model, fwd, units, name="[[G:L]]_ni at S", inverse=bwd)


def _restriction_off(glued):
    L, G = glued.meta["L"], glued.meta["G"]
    inner, outer, overlap = _regions(L)
    off = reduction(glued, outer, name=f"{glued.name}|M-L")
    model_o = _off_locus(G, L)
    kappa = L.blow.blow_down
    w2 = glued.meta["G2"].arrows.width

    def fwd_o(g):
        g = glued.to_chart1(glued.canonical(g))
        return g[..., 1:1 + w2]

    def bwd_o(a):
        return glued.canonical(glued.pack(1, a))
    return morphism(off, model_o, fwd_o, kappa, name="[[G:L]] off S", inverse=bwd_o)


def s_invariance(glued, samples=300, seed=0):
    """Arrows starting on S end on S."""
    L = glued.meta["L"]
    rng = np.random.default_rng(seed)
    x = L.blow.total.restrict(_s_region(L)).sample(rng, samples)
    a = glued.sample_d_fiber(x, rng)
    nw = L.blow.total.block.factors[0].width
    return Report.from_residuals("S invariant", np.abs(glued.r(a)[..., nw]), 1e-12,
                                 lambda i: {"arrow": a[i].tolist()})


def global_chart_iso(glued):
    """For the pair-groupoid and face models the whole [[G:L]] is E(S, pi, H)
    (with relabeled units): chart 1 arrows are moved by phi^{-1}."""
    E = glued.meta["E"]
    fwd, bwd = _unit_maps(glued.meta["L"])
    Erel = relabel(E, glued.units, fwd, bwd, name=E.name)
    phi_inv = glued.meta["phi_inv"]
    phi = glued.meta["phi"]
    w1 = glued.meta["G1"].arrows.width

    def on_arrows(g):
        g = glued.canonical(g)
        out = np.zeros(g.shape[:-1] + (w1,))
        zero = g[..., 0] == 0
        if zero.any():
            out[zero] = g[zero][..., 1:1 + w1]
        if (~zero).any():
            w2 = glued.meta["G2"].arrows.width
            out[~zero] = D.primal(phi_inv(g[~zero][..., 1:1 + w2]))
        return out

    def back(e):
        inner = glued.meta["G1"].units
        ends_in = inner.contains(D.primal(Erel.r(e))) & inner.contains(D.primal(Erel.d(e)))
        out = np.zeros(e.shape[:-1] + (glued.arrows.width,))
        if ends_in.any():
            out[ends_in] = glued.pack(0, e[ends_in])
        if (~ends_in).any():
            out[~ends_in] = glued.pack(1, phi(e[~ends_in]))
        return glued.canonical(out)
    return Erel, morphism(glued, Erel, on_arrows, lambda z: z, name="global chart",
                          inverse=back)


# ---------------------------------------------------------------- algebroids

def _p_projection(L):
    """p = (pi, r_L): [M:L] -> L x [0, inf)."""
    total = L.blow.total
    nf = len(total.block.factors)
    cod = CoordinateManifold(L.locus.block + ModelBlock([HALF]))
    return Projection(total, tuple(range(2, nf)) + (1,), cod, name="p")


def desing_algebroid(A, L):
    """[[A:L]] in its local form p^(r_L (B [x] T[0, inf)))."""
    p = _p_projection(L)
    prod = direct_product(L.B, TangentAlgebroid(CoordinateManifold(ModelBlock([HALF]))))
    scaled = Rescaled(lambda z: z[..., -1], prod, name=f"r({prod.name})")
    out = thick_pullback(p, scaled, require_tame=isinstance(L.presentation, LinearSlice))
    out.name = f"[[{A.name}:L]]"
    out.n_locus = L.B.ambient
    return out


def desing_algebroid_ni(A, L):
    """[[A:L]]_ni = p^(B [x] bT[0, inf)): the B summand is not rescaled."""
    p = _p_projection(L)
    prod = direct_product(L.B, b_tangent_halfline())
    out = thick_pullback(p, prod, require_tame=isinstance(L.presentation, LinearSlice))
    out.name = f"[[{A.name}:L]]_ni"
    out.n_locus = L.B.ambient
    return out


def sample_blowup(L, n, seed=0, on_s=None):
    """Points of [M:L] with at least ``on_s`` of them on S (default n // 5)."""
    rng = np.random.default_rng(seed)
    total = L.blow.total
    z = total.sample(rng, n)
    nw = total.block.factors[0].width
    on_s = n // 5 if on_s is None else on_s
    have = int(np.sum(z[..., nw] == 0))
    if have < on_s:
        idx = np.flatnonzero(z[..., nw] > 0)[:on_s - have]
        z[idx, nw] = 0.0
    return z


def check_desing_algebroid_iso(G, L, points=100, seed=0, glued=None, anisotropic=False,
                               tol=1e-5):
    """A([[G:L]]) ~ [[A(G):L]] (or the _ni pair) by frame alignment at points of [M:L]."""
    if glued is None:
        glued = desingularize_ni(G, L)[0] if anisotropic else desingularize(G, L)
    AG = lie_algebroid_of(glued)
    A = lie_algebroid_of(G)
    target = desing_algebroid_ni(A, L) if anisotropic else desing_algebroid(A, L)
    z = sample_blowup(L, points, seed)
    nw = L.blow.total.block.factors[0].width
    rep = check_algebroid_iso(AG, target, z, tol=tol, name=f"A({glued.name}) ~ {target.name}")
    rep.details["points_on_S"] = int(np.sum(z[..., nw] == 0))
    return rep


def _radius_of(W):
    f = W.f  # p = (pi, r): radius is the last kept coordinate

    def r(z):
        return f(z)[..., -1:]
    return r


def ideal_check(W, Wni, z, tol=1e-6, coefficients=True, seed=0):
    """For X in W (included in W_ni) and Y in W_ni, the B component of [X, Y]
    vanishes on S. Generators are used, and when ``coefficients`` is set also
    function multiples of the r-scaled generators of W."""
    nb = W.n_locus
    rad = _radius_of(W)

    def inc(X):
        def f(x):
            v = X(x)
            return D.concatenate([rad(x) * v[..., :nb], v[..., nb:]], -1)
        return Section(Wni, f, f"i({X.name})")
    mW = np.shape(D.primal(W.frame(z[:1])))[-1]
    mN = np.shape(D.primal(Wni.frame(z[:1])))[-1]
    eW = [W.frame_section(i) for i in range(mW)]
    eN = [Wni.frame_section(j) for j in range(mN)]
    rng = np.random.default_rng(seed)
    width = z.shape[-1]
    a, b = rng.standard_normal(width), rng.standard_normal(width)

    def f1(x):
        return D.sin(D.sum(x * a, -1)) + 2.0

    def f2(x):
        return D.cos(D.sum(x * b, -1)) * D.sum(x * x, -1)
    res = []
    scaled = range(nb + 1)  # B and radial generators carry the factor r
    for i in range(mW):
        for j in range(mN):
            X, Y = inc(eW[i]), eN[j]
            res.append(np.max(np.abs(D.primal(Wni.bracket_at(X, Y, z))[..., :nb]), -1))
            if coefficients and i in scaled:
                fX = inc(Section(W, lambda x, i=i: f1(x)[..., None] * eW[i](x)))
                gY = Section(Wni, lambda x, j=j: f2(x)[..., None] * eN[j](x))
                res.append(np.max(np.abs(D.primal(Wni.bracket_at(fX, gY, z))[..., :nb]), -1))
    return Report.from_residuals("ideal: B component of [W, W_ni] on S", np.ravel(res), tol,
                                 points=int(len(z)))


def ideal_counterexample(W, Wni, z):
    """B component on S of [X, gY] for X the first sphere generator and gY a
    function multiple of the first B generator of W_ni. It is X(g), nonzero
    in general: the ideal property holds only against the r-scaled summands."""
    nb = W.n_locus
    X = Wni.frame_section(nb + 1)
    e0 = Wni.frame_section(0)
    nw = z.shape[-1]

    def g(x):
        return D.sin(3.0 * D.sum(x * np.arange(1, nw + 1), -1))
    Y = Section(Wni, lambda x: g(x)[..., None] * e0(x), "g e_0")
    return np.max(np.abs(D.primal(Wni.bracket_at(X, Y, z))[..., :nb]), -1)


def hk_groupoid(k):
    """H_k = pair(R^k)_ad x| R+*."""
    from .deformation import adiabatic_groupoid, _log_action
    H = pair_groupoid(manifold(*([LINE] * k), name=f"R^{k}"))
    Had = adiabatic_groupoid(H)
    action, unit_action = _log_action(Had)
    return semidirect_product(Had, 1, action, unit_action, name=f"H_{k}")


def face_model_iso(glued):
    """For a codimension-one face, [[G:L]] ~ H_k and [[G:L]]_ni ~ (R^k)^2 x T.

    The sphere factor is the single point +1 and is dropped."""
    from .groupoid import dilation_groupoid, product_groupoid
    L = glued.meta["L"]
    if L.n != 1 or not isinstance(L.presentation, CornerFace):
        raise UnsupportedError("the face model needs a codimension-one corner face")
    k = L.locus.width
    Erel, to_e = global_chart_iso(glued)
    ni = glued.meta["kind"] == "desing_ni"
    if ni:
        model = product_groupoid(L.H, dilation_groupoid(), name=f"(R^{k})^2 x T")
    else:
        model = hk_groupoid(k)

    wh = L.H.arrows.width

    def fwd(g):
        e = to_e(g)
        if ni:
            return np.concatenate([e[..., 1:1 + wh], e[..., -2:]], -1)
        return e[..., 1:-1]

    def back(h):
        one = np.ones(h.shape[:-1] + (1,))
        if ni:
            e = np.concatenate([one, h[..., :wh], one, h[..., wh:]], -1)
        else:
            e = np.concatenate([one, h, one], -1)
        return to_e.inverse(e)

    def on_units(z):
        return D.concatenate([z[..., 2:], z[..., 1:2]], -1)
    return morphism(glued, model, fwd, on_units, name="face model", inverse=back)
