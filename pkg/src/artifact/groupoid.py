"""Lie groupoids on coordinate models, their constructors and axiom suites.

Arrows and units are batched arrays in embedding coordinates. Structural
maps are plain evaluators that accept numpy or dual arrays, so the algebroid
module can differentiate through them.
"""

from dataclasses import dataclass

import numpy as np

from . import dual as D
from .errors import (ActionError, ArtifactError, ComposabilityError, RankError,
                     SamplingError, ShapeError, TamenessError, UnsupportedError)
from .geometry import (HALF, LINE, POINT, CoordinateManifold, ModelBlock,
                       Projection, Region, SmoothMap, check_tame_submersion)
from .report import Report

COMPOSE_TOL = 1e-9
AXIOM_TOL = 1e-10


def _lead(x):
    return np.shape(D.primal(x))[:-1]


def _zeros(x, k):
    return np.zeros(_lead(x) + (k,))


def blockdiag(a, b):
    lead = np.broadcast_shapes(np.shape(D.primal(a))[:-2], np.shape(D.primal(b))[:-2])
    n1, m1 = np.shape(D.primal(a))[-2:]
    n2, m2 = np.shape(D.primal(b))[-2:]
    top = D.concatenate([a, np.zeros(lead + (n1, m2))], -1)
    bot = D.concatenate([np.zeros(lead + (n2, m1)), b], -1)
    return D.concatenate([top, bot], -2)


def identity_frame(x, n):
    return np.broadcast_to(np.eye(n), _lead(x) + (n, n))


@dataclass
class ExpData:
    """Exponential data: exp(x, X) is an arrow with d = x and velocity X at t = 0.

    ``ambient`` is the number of coordinates of algebroid vectors X, and
    ``frame(x)`` returns generating vectors (..., ambient, m). The optional
    ``ad_mul(x2, X1, X2, t)`` returns Z with exp(tZ) = exp(tX1) exp(tX2) for
    exp(tX2) based at x2, ``ad_inv(x, X, t)`` returns Z with
    exp(tZ) = exp(x, tX)^{-1}, and ``log(g)`` returns (d(g), X) with
    exp(d(g), X) = g.
    """
    ambient: int
    exp: callable
    frame: callable = None
    ad_mul: callable = None
    ad_inv: callable = None
    log: callable = None

    def frame_at(self, x):
        if self.frame is None:
            return identity_frame(x, self.ambient)
        return self.frame(x)


@dataclass
class FiberChart:
    """Parameterization theta -> arrow of the d-fiber over x.

    ``params`` is a ModelBlock of LINE and SPHERE factors for theta. The
    optional ``density(x, theta)`` gives the Haar density relative to the
    product of Lebesgue and round measures; when absent it is computed from
    the Euclidean metric in the exp frame.
    """
    params: ModelBlock
    chart: callable
    density: callable = None


class LieGroupoid:
    def __init__(self, units, arrows, d, r, u, inv, mul, *, name="G", exp=None,
                 sampler=None, connector=None, fiber_chart=None, fiber_measure=None,
                 tol=COMPOSE_TOL, meta=None, distance=None):
        self.units = units
        self.arrows = arrows
        self.name = name
        self.d = SmoothMap(arrows, units, d, name=f"d[{name}]")
        self.r = SmoothMap(arrows, units, r, name=f"r[{name}]")
        self.u = SmoothMap(units, arrows, u, name=f"u[{name}]")
        self.inv = SmoothMap(arrows, arrows, inv, name=f"inv[{name}]")
        self._mul = mul
        self.exp = exp
        self._sampler = sampler
        self.connector = connector
        self.fiber_chart = fiber_chart
        self.fiber_measure = fiber_measure
        self.tol = tol
        self.meta = dict(meta or {})
        self._distance = distance

    def __repr__(self):
        return f"LieGroupoid({self.name}: {self.arrows!r} => {self.units!r})"

    def composable_gap(self, g, h):
        return np.max(np.abs(D.primal(self.d(g)) - D.primal(self.r(h))), axis=-1)

    def mul(self, g, h, check=True):
        """Product gh, defined when d(g) = r(h) within the composability tolerance."""
        if check:
            gap = np.atleast_1d(self.composable_gap(g, h))
            if np.any(~(gap <= self.tol)):
                i = int(np.argmax(~(gap <= self.tol)))
                gp = np.atleast_2d(D.primal(g))
                hp = np.atleast_2d(D.primal(h))
                raise ComposabilityError(
                    f"arrows not composable in {self.name} (gap {gap[i]:.3e})",
                    witness={"g": gp[min(i, len(gp) - 1)].tolist(),
                             "h": hp[min(i, len(hp) - 1)].tolist(), "gap": float(gap[i])})
        return self._mul(g, h)

    def distance(self, g, h):
        if self._distance is not None:
            return self._distance(g, h)
        return np.max(np.abs(D.primal(g) - D.primal(h)), axis=-1)

    def unit_distance(self, x, y):
        return np.max(np.abs(D.primal(x) - D.primal(y)), axis=-1, initial=0.0)

    # ---- sampling

    def sample_d_fiber(self, x, rng):
        if self._sampler is None:
            raise SamplingError(f"{self.name} has no d-fiber sampler")
        return self._sampler(np.asarray(x, dtype=float), rng)

    def sample_arrows(self, rng, n, strata=True):
        x = self.units.sample(rng, n, strata=strata)
        return self.sample_d_fiber(x, rng)

    def sample_composable(self, rng, n, k=2, strata=True):
        """k-tuples (g1, ..., gk) with d(g_i) = r(g_{i+1})."""
        out = [self.sample_arrows(rng, n, strata)]
        for _ in range(k - 1):
            back = self.sample_d_fiber(D.primal(self.d(out[-1])), rng)
            out.append(D.primal(self.inv(back)))
        return out


@dataclass
class GroupoidMorphism:
    source: LieGroupoid
    target: LieGroupoid
    on_arrows: SmoothMap
    on_units: SmoothMap
    name: str = "phi"
    inverse: object = None

    def __call__(self, g):
        return self.on_arrows(g)


def morphism(source, target, on_arrows, on_units, name="phi", inverse=None):
    return GroupoidMorphism(source, target,
                            SmoothMap(source.arrows, target.arrows, on_arrows, name=name),
                            SmoothMap(source.units, target.units, on_units, name=name + "_0"),
                            name, inverse)


# ---------------------------------------------------------------- suites

def _law(name, tol, fn, reports):
    try:
        res, wit = fn()
        reports.append(Report.from_residuals(name, res, tol, wit))
    except ArtifactError as e:
        reports.append(Report(name, False, float("inf"), tol,
                              {"error": str(e), **(e.witness or {})}))


def _rows(**arrays):
    def wit(i):
        return {k: np.atleast_2d(D.primal(v))[i].tolist() for k, v in arrays.items()}
    return wit


def axiom_suite(G, pairs=500, triples=200, seed=0, tol=AXIOM_TOL, rng=None):
    """Sampled groupoid axioms: units, inverses, d/r of products, associativity."""
    if rng is None:
        rng = np.random.default_rng(seed)
    x = G.units.sample(rng, pairs)
    g, h = G.sample_composable(rng, pairs, 2)
    a, b, c = G.sample_composable(rng, triples, 3)
    ud, dist = G.unit_distance, G.distance
    reps = []
    _law("d(u(x)) = x", tol, lambda: (ud(G.d(G.u(x)), x), _rows(x=x)), reps)
    _law("r(u(x)) = x", tol, lambda: (ud(G.r(G.u(x)), x), _rows(x=x)), reps)
    _law("g u(d(g)) = g", tol,
         lambda: (dist(G.mul(g, G.u(G.d(g))), g), _rows(g=g)), reps)
    _law("u(r(g)) g = g", tol,
         lambda: (dist(G.mul(G.u(G.r(g)), g), g), _rows(g=g)), reps)
    _law("d(g^-1) = r(g)", tol, lambda: (ud(G.d(G.inv(g)), G.r(g)), _rows(g=g)), reps)
    _law("r(g^-1) = d(g)", tol, lambda: (ud(G.r(G.inv(g)), G.d(g)), _rows(g=g)), reps)
    _law("g g^-1 = u(r(g))", tol,
         lambda: (dist(G.mul(g, G.inv(g)), G.u(G.r(g))), _rows(g=g)), reps)
    _law("g^-1 g = u(d(g))", tol,
         lambda: (dist(G.mul(G.inv(g), g), G.u(G.d(g))), _rows(g=g)), reps)
    _law("d(gh) = d(h)", tol, lambda: (ud(G.d(G.mul(g, h)), G.d(h)), _rows(g=g, h=h)), reps)
    _law("r(gh) = r(g)", tol, lambda: (ud(G.r(G.mul(g, h)), G.r(g)), _rows(g=g, h=h)), reps)
    _law("(gh)k = g(hk)", tol,
         lambda: (dist(G.mul(G.mul(a, b), c), G.mul(a, G.mul(b, c))),
                  _rows(g=a, h=b, k=c)), reps)
    return Report.combine(f"axioms[{G.name}]", reps, pairs=pairs, triples=triples)


def morphism_suite(phi, pairs=200, seed=0, tol=AXIOM_TOL, rng=None):
    """Sampled functor laws for a groupoid morphism (and round trips if invertible)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    S, T = phi.source, phi.target
    g, h = S.sample_composable(rng, pairs, 2)
    x = S.units.sample(rng, pairs)
    f, f0 = phi.on_arrows, phi.on_units
    reps = []
    _law("phi(gh) = phi(g)phi(h)", tol,
         lambda: (T.distance(f(S.mul(g, h)), T.mul(f(g), f(h))), _rows(g=g, h=h)), reps)
    _law("d(phi(g)) = phi(d(g))", tol,
         lambda: (T.unit_distance(T.d(f(g)), f0(S.d(g))), _rows(g=g)), reps)
    _law("r(phi(g)) = phi(r(g))", tol,
         lambda: (T.unit_distance(T.r(f(g)), f0(S.r(g))), _rows(g=g)), reps)
    _law("phi(u(x)) = u(phi(x))", tol,
         lambda: (T.distance(f(S.u(x)), T.u(f0(x))), _rows(x=x)), reps)
    _law("phi(g^-1) = phi(g)^-1", tol,
         lambda: (T.distance(f(S.inv(g)), T.inv(f(g))), _rows(g=g)), reps)
    if phi.inverse is not None:
        inv = phi.inverse
        _law("phi^-1(phi(g)) = g", tol,
             lambda: (S.distance(inv(f(g)), g), _rows(g=g)), reps)
        k = T.sample_arrows(rng, pairs)
        _law("phi(phi^-1(k)) = k", tol,
             lambda: (T.distance(f(inv(k)), k), _rows(k=k)), reps)
    return Report.combine(f"morphism[{phi.name}]", reps, pairs=pairs)


def structure_maps_tame(G, samples=200, seed=0):
    """Tameness of d and r on arrows sampled over stratified units."""
    rng = np.random.default_rng(seed)
    pts = G.sample_arrows(rng, samples)
    reps = [check_tame_submersion(G.d, points=pts), check_tame_submersion(G.r, points=pts)]
    reps[0].name, reps[1].name = "d tame", "r tame"
    return Report.combine(f"tame[{G.name}]", reps)


# ---------------------------------------------------------------- constructors

def _sphere_free(block):
    return not any(f.kind == "sphere" for f in block.factors)


def _line_only(block):
    return all(f.kind == "line" for f in block.factors)


def pair_groupoid(M, fibered_over=None):
    """Pair groupoid M x M; for M with corners pass a tame map to fiber over."""
    if fibered_over is not None:
        G = pullback_groupoid(fibered_over, space_groupoid(fibered_over.codomain))
        G.name = f"pair_f({M.name})"
        return G
    if M.rank > 0:
        raise RankError(f"{M.name} has corners; the pair groupoid is not a Lie groupoid "
                        "in the tame sense (use fibered_over=...)")
    blk = M.block
    w = blk.width
    arrows = CoordinateManifold(blk + blk, name=f"{M.name}^2")

    def d(g):
        return g[..., w:]

    def r(g):
        return g[..., :w]

    def u(x):
        return D.concatenate([x, x], -1)

    def inv(g):
        return D.concatenate([g[..., w:], g[..., :w]], -1)

    def mul(g, h):
        return D.concatenate([g[..., :w], h[..., w:]], -1)

    def exp(x, X):
        return D.concatenate([blk.retract(x + X), x], -1)

    flat = _line_only(blk)
    ed = ExpData(
        ambient=w, exp=exp,
        frame=None if _sphere_free(blk) else blk.frame,
        ad_mul=(lambda x2, X1, X2, t: X1 + X2) if flat else None,
        ad_inv=(lambda x, X, t: -X) if flat else None,
        log=(lambda g: (g[..., w:], g[..., :w] - g[..., w:])) if flat else None,
    )

    def sampler(x, rng):
        return np.concatenate([M.sample(rng, len(x)), x], -1)

    def connector(x, y):
        return np.concatenate([y, x], -1)

    fc = FiberChart(blk, lambda x, th: D.concatenate([th, x], -1), None)
    return LieGroupoid(M, arrows, d, r, u, inv, mul, name=f"pair({M.name})", exp=ed,
                       sampler=sampler, connector=connector, fiber_chart=fc,
                       meta={"kind": "pair"})


def space_groupoid(M):
    """Only identity arrows: gg = g and mul is defined on (g, g) only."""

    def ident(x):
        return x

    def mul(g, h):
        return g

    ed = ExpData(ambient=0, exp=lambda x, X: x,
                 frame=lambda x: np.zeros(_lead(x) + (0, 0)),
                 ad_mul=lambda x2, X1, X2, t: X1, ad_inv=lambda x, X, t: X,
                 log=lambda g: (g, _zeros(g, 0)))

    def connector(x, y):
        out = np.array(x, dtype=float)
        out[np.max(np.abs(x - y), axis=-1, initial=0.0) > COMPOSE_TOL] = np.nan
        return out

    fc = FiberChart(POINT, lambda x, th: x, None)
    return LieGroupoid(M, M, ident, ident, ident, ident, mul, name=f"space({M.name})",
                       exp=ed, sampler=lambda x, rng: np.array(x), connector=connector,
                       fiber_chart=fc, meta={"kind": "space"})


def group_bundle(M, k, group="additive"):
    """Bundle of groups over M with fiber R^k or R^k x| R+* (dilations).

    R+* is stored through its logarithm sigma, so (v, s) is (v, sigma) with
    s = e^sigma and (v, s)(w, t) = (v + s w, s t).
    """
    if group not in ("additive", "dilation"):
        raise UnsupportedError(f"unsupported fiber group {group!r}")
    blk = M.block
    w = blk.width
    extra = k + (1 if group == "dilation" else 0)
    arrows = CoordinateManifold(blk + ModelBlock([LINE] * extra))

    def base(g):
        return g[..., :w]

    def u(x):
        return D.concatenate([x, _zeros(x, extra)], -1)

    if group == "additive":
        def inv(g):
            return D.concatenate([g[..., :w], -g[..., w:]], -1)

        def mul(g, h):
            return D.concatenate([g[..., :w], g[..., w:] + h[..., w:]], -1)

        ed = ExpData(ambient=k, exp=lambda x, X: D.concatenate([x, X], -1),
                     ad_mul=lambda x2, X1, X2, t: X1 + X2,
                     ad_inv=lambda x, X, t: -X,
                     log=lambda g: (g[..., :w], g[..., w:]))
    else:
        def inv(g):
            v, s = g[..., w:w + k], g[..., w + k:]
            return D.concatenate([g[..., :w], -D.exp(-s) * v, -s], -1)

        def mul(g, h):
            v, s = g[..., w:w + k], g[..., w + k:]
            v2, s2 = h[..., w:w + k], h[..., w + k:]
            return D.concatenate([g[..., :w], v + D.exp(s) * v2, s + s2], -1)

        def exp(x, X):
            V, a = X[..., :k], X[..., k:]
            return D.concatenate([x, D.phi1(a) * V, a], -1)

        def ad_mul(x2, X1, X2, t):
            V1, a1 = X1[..., :k], X1[..., k:]
            V2, a2 = X2[..., :k], X2[..., k:]
            ta1, ta2 = t * a1, t * a2
            W = (D.phi1(ta1) * V1 + D.exp(ta1) * D.phi1(ta2) * V2) / D.phi1(ta1 + ta2)
            return D.concatenate([W, a1 + a2], -1)

        def log(g):
            v, s = g[..., w:w + k], g[..., w + k:]
            return g[..., :w], D.concatenate([v / D.phi1(s), s], -1)

        ed = ExpData(ambient=k + 1, exp=exp, ad_mul=ad_mul,
                     ad_inv=lambda x, X, t: -X, log=log)

    def sampler(x, rng):
        n = len(x)
        fib = rng.standard_normal((n, k))
        if group == "dilation":
            fib = np.concatenate([fib, rng.uniform(-1.5, 1.5, (n, 1))], -1)
        return np.concatenate([x, fib], -1)

    def connector(x, y):
        out = D.primal(u(x)).copy()
        out[np.max(np.abs(x - y), axis=-1, initial=0.0) > COMPOSE_TOL] = np.nan
        return out

    fc = FiberChart(ModelBlock([LINE] * extra), lambda x, th: D.concatenate([x, th], -1))
    label = "R^%d" % k + (" x| R+*" if group == "dilation" else "")
    return LieGroupoid(M, arrows, base, base, u, inv, mul, name=f"bundle({label})",
                       exp=ed, sampler=sampler, connector=connector, fiber_chart=fc,
                       meta={"kind": "bundle", "group": group, "k": k})


def product_groupoid(G1, G2, name=None):
    a1 = G1.arrows.width
    m1 = G1.units.width
    region = None
    if G1.units.region is not None or G2.units.region is not None:
        U1, U2 = G1.units, G2.units
        region = Region(lambda x: U1.contains(x[..., :m1]) & U2.contains(x[..., m1:]),
                        "product", sampler=lambda rng, n, base: np.concatenate(
                            [U1.sample(rng, n), U2.sample(rng, n)], -1))
    units = CoordinateManifold(G1.units.block + G2.units.block, region)
    arrows = CoordinateManifold(G1.arrows.block + G2.arrows.block)

    def split(g):
        return g[..., :a1], g[..., a1:]

    def usplit(x):
        return x[..., :m1], x[..., m1:]

    def d(g):
        g1, g2 = split(g)
        return D.concatenate([G1.d(g1), G2.d(g2)], -1)

    def r(g):
        g1, g2 = split(g)
        return D.concatenate([G1.r(g1), G2.r(g2)], -1)

    def u(x):
        x1, x2 = usplit(x)
        return D.concatenate([G1.u(x1), G2.u(x2)], -1)

    def inv(g):
        g1, g2 = split(g)
        return D.concatenate([G1.inv(g1), G2.inv(g2)], -1)

    def mul(g, h):
        g1, g2 = split(g)
        h1, h2 = split(h)
        return D.concatenate([G1._mul(g1, h1), G2._mul(g2, h2)], -1)

    ed = None
    if G1.exp is not None and G2.exp is not None:
        e1, e2 = G1.exp, G2.exp
        n1 = e1.ambient

        def exp(x, X):
            x1, x2 = usplit(x)
            return D.concatenate([e1.exp(x1, X[..., :n1]), e2.exp(x2, X[..., n1:])], -1)

        def frame(x):
            x1, x2 = usplit(x)
            return blockdiag(e1.frame_at(x1), e2.frame_at(x2))

        ad_mul = ad_inv = log = None
        if e1.ad_mul and e2.ad_mul:
            def ad_mul(x2, X1, X2, t):
                p, q = usplit(x2)
                return D.concatenate([e1.ad_mul(p, X1[..., :n1], X2[..., :n1], t),
                                      e2.ad_mul(q, X1[..., n1:], X2[..., n1:], t)], -1)

            def ad_inv(x, X, t):
                p, q = usplit(x)
                return D.concatenate([e1.ad_inv(p, X[..., :n1], t),
                                      e2.ad_inv(q, X[..., n1:], t)], -1)
        if e1.log and e2.log:
            def log(g):
                g1, g2 = split(g)
                y1, X1 = e1.log(g1)
                y2, X2 = e2.log(g2)
                return D.concatenate([y1, y2], -1), D.concatenate([X1, X2], -1)
        ed = ExpData(n1 + e2.ambient, exp, frame, ad_mul, ad_inv, log)

    def sampler(x, rng):
        x1, x2 = usplit(x)
        return np.concatenate([G1.sample_d_fiber(x1, rng), G2.sample_d_fiber(x2, rng)], -1)

    connector = None
    if G1.connector and G2.connector:
        def connector(x, y):
            (x1, x2), (y1, y2) = usplit(x), usplit(y)
            return np.concatenate([G1.connector(x1, y1), G2.connector(x2, y2)], -1)

    fc = None
    if G1.fiber_chart and G2.fiber_chart:
        c1, c2 = G1.fiber_chart, G2.fiber_chart
        p1 = c1.params.width

        def chart(x, th):
            x1, x2 = usplit(x)
            return D.concatenate([c1.chart(x1, th[..., :p1]), c2.chart(x2, th[..., p1:])], -1)

        density = None
        if c1.density or c2.density:
            def density(x, th):
                x1, x2 = usplit(x)
                one = np.ones(np.broadcast_shapes(_lead(x), _lead(th)))
                v1 = c1.density(x1, th[..., :p1]) if c1.density else one
                v2 = c2.density(x2, th[..., p1:]) if c2.density else one
                return v1 * v2
        fc = FiberChart(c1.params + c2.params, chart, density)
    return LieGroupoid(units, arrows, d, r, u, inv, mul,
                       name=name or f"{G1.name} x {G2.name}", exp=ed, sampler=sampler,
                       connector=connector, fiber_chart=fc,
                       meta={"kind": "product", "factors": (G1, G2)})


def pullback_groupoid(f, H, require_tame=True, samples=100, seed=0, name=None):
    """Fibered pull-back f^(H) for a block projection f: M -> L.

    Arrows are stored as (m_free, h, m'_free) where h is an arrow of H, so
    (m, h, m') has d = m' and r = m with f(m) = r(h), f(m') = d(h).
    """
    if require_tame:
        rep = check_tame_submersion(f, samples=samples, seed=seed)
        if not rep.passed:
            raise TamenessError(f"{f.name} is not a tame submersion", witness=rep.witness)
    if not isinstance(f, Projection):
        raise UnsupportedError("pull-backs are implemented along block projections")
    if f.codomain.block != H.units.block:
        raise ShapeError("codomain of f must match the units of H")
    M = f.domain
    fb = f.free_block
    wf = fb.width
    wh = H.arrows.width
    arrows = CoordinateManifold(fb + H.arrows.block + fb,
                                name=f"{M.name} x_f {H.arrows.name} x_f {M.name}")

    def parts(g):
        return g[..., :wf], g[..., wf:wf + wh], g[..., wf + wh:]

    def d(g):
        _, h, b = parts(g)
        return f.assemble(b, H.d(h))

    def r(g):
        a, h, _ = parts(g)
        return f.assemble(a, H.r(h))

    def u(m):
        fr = f.free_part(m)
        return D.concatenate([fr, H.u(f(m)), fr], -1)

    def inv(g):
        a, h, b = parts(g)
        return D.concatenate([b, H.inv(h), a], -1)

    def mul(g, k):
        a, h, _ = parts(g)
        _, h2, b = parts(k)
        return D.concatenate([a, H._mul(h, h2), b], -1)

    ed = None
    if H.exp is not None:
        he = H.exp
        nh = he.ambient

        def exp(m, X):
            fr = f.free_part(m)
            return D.concatenate([fb.retract(fr + X[..., nh:]), he.exp(f(m), X[..., :nh]), fr],
                                 -1)

        frame = None
        if he.frame is not None or not _sphere_free(fb):
            def frame(m):
                return blockdiag(he.frame_at(f(m)), fb.frame(f.free_part(m)))

        ad_mul = ad_inv = log = None
        if _line_only(fb) and he.ad_mul and he.ad_inv:
            def ad_mul(m2, X1, X2, t):
                return D.concatenate([he.ad_mul(f(m2), X1[..., :nh], X2[..., :nh], t),
                                      X1[..., nh:] + X2[..., nh:]], -1)

            def ad_inv(m, X, t):
                return D.concatenate([he.ad_inv(f(m), X[..., :nh], t), -X[..., nh:]], -1)
        if _line_only(fb) and he.log:
            def log(g):
                a, h, b = parts(g)
                y, xi = he.log(h)
                return f.assemble(b, y), D.concatenate([xi, a - b], -1)
        ed = ExpData(nh + wf, exp, frame, ad_mul, ad_inv, log)

    def sampler(m, rng):
        h = H.sample_d_fiber(D.primal(f(m)), rng)
        a = fb.sample(rng, len(m))
        return np.concatenate([a, h, f.free_part(m)], -1)

    connector = None
    if H.connector is not None:
        def connector(x, y):
            h = H.connector(f(x), f(y))
            return np.concatenate([f.free_part(y), h, f.free_part(x)], -1)

    fc = None
    if H.fiber_chart is not None:
        hc = H.fiber_chart
        ph = hc.params.width

        def chart(m, th):
            return D.concatenate([th[..., ph:], hc.chart(f(m), th[..., :ph]),
                                  D.broadcast_to(f.free_part(m), _lead(th) + (wf,))], -1)

        density = None
        if hc.density is not None:
            def density(m, th):
                return hc.density(f(m), th[..., :ph])
        fc = FiberChart(hc.params + fb, chart, density)
    return LieGroupoid(M, arrows, d, r, u, inv, mul, name=name or f"f^({H.name})", exp=ed,
                       sampler=sampler, connector=connector, fiber_chart=fc,
                       meta={"kind": "pullback", "f": f, "H": H})


def reduction(G, A, name=None, probe=64, seed=0):
    """Reduction G_A^A to a region A of the units, with a sampled invariance flag."""
    units = G.units.restrict(A)
    arrows = G.arrows.restrict(Region(
        lambda g: A.contains(D.primal(G.d(g))) & A.contains(D.primal(G.r(g))),
        f"arrows over {A.name}"))

    def sampler(x, rng):
        out = G.sample_d_fiber(x, rng)
        ok = A.contains(D.primal(G.r(out)))
        for _ in range(100):
            if ok.all():
                break
            idx = np.flatnonzero(~ok)
            new = G.sample_d_fiber(x[idx], rng)
            out[idx] = new
            ok[idx] = A.contains(D.primal(G.r(new)))
        if not ok.all() and G.connector is not None:
            idx = np.flatnonzero(~ok)
            y = units.sample(rng, len(idx))
            new = G.connector(x[idx], y)
            good = ~np.isnan(new).any(-1)
            out[idx[good]] = new[good]
            ok[idx[good]] = True
        if not ok.all():
            raise SamplingError(f"could not sample arrows of the reduction to {A.name}")
        return out

    connector = G.connector
    R = LieGroupoid(units, arrows, G.d.value, G.r.value, G.u.value, G.inv.value, G._mul,
                    name=name or f"{G.name}|{A.name}", exp=G.exp, sampler=sampler,
                    connector=connector, fiber_chart=None, tol=G.tol,
                    meta={"kind": "reduction", "parent": G, "region": A},
                    distance=G._distance)
    rng = np.random.default_rng(seed)
    x = units.sample(rng, probe)
    hit = A.contains(D.primal(G.r(G.sample_d_fiber(x, rng))))
    R.invariant = bool(hit.all())
    if R.invariant:
        R.fiber_chart = G.fiber_chart
    return R


def relabel(G, new_units, fwd, bwd, name=None):
    """Same arrows, units re-coordinatized by fwd (old -> new) and bwd (new -> old)."""

    def d(g):
        return fwd(G.d(g))

    def r(g):
        return fwd(G.r(g))

    def u(x):
        return G.u(bwd(x))

    ed = None
    if G.exp is not None:
        e = G.exp
        ed = ExpData(
            e.ambient, lambda x, X: e.exp(bwd(x), X),
            (lambda x: e.frame(bwd(x))) if e.frame else None,
            (lambda x2, X1, X2, t: e.ad_mul(bwd(x2), X1, X2, t)) if e.ad_mul else None,
            (lambda x, X, t: e.ad_inv(bwd(x), X, t)) if e.ad_inv else None,
            (lambda g: (fwd(e.log(g)[0]), e.log(g)[1])) if e.log else None)
    connector = None
    if G.connector is not None:
        def connector(x, y):
            return G.connector(D.primal(bwd(x)), D.primal(bwd(y)))
    fc = None
    if G.fiber_chart is not None:
        c = G.fiber_chart
        fc = FiberChart(c.params, lambda x, th: c.chart(bwd(x), th),
                        (lambda x, th: c.density(bwd(x), th)) if c.density else None)
    return LieGroupoid(new_units, G.arrows, d, r, u, G.inv.value, G._mul,
                       name=name or G.name, exp=ed,
                       sampler=lambda x, rng: G.sample_d_fiber(D.primal(bwd(x)), rng),
                       connector=connector, fiber_chart=fc, tol=G.tol,
                       meta={**G.meta, "relabel_of": G}, distance=G._distance)


def semidirect_product(G, gamma_dim, action, unit_action, gamma_sampler=None, check=True,
                       samples=60, seed=0, name=None):
    """G x| Gamma for Gamma = R^q written additively (R+* through its logarithm).

    ``action(c, g)`` and ``unit_action(c, x)`` give the automorphism attached
    to c in Gamma. Arrows (g, c) have r = r(g) and d = c^{-1}.d(g), so that
    (g1, c1)(g2, c2) = (g1 c1(g2), c1 c2) is defined exactly when
    d(g1) = c1.r(g2).
    """
    q = gamma_dim
    wa = G.arrows.width
    arrows = CoordinateManifold(G.arrows.block + ModelBlock([LINE] * q))
    if gamma_sampler is None:
        def gamma_sampler(rng, n):
            return rng.uniform(-1.5, 1.5, (n, q))

    if check:
        _check_action(G, action, unit_action, gamma_sampler, samples, seed)

    def parts(g):
        return g[..., :wa], g[..., wa:]

    def d(g):
        a, c = parts(g)
        return unit_action(-c, G.d(a))

    def r(g):
        return G.r(g[..., :wa])

    def u(x):
        return D.concatenate([G.u(x), _zeros(x, q)], -1)

    def inv(g):
        a, c = parts(g)
        return D.concatenate([action(-c, G.inv(a)), -c], -1)

    def mul(g, h):
        a, c = parts(g)
        b, e = parts(h)
        return D.concatenate([G._mul(a, action(c, b)), c + e], -1)

    ed = None
    if G.exp is not None:
        ge = G.exp

        def exp(x, X):
            a = X[..., ge.ambient:]
            return D.concatenate([ge.exp(unit_action(a, x), X[..., :ge.ambient]), a], -1)

        frame = None
        if ge.frame is not None:
            def frame(x):
                return blockdiag(ge.frame_at(x), identity_frame(x, q))
        ed = ExpData(ge.ambient + q, exp, frame)

    def sampler(x, rng):
        c = gamma_sampler(rng, len(x))
        g = G.sample_d_fiber(D.primal(unit_action(c, x)), rng)
        return np.concatenate([g, c], -1)

    connector = None
    if G.connector is not None:
        def connector(x, y):
            return np.concatenate([G.connector(x, y), np.zeros(x.shape[:-1] + (q,))], -1)

    fc = None
    if G.fiber_chart is not None:
        gc = G.fiber_chart
        p = gc.params.width

        def chart(x, th):
            c = th[..., p:]
            xs = unit_action(c, D.broadcast_to(x, _lead(th) + (x.shape[-1],)))
            return D.concatenate([gc.chart(xs, th[..., :p]), c], -1)
        fc = FiberChart(gc.params + ModelBlock([LINE] * q), chart)
    return LieGroupoid(G.units, arrows, d, r, u, inv, mul, name=name or f"{G.name} x| Gamma",
                       exp=ed, sampler=sampler, connector=connector, fiber_chart=fc,
                       tol=G.tol, meta={"kind": "semidirect", "base": G, "q": q,
                                        "action": action, "unit_action": unit_action})


def _check_action(G, action, unit_action, gamma_sampler, samples, seed, tol=1e-9):
    rng = np.random.default_rng(seed)
    reps = []
    for _ in range(3):
        c = gamma_sampler(rng, 1)
        c2 = gamma_sampler(rng, 1)
        phi = morphism(G, G, lambda g, c=c: action(c, g), lambda x, c=c: unit_action(c, x),
                       name="action")
        reps.append(morphism_suite(phi, pairs=samples, rng=rng, tol=tol))
        g = G.sample_arrows(rng, samples)
        res = G.distance(action(c, action(c2, g)), action(c + c2, g))
        reps.append(Report.from_residuals("c(c'(g)) = (cc')(g)", res, tol))
    rep = Report.combine("action", reps)
    if not rep.passed:
        raise ActionError("the action is not by groupoid automorphisms", witness=rep.witness)


def dilation_groupoid():
    """The action groupoid [0, inf) x| R+* of dilations.

    Arrows (t, sigma) with s = e^sigma: d = t, r = s^{-1} t, and
    (t', s1)(t, s2) = (t, s1 s2) whenever t' = s2^{-1} t.
    """
    units = CoordinateManifold(ModelBlock([HALF]), name="[0,inf)")
    arrows = CoordinateManifold(ModelBlock([HALF, LINE]), name="T")

    def d(g):
        return g[..., :1]

    def r(g):
        return D.exp(-g[..., 1:]) * g[..., :1]

    def u(x):
        return D.concatenate([x, _zeros(x, 1)], -1)

    def inv(g):
        return D.concatenate([r(g), -g[..., 1:]], -1)

    def mul(g, h):
        return D.concatenate([h[..., :1], g[..., 1:] + h[..., 1:]], -1)

    ed = ExpData(1, lambda x, X: D.concatenate([x, X], -1))

    def sampler(x, rng):
        return np.concatenate([x, rng.uniform(-1.5, 1.5, x.shape[:-1] + (1,))], -1)

    def connector(x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.log(x / y)
        both0 = (np.abs(x) <= COMPOSE_TOL) & (np.abs(y) <= COMPOSE_TOL)
        s = np.where(both0, 0.0, s)
        s[~np.isfinite(s)] = np.nan
        return np.concatenate([x, s], -1)

    fc = FiberChart(ModelBlock([LINE]), lambda x, th: D.concatenate(
        [D.broadcast_to(x, _lead(th) + (1,)), th], -1))
    return LieGroupoid(units, arrows, d, r, u, inv, mul, name="T", exp=ed, sampler=sampler,
                       connector=connector, fiber_chart=fc, meta={"kind": "dilation"})
