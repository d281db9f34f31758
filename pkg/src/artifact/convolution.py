"""Discretized convolution algebras on d-fibers.

Fibers are integrated on Gauss-Legendre tensor grids: LINE parameters on
[-R, R], circle parameters on uniform angle grids. The Haar system comes
from the Euclidean metric on A(G) in its canonical coordinates, carried to
each d-fiber by right translation; on R+* factors written as log-scale this
is dt/t.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dual as D
from .errors import CapabilityError, TruncationError
from .geometry import LINE, ModelBlock
from .report import Report


def thread_count():
    try:
        return max(1, int(os.environ.get("ARTIFACT_THREADS", "1")))
    except ValueError:
        return 1


def map_rows(fn, x, threads=None, chunk=64):
    """fn applied to row chunks of x, possibly on a thread pool; rows are
    independent so the result does not depend on the chunking."""
    threads = thread_count() if threads is None else threads
    n = len(x)
    if threads <= 1 or n <= chunk:
        return fn(x)
    parts = [x[i:i + chunk] for i in range(0, n, chunk)]
    with ThreadPoolExecutor(threads) as ex:
        out = list(ex.map(fn, parts))
    return np.concatenate(out)


# ---------------------------------------------------------------- grids

def _factor_grid(f, order, R):
    if f.kind == "line":
        t, w = np.polynomial.legendre.leggauss(order)
        return R * t[:, None], R * w
    if f.kind == "sphere" and f.p == 0:
        pts = np.array([[1.0]]) if f.clipped else np.array([[1.0], [-1.0]])
        return pts, np.ones(len(pts))
    if f.kind == "sphere" and f.p == 1 and not f.clipped:
        a = 2 * np.pi * np.arange(order) / order
        return np.stack([np.cos(a), np.sin(a)], -1), np.full(order, 2 * np.pi / order)
    if f.kind == "sphere" and f.p == 2 and not f.clipped:
        z, wz = np.polynomial.legendre.leggauss(order)
        m = 2 * order
        a = 2 * np.pi * np.arange(m) / m
        s = np.sqrt(1 - z * z)
        pts = np.stack([np.outer(s, np.cos(a)), np.outer(s, np.sin(a)),
                        np.outer(z, np.ones(m))], -1).reshape(-1, 3)
        return pts, np.outer(wz, np.full(m, 2 * np.pi / m)).ravel()
    raise CapabilityError(f"no quadrature rule for the parameter factor {f!r}")


def tensor_grid(params, order, R):
    """Nodes (Q, width) and weights (Q,) for a block of fiber parameters."""
    nodes, weights = np.zeros((1, 0)), np.ones(1)
    for f in params.factors:
        p, w = _factor_grid(f, order, R)
        nodes = np.concatenate([np.repeat(nodes, len(p), 0), np.tile(p, (len(nodes), 1))], -1)
        weights = np.repeat(weights, len(w)) * np.tile(w, len(weights))
    return nodes, weights


# ---------------------------------------------------------------- Haar densities

def haar_density(G, chart, params, x, th):
    """Density of the right-invariant volume in chart parameters.

    With V the right translates of the ambient algebroid directions at
    h = chart(x, th) and J the chart derivative along an orthonormal
    parameter basis, J = V C and the density is sqrt(det C^T C)."""
    e = G.exp
    if e is None:
        raise CapabilityError(f"{G.name} has no exp data for its Haar system")
    h = D.primal(chart(x, th))
    basis = params.tangent_basis(th)
    if basis.shape[-1] == 0:
        return np.ones(h.shape[:-1])
    J = np.stack([D.primal(D.derivative(lambda s: chart(x, s), th, basis[..., :, j]))
                  for j in range(basis.shape[-1])], -1)
    r = D.primal(G.r(h))
    N = e.ambient
    zero = np.zeros(h.shape[:-1] + (N,))
    cols = []
    for j in range(N):
        v = np.zeros_like(zero)
        v[..., j] = 1.0
        cols.append(D.primal(D.derivative(lambda X: G._mul(e.exp(r, X), h), zero, v)))
    V = np.stack(cols, -1)
    C = np.linalg.pinv(V) @ J
    return np.sqrt(np.abs(np.linalg.det(np.swapaxes(C, -1, -2) @ C)))


@dataclass
class FiberQuadrature:
    """Quadrature on the d-fibers of G.

    The chart defaults to the exponential chart h = exp(x, th) when G has a
    global linear frame, else the fiber chart of G. ``density`` may be given
    as a callable (x, th) -> density; otherwise it is the Haar density of
    the Euclidean metric in the canonical frame."""
    G: object
    order: int = 32
    R: float = 8.0
    chart: object = None
    params: object = None
    density: object = None

    def __post_init__(self):
        G = self.G
        if self.chart is None:
            e = G.exp
            if e is not None and e.frame is None:
                self.chart = e.exp
                self.params = ModelBlock([LINE] * e.ambient)
            elif G.fiber_chart is not None:
                self.chart = G.fiber_chart.chart
                self.params = G.fiber_chart.params
                if self.density is None and G.fiber_chart.density is not None:
                    self.density = G.fiber_chart.density
            else:
                raise CapabilityError(f"{G.name} has no fiber parameterization")
        self.theta, self.weights = tensor_grid(self.params, self.order, self.R)

    def nodes(self, x):
        """Arrows (m, Q, W) of the fibers over x and weights (m, Q)."""
        x = np.asarray(x, dtype=float)
        m, Q = len(x), len(self.theta)
        xs = np.repeat(x, Q, 0)
        th = np.tile(self.theta, (m, 1))
        h = np.asarray(D.primal(self.chart(xs, th)))
        if self.density is None:
            dens = haar_density(self.G, self.chart, self.params, xs, th)
        else:
            dens = np.asarray(D.primal(self.density(xs, th))) * np.ones(m * Q)
        w = (np.tile(self.weights, m) * dens).reshape(m, Q)
        return h.reshape(m, Q, -1), w

    def volume(self, x):
        return self.nodes(x)[1].sum(-1)


# ---------------------------------------------------------------- kernels

def arrow_size(G):
    """|X| for g = exp(d(g), X): the Euclidean size in the canonical frame."""
    e = G.exp
    if e is None or e.log is None:
        raise CapabilityError(f"{G.name} has no logarithm to measure arrows")

    def size(g):
        return np.linalg.norm(D.primal(e.log(g)[1]), axis=-1)
    return size


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class Kernel:
    """A function on arrows with declared support radius (in ``size``)."""
    G: object
    fn: object
    support: float = np.inf
    compact: bool = False
    name: str = "k"
    size: object = field(default=None, compare=False)

    def __call__(self, g):
        return np.asarray(self.fn(np.asarray(g, dtype=float)), dtype=float)

    def truncate(self, radius, start=0.875):
        """Multiply by a smooth cutoff equal to 1 below start*radius and 0 beyond radius."""
        size = self.size or arrow_size(self.G)
        fn = self.fn
        a = start * radius

        def cut(g):
            s = size(g)
            return fn(g) * (1.0 - smooth_step((s - a) / (radius - a)))
        return Kernel(self.G, cut, radius, True, f"{self.name}|{radius:g}", size)

    def support_check(self, samples=500, seed=0, scale=None):
        """|k| < 1e-12 at sampled arrows beyond the declared support."""
        size = self.size or arrow_size(self.G)
        rng = np.random.default_rng(seed)
        g = self.G.sample_arrows(rng, samples)
        if scale is not None:
            g = g * scale
        s = size(g)
        outside = s > self.support
        res = np.where(outside, np.abs(self(g)), 0.0)
        return Report.from_residuals(f"support[{self.name}]", res, 1e-12,
                                     lambda i: {"arrow": g[i].tolist()}, samples=samples)


def gaussian_kernel(G, sigma, center=0.0, name=None):
    """exp(-|X - c|^2 / 2 sigma^2) / (2 pi sigma^2)^(N/2) in the exponential chart."""
    e = G.exp
    size = arrow_size(G)

    def fn(g):
        X = D.primal(e.log(g)[1]) - center
        N = X.shape[-1]
        return np.exp(-np.sum(X * X, -1) / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2) ** (N / 2)
    return Kernel(G, fn, np.inf, False, name or f"N({sigma:g})", size)


def convolve(phi, psi, q, threads=None):
    """phi * psi (g) = sum_i w_i phi(g h_i^-1) psi(h_i) over the fiber grid at d(g).

    Lazy: returns a kernel evaluating the quadrature sum."""
    if not psi.compact or psi.support > q.R:
        raise TruncationError(
            f"support of {psi.name} ({psi.support:g}) exceeds the truncation radius {q.R:g}",
            witness={"support": float(psi.support), "R": float(q.R)})
    G = q.G

    def rows(g):
        m = len(g)
        h, w = q.nodes(D.primal(G.d(g)))
        Q = h.shape[1]
        hf = h.reshape(m * Q, -1)
        gf = np.repeat(g, Q, 0)
        a = G.mul(gf, D.primal(G.inv(hf)))
        vals = phi(a).reshape(m, Q) * psi(hf).reshape(m, Q)
        return np.sum(w * vals, -1)

    def fn(g):
        g = np.atleast_2d(g)
        return map_rows(rows, g, threads)
    return Kernel(phi.G, fn, phi.support + psi.support, phi.compact and psi.compact,
                  f"({phi.name} * {psi.name})", phi.size)


def associativity_check(phi, psi, chi, q, samples=100, seed=0, budget=1e-6, arrows=None):
    """(phi * psi) * chi against phi * (psi * chi) on sampled arrows."""
    rng = np.random.default_rng(seed)
    g = arrows if arrows is not None else q.G.sample_arrows(rng, samples)
    left = convolve(convolve(phi, psi, q), chi, q)(g)
    right = convolve(phi, convolve(psi, chi, q), q)(g)
    return Report.from_residuals("associativity", np.abs(left - right), budget,
                                 lambda i: {"arrow": g[i].tolist()}, samples=len(g),
                                 order=q.order, R=q.R)


def right_invariance_check(q, f, samples=50, seed=0, tol=1e-8, arrows=None):
    """int_{G_d(c)} f(k) dk = int_{G_r(c)} f(h c) dh for sampled arrows c."""
    G = q.G
    rng = np.random.default_rng(seed)
    c = arrows if arrows is not None else G.sample_arrows(rng, samples)
    k, wk = q.nodes(D.primal(G.d(c)))
    h, wh = q.nodes(D.primal(G.r(c)))
    m, Q = h.shape[:2]
    lhs = np.sum(wk * f(k.reshape(m * len(wk[0]), -1)).reshape(m, -1), -1)
    hc = G.mul(h.reshape(m * Q, -1), np.repeat(c, Q, 0))
    rhs = np.sum(wh * f(hc).reshape(m, Q), -1)
    return Report.from_residuals("right invariance", np.abs(lhs - rhs), tol,
                                 lambda i: {"arrow": c[i].tolist()}, samples=len(c))


# ---------------------------------------------------------------- pair(R) oracles

def gaussian_density(x, var):
    return np.exp(-x * x / (2 * var)) / np.sqrt(2 * np.pi * var)


def gaussian_composition_error(order, R=8.0, sigmas=(1.0, 1.0), points=None, threads=None):
    """max |phi * psi - closed form| on pair(R) for centered Gaussian kernels."""
    from .geometry import manifold
    from .groupoid import pair_groupoid
    G = pair_groupoid(manifold(LINE, name="R"))
    q = FiberQuadrature(G, order, R)
    s1, s2 = sigmas
    phi = gaussian_kernel(G, s1).truncate(R)
    psi = gaussian_kernel(G, s2).truncate(R)
    if points is None:
        u = np.linspace(-3.0, 3.0, 13)
        points = np.array([[a, b] for a in u for b in u])
    val = convolve(phi, psi, q, threads)(points)
    exact = gaussian_density(points[:, 0] - points[:, 1], s1 ** 2 + s2 ** 2)
    return float(np.max(np.abs(val - exact)))


# ---------------------------------------------------------------- edge calculus demo

def translation_groupoid(Lm):
    """R^k acting on itself by translations: arrows (y, v), d = y, r = y + v.

    Another integration of TL for L = R^k, with coordinates unlike pair(L)."""
    from .groupoid import COMPOSE_TOL, ExpData, LieGroupoid
    from .geometry import CoordinateManifold
    k = Lm.width
    arrows = CoordinateManifold(ModelBlock([LINE] * (2 * k)), name="R^k x| R^k")

    def d(g):
        return g[..., :k]

    def r(g):
        return g[..., :k] + g[..., k:]

    def u(x):
        return D.concatenate([x, D.zeros_like(x)], -1)

    def inv(g):
        return D.concatenate([r(g), -g[..., k:]], -1)

    def mul(g, h):
        return D.concatenate([h[..., :k], g[..., k:] + h[..., k:]], -1)

    ed = ExpData(k, lambda x, X: D.concatenate([x + 0.0 * X, X], -1), None,
                 lambda x2, X1, X2, t: X1 + X2, lambda x, X, t: -X,
                 lambda g: (g[..., :k], g[..., k:]))

    def sampler(x, rng):
        return np.concatenate([x, rng.uniform(-2, 2, x.shape)], -1)

    def connector(x, y):
        return np.concatenate([x, y - x], -1)
    return LieGroupoid(Lm, arrows, d, r, u, inv, mul, name=f"R^{k} x| R^{k}", exp=ed,
                       sampler=sampler, connector=connector, tol=COMPOSE_TOL,
                       meta={"kind": "translation"})


def _s_kernels(glued, seed, radius):
    """Smooth compactly supported kernels on [[G:L]] written in the global E
    chart: Gaussians in (X, c) times smooth functions of the sphere points,
    cut off at |(X, c)| = radius."""
    from .desing import global_chart_iso
    L = glued.meta["L"]
    nw = L.blow.total.block.factors[0].width
    kw = L.locus.width
    N = L.H.exp.ambient
    _, to_e = global_chart_iso(glued)
    rng = np.random.default_rng(seed)

    def xc(g):
        e = np.asarray(D.primal(to_e(g)))
        return np.concatenate([e[..., nw + kw:nw + kw + N], e[..., nw + kw + N + 1:nw + kw + N + 2]],
                              -1), e

    def size(g):
        return np.linalg.norm(xc(g)[0], axis=-1)
    out = []
    for j in range(2):
        a, b = rng.standard_normal(nw), rng.standard_normal(nw)
        mu = 0.2 * rng.standard_normal(N + 1)
        sig = 0.4 + 0.05 * j

        def fn(g, a=a, b=b, mu=mu, sig=sig):
            v, e = xc(g)
            v = v - mu
            w1, w2 = e[..., :nw], e[..., -nw:]
            return np.exp(-np.sum(v * v, -1) / (2 * sig ** 2)) \
                * (1.5 + np.sin(w1 @ a)) * (1.5 + np.cos(w2 @ b))
        out.append(Kernel(glued, fn, np.inf, False, f"K{j}", size).truncate(radius))
    return out


def edge_operator_demo(n=2, k=1, order=10, R=3.0, points=20, seed=0, tol=1e-8):
    """Kernels on [[pair(R^{n+k}):R^k]]: interior products are kernel
    compositions of pair(M\\L), and restriction to S is multiplicative onto
    the convolution algebra of pi^(TL x| R+*), which is the same for the
    integrating groupoids pair(L) and R^k x| R^k of TL."""
    from .desing import desing_restrictions, desingularize, linear_slice, TameSubmanifold
    from .groupoid import pair_groupoid, pullback_groupoid
    from .algebroid import TangentAlgebroid
    rng = np.random.default_rng(seed)
    G, L = linear_slice(n, k)
    glued = desingularize(G, L)
    iso_s, iso_o = desing_restrictions(glued)
    reps = []

    # interior: [[G:L]] off S is pair(M - L)
    M = G.units
    P = pair_groupoid(M)
    qp = FiberQuadrature(P, order, R)
    kern = [gaussian_kernel(P, 0.45 + 0.05 * j, center=0.2 * rng.standard_normal(M.width))
            for j in range(2)]
    kern = [K.truncate(R) for K in kern]
    lift_k = [Kernel(glued, lambda g, K=K: K(iso_o(g)), R, True, K.name) for K in kern]
    x = M.sample(rng, points, strata=False)
    x = x[np.linalg.norm(x[:, L.normal_idx], axis=-1) > 1e-3]
    y = P.sample_d_fiber(x, rng)
    y = y[np.linalg.norm(y[:, L.normal_idx], axis=-1) > 1e-3]
    g_glued = iso_o.inverse(y)

    def interior_chart(z, th):
        return iso_o.inverse(P.exp.exp(D.primal(L.blow.blow_down(z)), th))
    qg = FiberQuadrature(glued, order, R, chart=interior_chart, params=qp.params,
                         density=lambda z, th: np.ones(len(z)))
    on_glued = convolve(lift_k[0], lift_k[1], qg)(g_glued)
    on_pair = convolve(kern[0], kern[1], qp)(y)
    reps.append(Report.from_residuals("interior products are kernel compositions",
                                      np.abs(on_glued - on_pair), tol,
                                      scale=float(np.max(np.abs(on_pair)))))

    # boundary: restriction to S is multiplicative
    model = iso_s.target
    qm = FiberQuadrature(model, order, R)
    bwd_s, units_s = iso_s.inverse, iso_s.on_units
    K = _s_kernels(glued, seed, R)

    def s_chart(z, th):
        return bwd_s(qm.chart(D.primal(units_s(z)), th))
    qs = FiberQuadrature(glued, order, R, chart=s_chart, params=qm.params,
                         density=lambda z, th: qm.density(D.primal(units_s(z)), th)
                         if qm.density else haar_density(model, qm.chart, qm.params,
                                                         D.primal(units_s(z)), th))
    s_units = iso_s.source.units.sample(rng, points)
    a_model = model.sample_d_fiber(D.primal(units_s(s_units)), rng)
    g_s = bwd_s(a_model)
    prod_glued = convolve(K[0], K[1], qs)(g_s)
    Km = [Kernel(model, lambda a, Kj=Kj: Kj(bwd_s(a)), R, True, Kj.name + "|S") for Kj in K]
    prod_model = convolve(Km[0], Km[1], qm)(a_model)
    reps.append(Report.from_residuals("restriction to S is multiplicative",
                                      np.abs(prod_glued - prod_model), tol,
                                      scale=float(np.max(np.abs(prod_model)))))

    # boundary algebra for another integrating groupoid of TL
    Lm = L.locus
    Hp = translation_groupoid(Lm)
    Gp = pullback_groupoid(L.tube, Hp, require_tame=False, name="pi^(R^k x| R^k)")
    Lp = TameSubmanifold(Gp, M, Lm, L.presentation, L.tube, Hp, TangentAlgebroid(Lm),
                         lambda g: g, lambda g: g, name="L'")
    from .geometry import blow_up
    Lp.blow = blow_up(M, L.presentation)
    glued_p = desingularize(Gp, Lp)
    iso_sp, _ = desing_restrictions(glued_p)
    Kp = [Kernel(glued_p, lambda g, Kj=Kj: Kj(bwd_s(iso_sp(g))), R, True, Kj.name)
          for Kj in K]

    def sp_chart(z, th):
        return iso_sp.inverse(qm.chart(D.primal(iso_sp.on_units(z)), th))
    qsp = FiberQuadrature(glued_p, order, R, chart=sp_chart, params=qm.params,
                          density=qs.density)
    prod_p = convolve(Kp[0], Kp[1], qsp)(iso_sp.inverse(a_model))
    reps.append(Report.from_residuals("boundary algebra independent of the integration",
                                      np.abs(prod_p - prod_model), tol))
    return Report.combine(f"edge operator demo (n={n}, k={k})", reps)
