"""Lie algebroids with evaluable anchors and brackets.

A section is any batched evaluator x -> (..., ambient). Each algebroid
exposes a generating frame (..., ambient, m), an anchor (x, v) -> tangent
vector in the embedding coordinates of its base, and ``bracket_at(X, Y, x)``.
Brackets differentiate evaluators with dual numbers; they accept dual points,
so brackets of brackets (Jacobi) work by nesting.
"""

import itertools

import numpy as np

from . import dual as D
from .errors import CapabilityError, DegeneracyError, RankError, TamenessError
from .geometry import HALF, CoordinateManifold, ModelBlock, check_tame_submersion
from .groupoid import blockdiag
from .report import Report

BRACKET_TOL = 1e-5


def _lead(x):
    return np.shape(D.primal(x))[:-1]


class Section:
    def __init__(self, algebroid, fn, name="X"):
        self.algebroid = algebroid
        self.fn = fn
        self.name = name

    def __call__(self, x):
        return self.fn(x)

    def __repr__(self):
        return f"Section({self.name})"


class LieAlgebroid:
    name = "A"
    base = None
    ambient = 0

    def frame(self, x):
        raise NotImplementedError

    def anchor(self, x, v):
        raise NotImplementedError

    def bracket_at(self, X, Y, x):
        raise NotImplementedError

    @property
    def n_frame(self):
        x = self.base.sample(np.random.default_rng(0), 1)
        return np.shape(D.primal(self.frame(x)))[-1]

    @property
    def rank(self):
        x = self.base.sample(np.random.default_rng(1), 8, strata=False)
        s = np.linalg.svd(D.primal(self.frame(x)), compute_uv=False)
        if s.size == 0:
            return 0
        return int(np.max(np.sum(s > 1e-8 * max(1.0, s.max()), axis=-1)))

    def frame_section(self, i):
        return Section(self, lambda x: self.frame(x)[..., :, i], f"e{i}")

    def section(self, fn, name="X"):
        return Section(self, fn, name)

    def bracket(self, X, Y):
        return Section(self, lambda x: self.bracket_at(X, Y, x), f"[{X.name},{Y.name}]")

    def anchor_field(self, X):
        """Vector field rho(X) on the base."""
        return lambda x: self.anchor(x, X(x))

    def __repr__(self):
        return f"LieAlgebroid({self.name} over {self.base!r})"


class TangentAlgebroid(LieAlgebroid):
    def __init__(self, M):
        self.base = M
        self.ambient = M.width
        self.name = f"T{M.name}"

    def frame(self, x):
        return self.base.block.frame(x)

    def anchor(self, x, v):
        return v

    def bracket_at(self, X, Y, x):
        return D.vf_bracket(X, Y, x)


class ZeroAlgebroid(LieAlgebroid):
    def __init__(self, M):
        self.base = M
        self.ambient = 0
        self.name = f"0_{M.name}"

    def frame(self, x):
        return np.zeros(_lead(x) + (0, 0))

    def anchor(self, x, v):
        return np.zeros(_lead(x) + (self.base.width,))

    def bracket_at(self, X, Y, x):
        return np.zeros(_lead(x) + (0,))


def tangent_algebroid(M):
    return TangentAlgebroid(M)


class SplitProduct(LieAlgebroid):
    """A1 x A2 over a base split as x -> (x1, x2), sections (X1, X2).

    The bracket of (X1, X2) and (Y1, Y2) is
    ([X1,Y1]_1 + Y1'(rho2 X2) - X1'(rho2 Y2), [X2,Y2]_2 + Y2'(rho1 X1) - X2'(rho1 Y1))
    where each factor bracket freezes the other variable and ' is the
    derivative in the other variable.
    """

    def __init__(self, A1, A2, base, split, join, name):
        self.A1, self.A2 = A1, A2
        self.base = base
        self.split = split
        self.join = join
        self.n1 = A1.ambient
        self.ambient = A1.ambient + A2.ambient
        self.name = name

    def frame(self, x):
        x1, x2 = self.split(x)
        return blockdiag(self.A1.frame(x1), self.A2.frame(x2))

    def anchor(self, x, v):
        x1, x2 = self.split(x)
        return self.join(self.A1.anchor(x1, v[..., :self.n1]),
                         self.A2.anchor(x2, v[..., self.n1:]))

    def _lift1(self, x, t1):
        return self.join(t1, np.zeros(np.shape(D.primal(t1))[:-1]
                                      + (self.A2.base.width,)))

    def _lift2(self, x, t2):
        return self.join(np.zeros(np.shape(D.primal(t2))[:-1] + (self.A1.base.width,)), t2)

    def bracket_at(self, X, Y, x):
        n1 = self.n1
        x1, x2 = self.split(x)
        Xx, Yx = X(x), Y(x)
        X1, X2 = Xx[..., :n1], Xx[..., n1:]
        Y1, Y2 = Yx[..., :n1], Yx[..., n1:]
        join = self.join

        def fix2(S):
            return lambda y1: S(join(y1, x2))[..., :n1]

        def fix1(S):
            return lambda y2: S(join(x1, y2))[..., n1:]

        parts = []
        if n1:
            b1 = self.A1.bracket_at(fix2(X), fix2(Y), x1)
            r2x = self._lift2(x, self.A2.anchor(x2, X2))
            r2y = self._lift2(x, self.A2.anchor(x2, Y2))
            b1 = b1 + D.derivative(lambda z: Y(z)[..., :n1], x, r2x) \
                - D.derivative(lambda z: X(z)[..., :n1], x, r2y)
            parts.append(b1)
        if self.A2.ambient:
            b2 = self.A2.bracket_at(fix1(X), fix1(Y), x2)
            r1x = self._lift1(x, self.A1.anchor(x1, X1))
            r1y = self._lift1(x, self.A1.anchor(x1, Y1))
            b2 = b2 + D.derivative(lambda z: Y(z)[..., n1:], x, r1x) \
                - D.derivative(lambda z: X(z)[..., n1:], x, r1y)
            parts.append(b2)
        if not parts:
            return np.zeros(_lead(x) + (0,))
        return D.concatenate(parts, -1)


def direct_product(A1, A2):
    w1 = A1.base.width
    base = CoordinateManifold(A1.base.block + A2.base.block)

    def split(x):
        return x[..., :w1], x[..., w1:]

    def join(t1, t2):
        return D.concatenate([t1, t2], -1)
    return SplitProduct(A1, A2, base, split, join, f"{A1.name} [x] {A2.name}")


def thick_pullback(f, A, require_tame=True, samples=100, seed=0):
    """f^(A) for a block projection f: M -> L, realized as A [x] TY."""
    if require_tame:
        rep = check_tame_submersion(f, samples=samples, seed=seed)
        if not rep.passed:
            raise TamenessError(f"{f.name} is not a tame submersion", witness=rep.witness)
    if f.codomain.block != A.base.block:
        raise RankError("codomain of f must be the base of A")
    Y = CoordinateManifold(f.free_block)
    TY = TangentAlgebroid(Y)

    def split(x):
        return f(x), f.free_part(x)

    def join(t1, t2):
        return f.assemble(t2, t1)
    out = SplitProduct(A, TY, f.domain, split, join, f"f^({A.name})")
    out.f = f
    return out


class Rescaled(LieAlgebroid):
    """fA: sections X stand for fX, anchor f rho, bracket from
    [fX, fY] = f X(f) Y - f Y(f) X + f^2 [X, Y]."""

    def __init__(self, f, A, name=None):
        self.f = f
        self.A = A
        self.base = A.base
        self.ambient = A.ambient
        self.name = name or f"f({A.name})"

    def frame(self, x):
        return self.A.frame(x)

    def anchor(self, x, v):
        return self.f(x)[..., None] * self.A.anchor(x, v)

    def bracket_at(self, X, Y, x):
        A, f = self.A, self.f
        Xf = D.derivative(f, x, A.anchor(x, X(x)))
        Yf = D.derivative(f, x, A.anchor(x, Y(x)))
        return Xf[..., None] * Y(x) - Yf[..., None] * X(x) \
            + f(x)[..., None] * A.bracket_at(X, Y, x)


def rescale(f, A, samples=200, seed=0):
    """Rescaled algebroid fA; rejects f vanishing on a sampled open patch."""
    rng = np.random.default_rng(seed)
    x = A.base.sample(rng, samples, strata=False)
    vals = np.abs(D.primal(f(x)))
    for i in np.flatnonzero(vals <= 1e-12):
        near = x[i] + 1e-3 * rng.standard_normal((8, x.shape[-1]))
        near = A.base.retract(near)
        near = near[A.base.contains(near)]
        if len(near) and np.all(np.abs(D.primal(f(near))) <= 1e-12):
            raise DegeneracyError("the rescaling function vanishes on an open patch",
                                  witness={"point": x[i].tolist()})
    return Rescaled(f, A)


class Adiabatic(LieAlgebroid):
    """A_ad over M x [0, inf): [X, Y](t) = t [X(t), Y(t)], anchor (t rho, 0)."""

    def __init__(self, A):
        self.A = A
        self.base = CoordinateManifold(A.base.block + ModelBlock([HALF]))
        self.ambient = A.ambient
        self.name = f"{A.name}_ad"

    def frame(self, x):
        return self.A.frame(x[..., :-1])

    def anchor(self, x, v):
        t = x[..., -1:]
        return D.concatenate([t * self.A.anchor(x[..., :-1], v), D.zeros_like(t)], -1)

    def bracket_at(self, X, Y, x):
        y, t = x[..., :-1], x[..., -1:]

        def fix(S):
            return lambda z: S(D.concatenate([z, t], -1))
        return t * self.A.bracket_at(fix(X), fix(Y), y)


def adiabatic_algebroid(A):
    return Adiabatic(A)


def time_pullback(A):
    """pi*(A) over M x [0, inf): the product with the zero algebroid of [0, inf)."""
    return direct_product(A, ZeroAlgebroid(CoordinateManifold(ModelBlock([HALF]))))


def b_tangent_halfline():
    """Algebroid over [0, inf) generated by r d/dr, i.e. rescale(r, T[0, inf))."""
    half = CoordinateManifold(ModelBlock([HALF]), name="[0,inf)")
    out = Rescaled(lambda x: x[..., 0], TangentAlgebroid(half), name="b-T[0,inf)")
    return out


class GroupoidAlgebroid(LieAlgebroid):
    """A(G) = ker d_* along the units, with vectors in arrow embedding coordinates.

    Frame vectors come from exp; brackets extend sections to right-invariant
    vector fields X~(g) = D_k (k g)[X(r(g))] at k = u(r(g)) and take their
    vector-field bracket at u(x).
    """

    def __init__(self, G):
        if G.exp is None:
            raise CapabilityError(f"{G.name} carries no exp data")
        self.G = G
        self.base = G.units
        self.ambient = G.arrows.width
        self.name = f"A({G.name})"

    def exp_frame(self, x):
        """Columns D_X exp(x, X)[c_j] for the exp frame columns c_j."""
        e = self.G.exp
        c = e.frame_at(x)
        N = e.ambient
        cols = []
        zero = np.zeros(_lead(x) + (N,))
        m = np.shape(D.primal(c))[-1]
        for j in range(m):
            cols.append(D.derivative(lambda X: e.exp(x, X), zero, c[..., :, j]))
        if not cols:
            return np.zeros(_lead(x) + (self.ambient, 0))
        return D.stack(cols, -1)

    def frame(self, x):
        return self.exp_frame(x)

    def anchor(self, x, v):
        return D.derivative(self.G.r, self.G.u(x), v)

    def right_invariant(self, X):
        G = self.G

        def field(g):
            y = G.r(g)
            return D.derivative(lambda k: G._mul(k, g), G.u(y), X(y))
        return field

    def bracket_at(self, X, Y, x):
        p = self.G.u(x)
        return D.vf_bracket(self.right_invariant(X), self.right_invariant(Y), p)

    def fd_frame_bracket(self, i, j, x, h=1e-4):
        """Oracle: bracket of frame sections from exp curves and finite differences."""
        G, e = self.G, self.G.exp
        x = np.asarray(x, dtype=float)

        def coeff(y, k):
            return D.primal(e.frame_at(y))[..., :, k]

        def field(k):
            def f(g):
                y = D.primal(G.r(g))
                c = coeff(y, k)
                return D.richardson(lambda s: D.primal(G._mul(e.exp(y, s[..., :1] * c), g)),
                                    np.zeros(y.shape[:-1] + (1,)),
                                    np.ones(y.shape[:-1] + (1,)), h)
            return f
        Xi, Xj = field(i), field(j)
        p = D.primal(G.u(x))
        return (D.richardson(Xj, p, Xi(p), h) - D.richardson(Xi, p, Xj(p), h))


def lie_algebroid_of(G, probe=24, seed=0):
    """A(G) with a rank check of ker d_* on sampled units."""
    if hasattr(G, "charts"):
        return PiecewiseAlgebroid([(lie_algebroid_of(H, probe, seed), region)
                                   for H, region in G.charts], G.units, f"A({G.name})")
    A = GroupoidAlgebroid(G)
    rng = np.random.default_rng(seed)
    x = G.units.sample(rng, probe)
    F = D.primal(A.frame(x))
    if F.shape[-1]:
        s = np.linalg.svd(F, compute_uv=False)
        ranks = np.sum(s > 1e-8 * max(1.0, s.max()), axis=-1)
    else:
        ranks = np.zeros(len(x), dtype=int)
    if len(set(ranks.tolist())) > 1:
        raise RankError("rank of ker d_* varies over the units",
                        witness={"ranks": sorted(set(ranks.tolist()))})
    dd = D.primal(D.jacobian(G.d, D.primal(G.u(x))))
    if F.shape[-1] and np.max(np.abs(dd @ F), initial=0.0) > 1e-8:
        raise CapabilityError("exp data does not produce d-vertical vectors")
    A._rank = int(ranks[0]) if len(ranks) else 0
    return A


class PiecewiseAlgebroid(LieAlgebroid):
    """Algebroid given on chart regions of the units (from a glued groupoid)."""

    def __init__(self, pieces, base, name):
        self.pieces = pieces
        self.base = base
        self.name = name
        self.ambient = max(a.ambient for a, _ in pieces)

    def piece_index(self, x):
        x = D.primal(x)
        idx = np.full(x.shape[:-1], -1)
        for k, (_, region) in enumerate(self.pieces):
            hit = (idx < 0) & region.contains(x)
            idx[hit] = k
        return idx

    def frame(self, x):
        raise CapabilityError("evaluate piecewise algebroids through their pieces")

    def anchor(self, x, v):
        raise CapabilityError("evaluate piecewise algebroids through their pieces")

    def bracket_at(self, X, Y, x):
        raise CapabilityError("evaluate piecewise algebroids through their pieces")


def split_by_piece(A, x):
    """Yield (algebroid, index array) groups; plain algebroids are one group."""
    if isinstance(A, PiecewiseAlgebroid):
        idx = A.piece_index(x)
        for k, (piece, _) in enumerate(A.pieces):
            sel = np.flatnonzero(idx == k)
            if len(sel):
                yield piece, sel
    else:
        yield A, np.arange(len(x))


# ---------------------------------------------------------------- suites

def _test_function(rng, width):
    a = rng.standard_normal(width)
    b = rng.standard_normal(width) / np.sqrt(width)
    c = rng.standard_normal()

    def f(x):
        return D.sin(D.sum(x * a, -1) * 0.7 + c) + D.sum(x * b, -1) ** 2 * 0.3
    return f


def algebroid_axiom_suite(A, points=100, seed=0, tol=BRACKET_TOL, x=None, jacobi=True):
    """Leibniz, anchor morphism and Jacobi on frame sections at sampled points."""
    rng = np.random.default_rng(seed)
    if x is None:
        x = A.base.sample(rng, points)
    reps = []
    for piece, sel in split_by_piece(A, x):
        reps.extend(_axioms_on(piece, x[sel], rng, tol, jacobi))
    return Report.combine(f"algebroid_axioms[{A.name}]", reps, points=int(len(x)))


def _axioms_on(A, x, rng, tol, jacobi):
    m = np.shape(D.primal(A.frame(x[:1])))[-1]
    e = [A.frame_section(i) for i in range(m)]
    f = _test_function(rng, A.base.width)
    leib, morph, jac = [], [], []
    for i, j in itertools.product(range(m), range(m)):
        fY = Section(A, lambda y, j=j: f(y)[..., None] * e[j](y))
        lhs = A.bracket_at(e[i], fY, x)
        Xf = D.derivative(f, x, A.anchor(x, e[i](x)))
        rhs = f(x)[..., None] * A.bracket_at(e[i], e[j], x) + Xf[..., None] * e[j](x)
        leib.append(np.max(np.abs(D.primal(lhs - rhs)), axis=-1, initial=0.0))
        if i < j:
            br = A.bracket_at(e[i], e[j], x)
            lhs = A.anchor(x, br)
            rhs = D.vf_bracket(A.anchor_field(e[i]), A.anchor_field(e[j]), x)
            morph.append(np.max(np.abs(D.primal(lhs - rhs)), axis=-1, initial=0.0))
    if jacobi:
        for i, j, k in itertools.combinations(range(m), 3):
            total = 0.0
            for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
                inner = Section(A, lambda y, b=b, c=c: A.bracket_at(e[b], e[c], y))
                total = total + A.bracket_at(e[a], inner, x)
            jac.append(np.max(np.abs(D.primal(total)), axis=-1, initial=0.0))
    return [Report.from_residuals(f"Leibniz[{A.name}]", np.ravel(leib), tol),
            Report.from_residuals(f"anchor morphism[{A.name}]", np.ravel(morph), tol),
            Report.from_residuals(f"Jacobi[{A.name}]", np.ravel(jac), tol)]


def fd_bracket_agreement(A, points=100, seed=0, tol=BRACKET_TOL, x=None):
    """Dual-number frame brackets against the finite-difference oracle."""
    rng = np.random.default_rng(seed)
    if x is None:
        x = A.base.sample(rng, points)
    res = []
    for piece, sel in split_by_piece(A, x):
        xs = x[sel]
        m = np.shape(D.primal(piece.frame(xs[:1])))[-1]
        e = [piece.frame_section(i) for i in range(m)]
        for i, j in itertools.combinations(range(m), 2):
            dual_val = D.primal(piece.bracket_at(e[i], e[j], xs))
            if isinstance(piece, GroupoidAlgebroid):
                fd_val = piece.fd_frame_bracket(i, j, xs)
            else:
                with D.finite_differences():
                    fd_val = D.primal(piece.bracket_at(e[i], e[j], xs))
            res.append(np.ravel(np.max(np.abs(dual_val - fd_val), axis=-1, initial=0.0)))
    res = np.concatenate(res) if res else np.zeros(0)
    return Report.from_residuals(f"fd oracle[{A.name}]", res, tol)


def isotropy_closure(A, points=100, seed=0, tol=BRACKET_TOL, x=None):
    """Brackets of sections lying in ker(anchor) at x stay in the kernel."""
    rng = np.random.default_rng(seed)
    if x is None:
        x = A.base.sample(rng, points)
    res = []
    for piece, sel in split_by_piece(A, x):
        for xi in x[sel]:
            xi = xi[None]
            F = D.primal(piece.frame(xi))[0]
            m = F.shape[-1]
            if m == 0:
                continue
            P = np.stack([D.primal(piece.anchor(xi, F[:, i][None]))[0] for i in range(m)], -1)
            # kernel of the anchor modulo frame relations
            _, s, vt = np.linalg.svd(P)
            rk = int(np.sum(s > 1e-9 * max(1.0, s.max(initial=0.0))))
            K = vt[rk:].T
            vals = F @ K
            keep = np.linalg.norm(vals, axis=0) > 1e-9
            K = K[:, keep]
            for a, b in itertools.combinations(range(K.shape[1]), 2):
                Xa = Section(piece, lambda y, a=a: D.einsum("...ij,j->...i", piece.frame(y), K[:, a]))
                Xb = Section(piece, lambda y, b=b: D.einsum("...ij,j->...i", piece.frame(y), K[:, b]))
                br = piece.bracket_at(Xa, Xb, xi)
                # project onto the kernel: the anchor of the bracket must vanish
                res.append(float(np.max(np.abs(D.primal(piece.anchor(xi, br))))))
    return Report.from_residuals(f"isotropy closure[{A.name}]", res, tol)


def bracket_closure(A, points=100, seed=0, tol=BRACKET_TOL, x=None):
    """Generator brackets stay in the module: the anchor of the algebroid bracket
    equals the finite-difference vector-field bracket of the anchors."""
    rng = np.random.default_rng(seed)
    if x is None:
        x = A.base.sample(rng, points)
    res = []
    for piece, sel in split_by_piece(A, x):
        xs = x[sel]
        m = np.shape(D.primal(piece.frame(xs[:1])))[-1]
        e = [piece.frame_section(i) for i in range(m)]
        for i, j in itertools.combinations(range(m), 2):
            lhs = D.primal(piece.anchor(xs, piece.bracket_at(e[i], e[j], xs)))
            with D.finite_differences():
                rhs = D.vf_bracket(piece.anchor_field(e[i]), piece.anchor_field(e[j]), xs)
            res.append(np.ravel(np.max(np.abs(lhs - D.primal(rhs)), axis=-1, initial=0.0)))
    res = np.concatenate(res) if res else np.zeros(0)
    return Report.from_residuals(f"bracket closure[{A.name}]", res, tol)


# ---------------------------------------------------------------- isomorphisms

def _anchor_matrix(A, x):
    F = A.frame(x)
    m = np.shape(D.primal(F))[-1]
    if m == 0:
        return np.zeros(_lead(x) + (A.base.width, 0))
    return D.stack([A.anchor(x, F[..., :, i]) for i in range(m)], -1)


def _alignment(A1, A2, x, basis):
    """Frame alignment T with rho2 F2 T = rho1 F1, fitted together with its first
    derivatives along the tangent basis (this pins T down where anchors degenerate)."""
    P1 = _anchor_matrix(A1, x)
    P2 = _anchor_matrix(A2, x)
    w, m1 = np.shape(D.primal(P1))[-2:]
    m2 = np.shape(D.primal(P2))[-1]
    dims = basis.shape[-1]
    dP1 = [D.derivative(lambda z: _anchor_matrix(A1, z), x, basis[..., :, k]) for k in range(dims)]
    dP2 = [D.derivative(lambda z: _anchor_matrix(A2, z), x, basis[..., :, k]) for k in range(dims)]
    # unknown vector: vec(T), vec(D_1 T), ..., vec(D_dims T); column-major per m1 column
    lead = _lead(x)
    nunk = m2 * (1 + dims)
    rows = []
    rhs = []
    zero = np.zeros(lead + (w, m2))
    rows.append(D.concatenate([P2] + [zero] * dims, -1))
    rhs.append(P1)
    for k in range(dims):
        blocks = [dP2[k]] + [P2 if kk == k else zero for kk in range(dims)]
        rows.append(D.concatenate(blocks, -1))
        rhs.append(dP1[k])
    M = D.concatenate(rows, -2)
    B = D.concatenate(rhs, -2)
    sol = D.lstsq(M, B)
    T = sol[..., :m2, :]
    # remove components along frame relations of A2 (vectors F2 kills)
    F2 = D.primal(A2.frame(D.primal(x)))
    _, s, vt = np.linalg.svd(F2, full_matrices=True)
    rk = np.sum(s > 1e-9 * np.maximum(1.0, s.max(-1, initial=0.0))[..., None], -1)
    Q = np.zeros(lead + (m2, m2))
    for idx in np.ndindex(*lead):
        V = vt[idx][rk[idx]:].T
        Q[idx] = np.eye(m2) - V @ V.T
    return D.matmul(Q, T), nunk


def check_algebroid_iso(A1, A2, x, tol=BRACKET_TOL, name=None, theta=None):
    """Least-squares frame alignment Theta: A1 -> A2 over the identity.

    ``theta(x)`` may supply the alignment (..., m2, m1) explicitly; this is
    needed where anchors vanish on open sets (bundles of Lie algebras), since
    there the anchors carry no information about the fiber map.

    Reports the anchor residual |rho2 Theta - rho1|, the well-definedness
    residual on frame relations of A1, the fiber rank, and the bracket
    residual |Theta [e_i, e_j]_1 - [Theta e_i, Theta e_j]_2| on frame pairs.
    """
    name = name or f"iso[{A1.name} ~ {A2.name}]"
    anchor_res, well_res, brk_res, rank_res = [], [], [], []
    for p1, sel in split_by_piece(A1, x):
        for p2, sel2 in split_by_piece(A2, x[sel]):
            xs = x[sel][sel2]
            a, w, b, rk = _iso_on(p1, p2, xs, theta)
            anchor_res.append(a)
            well_res.append(w)
            brk_res.append(b)
            rank_res.append(rk)
    cat = lambda v: np.concatenate([np.ravel(t) for t in v]) if v else np.zeros(0)
    parts = [Report.from_residuals("anchor", cat(anchor_res), tol),
             Report.from_residuals("frame relations", cat(well_res), tol),
             Report.from_residuals("fiber rank", cat(rank_res), 0.0),
             Report.from_residuals("brackets", cat(brk_res), tol)]
    return Report.combine(name, parts, points=int(len(x)))


def _iso_on(A1, A2, x, theta=None):
    if theta is None:
        def align(z):
            return _alignment(A1, A2, z, A1.base.tangent_basis(D.primal(z)))[0]
    else:
        align = theta
    T = align(x)
    T0 = D.primal(T)
    F1 = D.primal(A1.frame(x))
    F2 = D.primal(A2.frame(x))
    P1 = D.primal(_anchor_matrix(A1, x))
    P2 = D.primal(_anchor_matrix(A2, x))
    m1, m2 = F1.shape[-1], F2.shape[-1]
    anchor_res = np.max(np.abs(P2 @ T0 - P1), axis=(-1, -2), initial=0.0)
    # frame relations of A1 must map to zero
    _, s1, vt1 = np.linalg.svd(F1)
    well = np.zeros(len(x))
    rank_res = np.zeros(len(x))
    for n in range(len(x)):
        r1 = int(np.sum(s1[n] > 1e-9 * max(1.0, s1[n].max(initial=0.0))))
        N1 = vt1[n][r1:].T
        if N1.size:
            well[n] = np.max(np.abs(F2[n] @ T0[n] @ N1))
        img = np.linalg.svd(F2[n] @ T0[n], compute_uv=False)
        r_img = int(np.sum(img > 1e-7 * max(1.0, img.max(initial=0.0))))
        s2 = np.linalg.svd(F2[n], compute_uv=False)
        r2 = int(np.sum(s2 > 1e-9 * max(1.0, s2.max(initial=0.0))))
        rank_res[n] = abs(r_img - r1) + abs(r2 - r1)
    # derivatives of T along rho1(e_i) via a dual perturbation of the alignment
    dT = []
    for i in range(m1):
        v = P1[..., :, i]
        dT.append(D.primal(D.derivative(align, x, v)) * np.ones(np.shape(T0)))
    e1 = [A1.frame_section(i) for i in range(m1)]
    e2 = [A2.frame_section(i) for i in range(m2)]
    br2 = {}
    for a, b in itertools.combinations(range(m2), 2):
        br2[a, b] = D.primal(A2.bracket_at(e2[a], e2[b], x))
        br2[b, a] = -br2[a, b]
    zero = np.zeros(x.shape[:-1] + (A2.ambient,))
    brk = np.zeros(len(x))
    for i, j in itertools.combinations(range(m1), 2):
        b1 = D.primal(A1.bracket_at(e1[i], e1[j], x))
        coef = D.primal(D.lstsq(F1, b1[..., None]))[..., 0]
        lhs = np.einsum("...ab,...bc,...c->...a", F2, T0, coef)
        rhs = zero.copy()
        for a in range(m2):
            for b in range(m2):
                if a != b:
                    rhs += (T0[..., a, i] * T0[..., b, j])[..., None] * br2[a, b]
        rhs += np.einsum("...ab,...b->...a", F2, dT[i][..., :, j])
        rhs -= np.einsum("...ab,...b->...a", F2, dT[j][..., :, i])
        brk = np.maximum(brk, np.max(np.abs(lhs - rhs), axis=-1))
    return anchor_res, well, brk, rank_res
