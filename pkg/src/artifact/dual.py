"""Forward-mode differentiation with tagged nilpotent perturbations.

A ``Dual`` holds a dict ``{mask: array}`` where each bit of ``mask`` is an
independent infinitesimal e_b with e_b**2 = 0. Mask 0 is the primal value.
Nested derivatives (brackets, Jacobi checks) simply use distinct bits, so
there is no perturbation confusion. All arrays in one Dual share a shape.

Evaluators in this package are written against the small array API exported
here (``concatenate``, ``stack``, ``sum``, ``where``, ``exp`` ...), which
dispatches to numpy for plain arrays.
"""

import math
import threading

import numpy as np

_local = threading.local()


def _active():
    tags = getattr(_local, "tags", None)
    if tags is None:
        tags = _local.tags = set()
    return tags


def _terms(x):
    if isinstance(x, Dual):
        return x.terms
    return {0: np.asarray(x, dtype=float)}


def _wrap(terms):
    if len(terms) == 1 and 0 in terms:
        return terms[0]
    return Dual(terms)


class Dual:
    __slots__ = ("terms",)
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, terms):
        shape = np.broadcast_shapes(*(np.shape(v) for v in terms.values()))
        self.terms = {m: np.broadcast_to(np.asarray(v, dtype=float), shape)
                      for m, v in terms.items()}
        if 0 not in self.terms:
            self.terms[0] = np.zeros(shape)

    @property
    def primal(self):
        return self.terms[0]

    @property
    def shape(self):
        return self.terms[0].shape

    @property
    def ndim(self):
        return self.terms[0].ndim

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        return f"Dual({self.terms!r})"

    def __getitem__(self, idx):
        return _wrap({m: v[idx] for m, v in self.terms.items()})

    def reshape(self, *shape):
        return _wrap({m: v.reshape(*shape) for m, v in self.terms.items()})

    @property
    def T(self):
        return _wrap({m: v.T for m, v in self.terms.items()})

    def __neg__(self):
        return _wrap({m: -v for m, v in self.terms.items()})

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_as_operand(other))

    def __rsub__(self, other):
        return add(-self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # comparisons act on the primal value
    def __lt__(self, other):
        return self.primal < primal(other)

    def __le__(self, other):
        return self.primal <= primal(other)

    def __gt__(self, other):
        return self.primal > primal(other)

    def __ge__(self, other):
        return self.primal >= primal(other)


def _as_operand(x):
    return x if isinstance(x, Dual) else np.asarray(x, dtype=float)


def is_dual(x):
    return isinstance(x, Dual)


def primal(x):
    if isinstance(x, Dual):
        return x.terms[0]
    return np.asarray(x, dtype=float)


def asarray(x):
    return x if isinstance(x, Dual) else np.asarray(x, dtype=float)


def add(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.add(a, b)
    ta, tb = _terms(a), _terms(b)
    out = dict(ta)
    for m, v in tb.items():
        out[m] = out[m] + v if m in out else v
    return _wrap(out)


def _bilinear(a, b, op):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return op(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = {}
    for ma, va in _terms(a).items():
        for mb, vb in _terms(b).items():
            if ma & mb:
                continue
            m = ma | mb
            v = op(va, vb)
            out[m] = out[m] + v if m in out else v
    return _wrap(out)


def mul(a, b):
    return _bilinear(a, b, np.multiply)


def matmul(a, b):
    return _bilinear(a, b, np.matmul)


def einsum(spec, a, b):
    return _bilinear(a, b, lambda x, y: np.einsum(spec, x, y))


def _series(x, coeffs):
    """Evaluate sum_j coeffs[j] * n**j where n is the nilpotent part of x."""
    terms = x.terms
    nil = {m: v for m, v in terms.items() if m}
    bits = 0
    for m in nil:
        bits |= m
    order = bin(bits).count("1")
    cs = coeffs(terms[0], order)
    out = {0: cs[0]}
    power_ = {0: np.ones_like(terms[0])}
    for j in range(1, order + 1):
        nxt = {}
        for ma, va in power_.items():
            for mb, vb in nil.items():
                if ma & mb:
                    continue
                m = ma | mb
                v = va * vb
                nxt[m] = nxt[m] + v if m in nxt else v
        power_ = nxt
        if not power_:
            break
        for m, v in power_.items():
            c = cs[j] * v
            out[m] = out[m] + c if m in out else c
    return _wrap(out)


def _unary(x, f, coeffs):
    if not isinstance(x, Dual):
        return f(np.asarray(x, dtype=float))
    return _series(x, coeffs)


def exp(x):
    def c(a, n):
        e = np.exp(a)
        return [e / math.factorial(j) for j in range(n + 1)]
    return _unary(x, np.exp, c)


def expm1(x):
    def c(a, n):
        e = np.exp(a)
        return [np.expm1(a)] + [e / math.factorial(j) for j in range(1, n + 1)]
    return _unary(x, np.expm1, c)


def log(x):
    def c(a, n):
        out = [np.log(a)]
        for j in range(1, n + 1):
            out.append((-1) ** (j + 1) / (j * a ** j))
        return out
    return _unary(x, np.log, c)


def power(x, p):
    """x**p for a real constant exponent p."""
    def c(a, n):
        out, coef = [], 1.0
        for j in range(n + 1):
            out.append(coef * a ** (p - j))
            coef *= (p - j) / (j + 1)
        return out
    return _unary(x, lambda a: a ** p, c)


def sqrt(x):
    return power(x, 0.5)


def reciprocal(x):
    def c(a, n):
        return [(-1) ** j / a ** (j + 1) for j in range(n + 1)]
    return _unary(x, lambda a: 1.0 / a, c)


def sin(x):
    def c(a, n):
        cyc = [np.sin(a), np.cos(a), -np.sin(a), -np.cos(a)]
        return [cyc[j % 4] / math.factorial(j) for j in range(n + 1)]
    return _unary(x, np.sin, c)


def cos(x):
    def c(a, n):
        cyc = [np.cos(a), -np.sin(a), -np.cos(a), np.sin(a)]
        return [cyc[j % 4] / math.factorial(j) for j in range(n + 1)]
    return _unary(x, np.cos, c)


def phi1(x):
    """expm1(x)/x, smooth through x = 0."""
    def f(a):
        a = np.asarray(a, dtype=float)
        small = np.abs(a) < 1e-3
        safe = np.where(small, 1.0, a)
        series = 1 + a / 2 + a * a / 6 + a ** 3 / 24 + a ** 4 / 120
        return np.where(small, series, np.expm1(safe) / safe)

    def c(a, n):
        # derivatives of (e^a - 1)/a via the integral form int_0^1 s^j e^{as} ds / j!
        nodes, weights = np.polynomial.legendre.leggauss(24)
        s = 0.5 * (nodes + 1)
        w = 0.5 * weights
        es = np.exp(np.multiply.outer(a, s))
        out = []
        for j in range(n + 1):
            out.append((es * s ** j) @ w / math.factorial(j))
        return out
    return _unary(x, f, c)


def absolute(x):
    s = np.sign(primal(x))
    return mul(s, x)


def norm(x, axis=-1):
    return sqrt(sum(mul(x, x), axis=axis))


def sum(x, axis=None):
    if not isinstance(x, Dual):
        return np.sum(x, axis=axis)
    return _wrap({m: np.sum(v, axis=axis) for m, v in x.terms.items()})


def _join(xs, fn, axis):
    if not any(isinstance(x, Dual) for x in xs):
        return fn([np.asarray(x, dtype=float) for x in xs], axis=axis)
    ts = [_terms(x) for x in xs]
    masks = set()
    for t in ts:
        masks.update(t)
    shapes = [t[0].shape for t in ts]
    out = {}
    for m in masks:
        out[m] = fn([t[m] if m in t else np.zeros(s) for t, s in zip(ts, shapes)],
                    axis=axis)
    return _wrap(out)


def concatenate(xs, axis=-1):
    # broadcast leading axes so blocks of different batch shape can be joined
    xs = list(xs)
    shapes = [np.shape(primal(x)) for x in xs]
    nd = max(len(s) for s in shapes)
    ax = axis % nd
    lead = np.broadcast_shapes(*[s[:ax] for s in shapes])
    xs = [broadcast_to(x, lead + tuple(s[ax:])) for x, s in zip(xs, shapes)]
    return _join(xs, np.concatenate, axis)


def stack(xs, axis=-1):
    xs = list(xs)
    shape = np.broadcast_shapes(*[np.shape(primal(x)) for x in xs])
    xs = [broadcast_to(x, shape) for x in xs]
    return _join(xs, np.stack, axis)


def broadcast_to(x, shape):
    if not isinstance(x, Dual):
        return np.broadcast_to(np.asarray(x, dtype=float), shape)
    return _wrap({m: np.broadcast_to(v, shape) for m, v in x.terms.items()})


def expand_dims(x, axis):
    if not isinstance(x, Dual):
        return np.expand_dims(x, axis)
    return _wrap({m: np.expand_dims(v, axis) for m, v in x.terms.items()})


def swapaxes(x, a, b):
    if not isinstance(x, Dual):
        return np.swapaxes(x, a, b)
    return _wrap({m: np.swapaxes(v, a, b) for m, v in x.terms.items()})


def where(cond, a, b):
    """Branch selection decided on primal values; derivatives follow the branch."""
    cond = np.asarray(cond, dtype=bool)
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(cond, a, b)
    ta, tb = _terms(a), _terms(b)
    shape = np.broadcast_shapes(cond.shape, ta[0].shape, tb[0].shape)
    out = {}
    for m in set(ta) | set(tb):
        va = ta.get(m, 0.0)
        vb = tb.get(m, 0.0)
        out[m] = np.broadcast_to(np.where(cond, va, vb), shape)
    return _wrap(out)


def zeros_like(x):
    return np.zeros(np.shape(primal(x)))


# ---------------------------------------------------------------- derivatives

def _seed(x, v, bit):
    x = _terms(x)
    v = _terms(v)
    out = dict(x)
    for m, val in v.items():
        mm = m | bit
        out[mm] = out[mm] + val if mm in out else val
    return Dual(out)


def _split(y, bit):
    if isinstance(y, (tuple, list)):
        parts = [_split(v, bit) for v in y]
        return type(y)(p for p, _ in parts), type(y)(t for _, t in parts)
    if not isinstance(y, Dual):
        y = np.asarray(y, dtype=float)
        return y, np.zeros(y.shape)
    p, t = {}, {}
    for m, v in y.terms.items():
        if m & bit:
            t[m & ~bit] = v
        else:
            p[m] = v
    shape = y.shape
    if not t:
        t = {0: np.zeros(shape)}
    return _wrap(p), _wrap(t)


class finite_differences:
    """Context in which jvp uses central differences with one Richardson step.

    This swaps the differentiation path underneath every evaluator, which
    gives an independent oracle for dual-number results.
    """

    def __init__(self, h=1e-4):
        self.h = h

    def __enter__(self):
        self.prev = getattr(_local, "fd", None)
        _local.fd = self.h
        return self

    def __exit__(self, *exc):
        _local.fd = self.prev


def fd_active():
    return getattr(_local, "fd", None) is not None


def jvp(f, x, v):
    """Return (f(x), Df(x)[v]); x and v may themselves carry perturbations."""
    h = getattr(_local, "fd", None)
    if h is not None:
        x, v = primal(x), primal(v)
        return f(x), richardson(f, x, v, h)
    tags = _active()
    b = 0
    while b in tags:
        b += 1
    tags.add(b)
    try:
        bit = 1 << b
        y = f(_seed(x, v, bit))
        return _split(y, bit)
    finally:
        tags.discard(b)


def derivative(f, x, v):
    return jvp(f, x, v)[1]


def jacobian(f, x):
    """Jacobian of a batched map, shape (..., m, n) for x of shape (..., n)."""
    x = asarray(x)
    n = np.shape(primal(x))[-1]
    lead = np.shape(primal(x))[:-1]
    xb = broadcast_to(expand_dims(x, -2), lead + (n, n))
    eye = np.broadcast_to(np.eye(n), lead + (n, n))
    _, jt = jvp(f, xb, eye)
    return swapaxes(jt, -1, -2)


def vf_bracket(V, W, p):
    """Bracket [V, W](p) = DW(p)[V(p)] - DV(p)[W(p)] of vector fields on coordinates."""
    return add(derivative(W, p, V(p)), -derivative(V, p, W(p)))


# ---------------------------------------------------------------- oracles

def central_difference(f, x, v, h=1e-6):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return (primal(f(x + h * v)) - primal(f(x - h * v))) / (2 * h)


def richardson(f, x, v, h=1e-4):
    """Central difference with one Richardson step (steps h and h/2)."""
    d1 = central_difference(f, x, v, h)
    d2 = central_difference(f, x, v, h / 2)
    return (4 * d2 - d1) / 3


def fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = [central_difference(f, x, np.eye(n)[i], h) for i in range(n)]
    return np.stack(cols, axis=-1)


def lstsq(A, B, rcond=1e-10):
    """Minimum-norm least-squares solution of A X = B, batched over leading axes.

    For dual inputs carrying a single perturbation bit the first-order
    derivative of the pseudo-inverse (constant rank) is propagated.
    """
    if not isinstance(A, Dual) and not isinstance(B, Dual):
        return _pinv(np.asarray(A, dtype=float), rcond) @ np.asarray(B, dtype=float)
    ta, tb = _terms(A), _terms(B)
    bits = 0
    for m in list(ta) + list(tb):
        bits |= m
    if bin(bits).count("1") != 1:
        raise NotImplementedError("lstsq differentiates along one perturbation only")
    A0, A1 = ta[0], ta.get(bits, np.zeros_like(ta[0]))
    B0, B1 = tb[0], tb.get(bits, np.zeros(np.shape(tb[0])))
    P = _pinv(A0, rcond)
    Pt = np.swapaxes(P, -1, -2)
    A1t = np.swapaxes(A1, -1, -2)
    eye_m = np.eye(A0.shape[-2])
    eye_n = np.eye(A0.shape[-1])
    dP = (-P @ A1 @ P + P @ Pt @ A1t @ (eye_m - A0 @ P)
          + (eye_n - P @ A0) @ A1t @ Pt @ P)
    X0 = P @ B0
    X1 = dP @ B0 + P @ B1
    return Dual({0: X0, bits: X1})


def _pinv(A, rcond):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cut = rcond * np.max(s, axis=-1, keepdims=True, initial=0.0)
    inv = np.where(s > cut, 1.0 / np.where(s > cut, s, 1.0), 0.0)
    return np.swapaxes(Vt, -1, -2) @ (inv[..., :, None] * np.swapaxes(U, -1, -2))
