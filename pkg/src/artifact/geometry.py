"""Coordinate models of manifolds with corners.

A ``ModelBlock`` is a product of LINE, HALF and SPHERE(p) factors. Points are
stored in embedding coordinates (a sphere factor S^p takes p+1 slots), and
all evaluators are batched over leading axes: a point array has shape
(..., width). Everything here works with plain numpy arrays as well as with
``dual.Dual`` arrays.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import dual as D
from .errors import ConstraintError, ShapeError, UnsupportedSubmanifoldError
from .report import Report

ZERO_TOL = 1e-12
SPHERE_TOL = 1e-12


@dataclass(frozen=True)
class Factor:
    kind: str
    p: int = 0
    clipped: bool = False

    @property
    def dim(self):
        return self.p if self.kind == "sphere" else 1

    @property
    def width(self):
        return self.p + 1 if self.kind == "sphere" else 1

    def __repr__(self):
        if self.kind == "sphere":
            return f"SPHERE({self.p}{', clipped' if self.clipped else ''})"
        return self.kind.upper()


LINE = Factor("line")
HALF = Factor("half")


def SPHERE(p, clipped=False):
    if p < 0:
        raise ShapeError("sphere dimension must be nonnegative")
    return Factor("sphere", p, clipped)


class ModelBlock:
    """Product of factors with embedding coordinates laid out factor by factor."""

    def __init__(self, factors):
        self.factors = tuple(factors)
        self.slices = []
        pos = 0
        for f in self.factors:
            self.slices.append(slice(pos, pos + f.width))
            pos += f.width
        self.width = pos
        self.dim = sum(f.dim for f in self.factors)
        # embedding coordinates that define boundary faces when they vanish
        mask = np.zeros(self.width, dtype=bool)
        for f, s in zip(self.factors, self.slices):
            if f.kind == "half" or (f.kind == "sphere" and f.clipped):
                mask[s] = True
        self.boundary_coords = mask

    @property
    def rank(self):
        r = 0
        for f in self.factors:
            if f.kind == "half":
                r += 1
            elif f.kind == "sphere" and f.clipped:
                r += f.p
        return r

    def __eq__(self, other):
        return isinstance(other, ModelBlock) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    def __repr__(self):
        return "x".join(map(repr, self.factors)) or "POINT"

    def __add__(self, other):
        return ModelBlock(self.factors + other.factors)

    def sub(self, indices):
        return ModelBlock([self.factors[i] for i in indices])

    def coord_index(self, factor_indices):
        """Embedding coordinate indices of the given factors, in the given order."""
        idx = []
        for i in factor_indices:
            s = self.slices[i]
            idx.extend(range(s.start, s.stop))
        return np.array(idx, dtype=int)

    # ---- constraints

    def violation(self, x):
        x = D.primal(x)
        worst = np.zeros(x.shape[:-1])
        for f, s in zip(self.factors, self.slices):
            part = x[..., s]
            if f.kind == "half" or (f.kind == "sphere" and f.clipped):
                worst = np.maximum(worst, np.max(np.maximum(-part, 0), axis=-1) / ZERO_TOL)
            if f.kind == "sphere":
                err = np.abs(np.linalg.norm(part, axis=-1) - 1.0)
                worst = np.maximum(worst, err / SPHERE_TOL)
        return worst

    def contains(self, x):
        return self.violation(x) <= 1.0

    def validate(self, x):
        bad = ~self.contains(x)
        if np.any(bad):
            i = np.argwhere(np.atleast_1d(bad))[0]
            xs = np.atleast_2d(D.primal(x))
            raise ConstraintError(f"point violates {self!r} constraints",
                                  witness={"point": xs[tuple(i)].tolist()})

    def active(self, x):
        """Boolean mask of boundary coordinates that vanish at x."""
        x = D.primal(x)
        return self.boundary_coords & (np.abs(x) <= ZERO_TOL)

    def depth(self, x):
        self.validate(x)
        return np.sum(self.active(x), axis=-1)

    def retract(self, x):
        """Normalize sphere factors; other coordinates untouched."""
        if not any(f.kind == "sphere" for f in self.factors):
            return x
        parts = []
        for f, s in zip(self.factors, self.slices):
            part = x[..., s]
            if f.kind == "sphere":
                part = part * D.reciprocal(D.norm(part))[..., None]
            parts.append(part)
        return D.concatenate(parts, -1)

    def tangent_project(self, x, v):
        if not any(f.kind == "sphere" for f in self.factors):
            return v
        parts = []
        for f, s in zip(self.factors, self.slices):
            part = v[..., s]
            if f.kind == "sphere":
                w = x[..., s]
                part = part - w * D.sum(w * part, -1)[..., None]
            parts.append(part)
        return D.concatenate(parts, -1)

    def frame(self, x):
        """Generating vectors of the tangent space, shape (..., width, width).

        Sphere factors use the projected coordinate fields (I - w w^T) e_j,
        which are overcomplete but smooth; other factors use unit vectors.
        """
        x = D.asarray(x)
        lead = np.shape(D.primal(x))[:-1]
        eye = np.broadcast_to(np.eye(self.width), lead + (self.width, self.width))
        if not any(f.kind == "sphere" for f in self.factors):
            return eye
        cols = self.tangent_project(D.expand_dims(x, -2), eye)
        return D.swapaxes(cols, -1, -2)

    def tangent_basis(self, x):
        """Orthonormal basis of the tangent space, shape (..., width, dim)."""
        x = D.primal(x)
        lead = x.shape[:-1]
        out = np.zeros(lead + (self.width, self.dim))
        col = 0
        for f, s in zip(self.factors, self.slices):
            if f.kind == "sphere":
                w = x[..., s]
                proj = np.eye(f.width) - w[..., :, None] * w[..., None, :]
                _, vecs = np.linalg.eigh(proj)
                out[..., s, col:col + f.p] = vecs[..., :, 1:]
                col += f.p
            else:
                out[..., s.start, col] = 1.0
                col += 1
        return out

    # ---- sampling

    def sample(self, rng, n, scale=2.0, strata=True):
        """Sample n points; with strata, every depth level gets >= 10% of them."""
        x = np.zeros((n, self.width))
        for f, s in zip(self.factors, self.slices):
            if f.kind == "line":
                x[:, s] = rng.uniform(-scale, scale, (n, 1))
            elif f.kind == "half":
                x[:, s] = rng.uniform(0.05, scale, (n, 1))
            else:
                g = rng.standard_normal((n, f.width))
                if f.clipped:
                    g = np.abs(g) + 1e-3
                x[:, s] = g
        rank = self.rank
        if strata and rank > 0:
            levels = np.arange(n) % (rank + 1)
            rng.shuffle(levels)
            eligible = np.flatnonzero(self.boundary_coords)
            for i in range(n):
                self._zero_coords(rng, x[i], levels[i], eligible)
        for f, s in zip(self.factors, self.slices):
            if f.kind == "sphere":
                x[:, s] /= np.linalg.norm(x[:, s], axis=-1, keepdims=True)
        return x

    def _zero_coords(self, rng, row, count, eligible):
        if count == 0:
            return
        for _ in range(100):
            pick = rng.permutation(eligible)[:count]
            ok = True
            for f, s in zip(self.factors, self.slices):
                if f.kind == "sphere" and f.clipped:
                    if np.sum((pick >= s.start) & (pick < s.stop)) > f.p:
                        ok = False
            if ok:
                row[pick] = 0.0
                return


class Region:
    """Subset of a block given by a membership predicate on coordinates."""

    def __init__(self, contains, name="region", closed=False, sampler=None):
        self._contains = contains
        self.name = name
        self.closed = closed
        self.sampler = sampler

    def contains(self, x):
        return np.asarray(self._contains(D.primal(x)), dtype=bool)

    def __and__(self, other):
        if other is None:
            return self
        sampler = self.sampler or other.sampler
        return Region(lambda x: self.contains(x) & other.contains(x),
                      f"{self.name}&{other.name}", self.closed or other.closed,
                      sampler)

    def __repr__(self):
        return f"Region({self.name})"


def open_region(predicate, name="open"):
    return Region(predicate, name, closed=False)


def face_region(block, factor_index, name=None):
    """Closed face {x_i = 0} of a HALF factor."""
    c = block.slices[factor_index].start

    def sampler(rng, n, base):
        x = base.sample(rng, n)
        x[:, c] = 0.0
        return x
    return Region(lambda x: np.abs(x[..., c]) <= ZERO_TOL, name or f"face{factor_index}",
                  closed=True, sampler=sampler)


def slice_region(block, factor_indices, values=None, name=None):
    """Closed slice fixing the coordinates of LINE factors."""
    idx = block.coord_index(factor_indices)
    vals = np.zeros(len(idx)) if values is None else np.asarray(values, dtype=float)

    def sampler(rng, n, base):
        x = base.sample(rng, n)
        x[:, idx] = vals
        return x
    return Region(lambda x: np.all(np.abs(x[..., idx] - vals) <= ZERO_TOL, axis=-1),
                  name or "slice", closed=True, sampler=sampler)


class CoordinateManifold:
    """Finite union of model blocks, optionally cut down by an open region."""

    def __init__(self, blocks, region=None, name=""):
        if isinstance(blocks, ModelBlock):
            blocks = [blocks]
        blocks = list(blocks)
        if not blocks:
            raise ShapeError("a coordinate manifold needs at least one block")
        if len({b.dim for b in blocks}) != 1:
            raise ShapeError("blocks must share their dimension")
        self.blocks = blocks
        self.region = region
        self.name = name or repr(blocks[0])

    @property
    def block(self):
        return self.blocks[0]

    @property
    def dim(self):
        return self.blocks[0].dim

    @property
    def width(self):
        return self.blocks[0].width

    @property
    def rank(self):
        return max(b.rank for b in self.blocks)

    def __repr__(self):
        r = f" | {self.region.name}" if self.region is not None else ""
        return f"CoordinateManifold({' + '.join(map(repr, self.blocks))}{r})"

    def same_blocks(self, other):
        return [b.factors for b in self.blocks] == [b.factors for b in other.blocks]

    def contains(self, x):
        ok = self.block.contains(x)
        if self.region is not None:
            ok = ok & self.region.contains(x)
        return ok

    def restrict(self, region):
        reg = region if self.region is None else (region & self.region)
        return CoordinateManifold(self.blocks, reg, f"{self.name}|{region.name}")

    def sample(self, rng, n, strata=True, scale=2.0):
        region = self.region
        if region is not None and region.sampler is not None:
            base = CoordinateManifold(self.blocks)
            x = region.sampler(rng, n, base)
            return x
        out, have = [], 0
        for _ in range(200):
            x = self.block.sample(rng, max(2 * n, 16), scale=scale, strata=strata)
            if region is not None:
                x = x[region.contains(x)]
            out.append(x)
            have += len(x)
            if have >= n:
                break
        x = np.concatenate(out)[:n]
        if len(x) < n:
            from .errors import SamplingError
            raise SamplingError(f"could not sample {n} points of {self!r}")
        return x

    def tangent_basis(self, x):
        return self.block.tangent_basis(x)

    def frame(self, x):
        return self.block.frame(x)

    def retract(self, x):
        return self.block.retract(x)


def manifold(*factors, name=""):
    return CoordinateManifold(ModelBlock(factors), name=name)


def euclidean(n):
    return manifold(*([LINE] * n), name=f"R^{n}")


POINT = ModelBlock(())


@dataclass
class Point:
    manifold: CoordinateManifold
    coords: np.ndarray
    block_index: int = 0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.shape[-1] != self.manifold.blocks[self.block_index].width:
            raise ShapeError("coordinate length does not match the block width")

    @property
    def block(self):
        return self.manifold.blocks[self.block_index]


@dataclass
class TangentVector:
    base: Point
    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        blk = self.base.block
        for f, s in zip(blk.factors, blk.slices):
            if f.kind == "sphere":
                dot = float(np.dot(self.base.coords[s], self.components[s]))
                if abs(dot) > 1e-10:
                    raise ConstraintError("sphere component is not tangent",
                                          witness={"dot": dot})


def depth(p):
    """Number of vanishing boundary coordinates of a point."""
    return int(p.block.depth(p.coords))


def inward_cone_membership(v):
    """True iff v pairs nonnegatively with every vanishing boundary coordinate."""
    blk = v.base.block
    blk.validate(v.base.coords)
    act = blk.active(v.base.coords)
    return bool(np.all(v.components[act] >= -ZERO_TOL))


# ---------------------------------------------------------------- smooth maps

class SmoothMap:
    """Batched map between coordinate manifolds with a Jacobian evaluator."""

    def __init__(self, domain, codomain, value, jacobian=None, name=""):
        self.domain = domain
        self.codomain = codomain
        self.value = value
        self.analytic_jacobian = jacobian
        self.name = name or getattr(value, "__name__", "map")

    def __call__(self, x):
        return self.value(x)

    def jacobian(self, x):
        if self.analytic_jacobian is not None:
            return self.analytic_jacobian(x)
        return self.dual_jacobian(x)

    def dual_jacobian(self, x):
        return D.jacobian(self.value, x)

    def at(self, p):
        return Point(self.codomain, D.primal(self.value(p.coords)))

    def __repr__(self):
        return f"SmoothMap({self.name}: {self.domain!r} -> {self.codomain!r})"


class Projection(SmoothMap):
    """Projection of a block onto a subset of its factors (kept in the given order)."""

    def __init__(self, domain, keep, codomain=None, name=""):
        blk = domain.block
        self.keep = tuple(keep)
        self.free = tuple(i for i in range(len(blk.factors)) if i not in self.keep)
        self.keep_idx = blk.coord_index(self.keep)
        self.free_idx = blk.coord_index(self.free)
        self.free_block = blk.sub(self.free)
        if codomain is None:
            codomain = CoordinateManifold(blk.sub(self.keep))
        if codomain.block.factors != blk.sub(self.keep).factors:
            raise ShapeError("codomain factors do not match the kept factors")
        order = np.argsort(np.concatenate([self.free_idx, self.keep_idx]).astype(int))
        self._assemble_order = order
        keep_idx = self.keep_idx
        w_in = blk.width

        def value(x):
            return x[..., keep_idx]

        def jac(x):
            lead = np.shape(D.primal(x))[:-1]
            J = np.zeros((len(keep_idx), w_in))
            J[np.arange(len(keep_idx)), keep_idx] = 1.0
            return np.broadcast_to(J, lead + J.shape)
        super().__init__(domain, codomain, value, jac, name or f"proj{self.keep}")

    def free_part(self, x):
        return x[..., self.free_idx]

    def assemble(self, free, kept):
        """Inverse of the split: full coordinates from free and kept parts."""
        joined = D.concatenate([free, kept], -1)
        return joined[..., self._assemble_order]


def check_tame_submersion(h, samples=200, seed=0, rng=None, fan_limit=6, points=None):
    """Sampled check that h is a tame submersion.

    At each point: smallest singular value of dh above 1e-8, cone equality
    (dh)^{-1}(T+) = T+ on a fan of test vectors, and depth preservation.
    Points are visited deepest first, so witnesses sit on the deepest stratum.
    """
    dom, cod = h.domain, h.codomain
    if dom.dim < cod.dim:
        raise ShapeError(f"dim domain {dom.dim} < dim codomain {cod.dim}")
    if rng is None:
        rng = np.random.default_rng(seed)
    x = dom.sample(rng, samples) if points is None else np.asarray(points, dtype=float)
    y = D.primal(h(x))
    bd, bc = dom.block, cod.block
    dx = np.sum(bd.active(x), -1)
    dy = np.sum(bc.active(y), -1)
    order = np.argsort(-dx, kind="stable")
    J = D.primal(h.jacobian(x))
    Bx = bd.tangent_basis(x)
    By = bc.tangent_basis(y)
    A = np.einsum("...ji,...jk,...kl->...il", By, J, Bx)
    if bd.dim <= fan_limit:
        fan = np.array([v for v in itertools.product([1.0, -1.0, 0.0], repeat=bd.dim)
                        if any(v)]).reshape(-1, bd.dim)
    else:
        fan = np.concatenate([np.eye(bd.dim), -np.eye(bd.dim),
                              rng.choice([1.0, -1.0, 0.0], (256, bd.dim))])
    sig = np.full(len(x), np.inf)
    if cod.dim > 0:
        sig = np.linalg.svd(A, compute_uv=False)[..., cod.dim - 1] if bd.dim else sig
    residuals = np.zeros(len(x))
    witness = None
    fails = {"surjectivity": 0, "cone": 0, "depth": 0}
    for i in order:
        act_x = bd.active(x[i])
        act_y = bc.active(y[i])
        vs = fan @ Bx[i].T
        ws = (fan @ A[i].T) @ By[i].T
        in_x = np.all(vs[:, act_x] >= -ZERO_TOL, axis=-1)
        in_y = np.all(ws[:, act_y] >= -ZERO_TOL, axis=-1)
        bad_fan = np.flatnonzero(in_x != in_y)
        problem = None
        if cod.dim > 0 and sig[i] <= 1e-8:
            fails["surjectivity"] += 1
            problem = {"reason": "differential not surjective", "sigma_min": float(sig[i])}
        if len(bad_fan):
            fails["cone"] += 1
            problem = problem or {"reason": "cone mismatch", "vector": fan[bad_fan[0]].tolist(),
                                  "tangent": vs[bad_fan[0]].tolist()}
        if dx[i] != dy[i]:
            fails["depth"] += 1
            problem = problem or {"reason": "depth changed", "depth_in": int(dx[i]),
                                  "depth_out": int(dy[i])}
        if problem is not None:
            residuals[i] = 1.0
            if witness is None:
                witness = {"point": x[i].tolist(), "image": y[i].tolist(), **problem}
    passed = witness is None
    return Report("tame_submersion", passed, float(residuals.max(initial=0.0)), 0.0,
                  witness, {"samples": int(len(x)), "failures": fails,
                            "fan_size": int(len(fan)), "map": h.name})


# ---------------------------------------------------------------- blow-up

@dataclass(frozen=True)
class LinearSlice:
    """L = {x_i = 0 for the given LINE factors} inside a block."""
    normal: tuple


@dataclass(frozen=True)
class CornerFace:
    """L = {x_i = 0 for the given HALF factors}: a codimension-n corner face."""
    normal: tuple


@dataclass
class BlowUpData:
    total: CoordinateManifold
    blow_down: SmoothMap
    boundary: CoordinateManifold
    radius: SmoothMap
    lift: SmoothMap
    presentation: object
    locus: CoordinateManifold
    normal_dim: int
    boundary_embedding: SmoothMap = field(default=None)


def blow_up(M, L):
    """Real blow-up of M along a linear slice or corner face.

    The normal factors are replaced by SPHERE(n-1) x HALF placed first,
    followed by the remaining factors in their original order; so points
    of [M:L] are (w, r, y) and the blow-down is (w, r, y) -> (r w, y).
    """
    presentation = getattr(L, "presentation", L)
    blk = M.block
    if isinstance(presentation, LinearSlice):
        kind, clipped = "line", False
    elif isinstance(presentation, CornerFace):
        kind, clipped = "half", True
    else:
        raise UnsupportedSubmanifoldError(f"unsupported presentation {presentation!r}")
    normal = tuple(presentation.normal)
    if not normal or len(set(normal)) != len(normal):
        raise UnsupportedSubmanifoldError("normal factor list must be nonempty and distinct")
    for i in normal:
        if i >= len(blk.factors) or blk.factors[i].kind != kind:
            raise UnsupportedSubmanifoldError(
                f"factor {i} of {blk!r} is not a {kind.upper()} factor")
    n = len(normal)
    rest = tuple(i for i in range(len(blk.factors)) if i not in normal)
    rest_block = blk.sub(rest)
    sph = SPHERE(n - 1, clipped)
    total = CoordinateManifold(ModelBlock((sph, HALF) + rest_block.factors),
                               name=f"[{M.name}:L]")
    bnd = CoordinateManifold(ModelBlock((sph,) + rest_block.factors), name="S")
    locus = CoordinateManifold(rest_block, name="L")
    normal_idx = blk.coord_index(normal)
    rest_idx = blk.coord_index(rest)
    order = np.argsort(np.concatenate([normal_idx, rest_idx]))
    w = M.width

    def kappa(z):
        om, r, y = z[..., :n], z[..., n:n + 1], z[..., n + 1:]
        return D.concatenate([r * om, y], -1)[..., order]

    def kappa_jac(z):
        z = D.primal(z)
        lead = z.shape[:-1]
        J = np.zeros(lead + (w, total.width))
        om, r = z[..., :n], z[..., n]
        rows_n, rows_r = normal_idx, rest_idx
        for a in range(n):
            J[..., rows_n[a], a] = r
            J[..., rows_n[a], n] = om[..., a]
        for b, row in enumerate(rows_r):
            J[..., row, n + 1 + b] = 1.0
        return J

    def lift(x):
        xn = x[..., normal_idx]
        r = D.norm(xn)
        with np.errstate(divide="ignore", invalid="ignore"):
            om = xn * D.reciprocal(r)[..., None]
        return D.concatenate([om, r[..., None], x[..., rest_idx]], -1)

    def radius(z):
        return z[..., n:n + 1]

    def s_embed(s):
        lead = np.shape(D.primal(s))[:-1]
        return D.concatenate([s[..., :n], np.zeros(lead + (1,)), s[..., n:]], -1)

    half = CoordinateManifold(ModelBlock((HALF,)))
    return BlowUpData(
        total=total,
        blow_down=SmoothMap(total, M, kappa, kappa_jac, "blow_down"),
        boundary=bnd,
        radius=SmoothMap(total, half, radius, name="r_L"),
        lift=SmoothMap(M, total, lift, name="lift"),
        presentation=presentation,
        locus=locus,
        normal_dim=n,
        boundary_embedding=SmoothMap(bnd, total, s_embed, name="S->[M:L]"),
    )
