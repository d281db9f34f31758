"""Scenario runner.

Scenario files hold one JSON object per line, for example

    {"construction": "desingularize", "n": 2, "k": 1,
     "checks": ["axioms", "algebroid_iso"], "samples": 200, "seed": 42}

Reports are JSON Lines with a fixed field order: one line per check and a
final summary line. Timings live in the ``elapsed_s`` field and are the only
part of a report that may differ between runs.
"""

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .errors import ArtifactError, UnsupportedError
from .report import Report

CONSTRUCTIONS = ("pair", "pullback", "adiabatic", "edge", "edge_ni", "desingularize",
                 "desingularize_ni", "hyperbolic", "edge_operator_demo")
CHECKS = ("axioms", "algebroid_axioms", "tame", "algebroid_iso", "morphism",
          "bracket_closure", "ideal", "convolution")
TOLERANCES = {"structural": 1e-10, "differentiated": 1e-7, "bracket": 1e-5,
              "compose": 1e-9, "ideal": 1e-6, "convolution": 1e-6, "scaling": 1e-8}
FIELDS = ("scenario", "construction", "check", "passed", "max_residual", "tol", "witness",
          "error", "seed", "samples", "version", "elapsed_s")


class Scenario:
    def __init__(self, cfg, seed=None, samples=None, tol=None):
        self.construction = cfg.get("construction")
        if self.construction not in CONSTRUCTIONS:
            raise UnsupportedError(f"unknown construction {self.construction!r}")
        self.n = int(cfg.get("n", 2))
        self.k = int(cfg.get("k", 1))
        self.order = cfg.get("order")
        self.R = cfg.get("R")
        self.f = cfg.get("f", "projection")
        default = ["convolution"] if self.construction == "edge_operator_demo" else ["axioms"]
        self.checks = list(cfg.get("checks", default))
        for c in self.checks:
            if c not in CHECKS:
                raise UnsupportedError(f"unknown check {c!r}")
        self.samples = int(samples if samples is not None else cfg.get("samples", 200))
        self.seed = int(seed if seed is not None else cfg.get("seed", 0))
        self.tol = dict(TOLERANCES)
        self.tol.update(cfg.get("tol", {}))
        self.tol.update(tol or {})


# ---------------------------------------------------------------- constructions

def _points(sc):
    return max(20, min(sc.samples, 100))


def _algebroid_reports(A, sc):
    from .algebroid import algebroid_axiom_suite, fd_bracket_agreement
    p = _points(sc)
    return Report.combine(f"algebroid axioms[{A.name}]", [
        algebroid_axiom_suite(A, points=p, seed=sc.seed, tol=sc.tol["bracket"]),
        fd_bracket_agreement(A, points=p, seed=sc.seed, tol=sc.tol["bracket"])])


def _axioms(G, sc):
    from .groupoid import axiom_suite
    return axiom_suite(G, pairs=sc.samples, triples=sc.samples, seed=sc.seed,
                       tol=sc.tol["structural"])


def _morphisms(name, isos, sc):
    from .groupoid import morphism_suite
    return Report.combine(name, [morphism_suite(m, pairs=sc.samples, seed=sc.seed,
                                                tol=sc.tol["structural"]) for m in isos])


def _build_pair(sc):
    from .algebroid import TangentAlgebroid, bracket_closure, check_algebroid_iso, \
        lie_algebroid_of
    from .geometry import euclidean
    from .groupoid import pair_groupoid, structure_maps_tame
    M = euclidean(sc.n)
    G = pair_groupoid(M)
    A = lie_algebroid_of(G)
    rng = np.random.default_rng(sc.seed)

    def convolution():
        if sc.n != 1:
            raise UnsupportedError("the convolution check runs on pair(R)")
        from .convolution import (FiberQuadrature, associativity_check,
                                  gaussian_composition_error, gaussian_kernel)
        order, R = int(sc.order or 64), float(sc.R or 8.0)
        err = gaussian_composition_error(order, R)
        q = FiberQuadrature(G, order, R)
        ks = [gaussian_kernel(G, s, center=c).truncate(R / 2)
              for s, c in [(0.5, 0.3), (0.55, -0.2), (0.45, 0.1)]]
        return Report.combine("convolution", [
            Report.from_residuals("gaussian composition", [err], sc.tol["convolution"]),
            associativity_check(*ks, q, samples=min(sc.samples, 100), seed=sc.seed,
                                budget=sc.tol["convolution"])])
    return {
        "axioms": lambda: _axioms(G, sc),
        "algebroid_axioms": lambda: _algebroid_reports(A, sc),
        "tame": lambda: structure_maps_tame(G, samples=sc.samples, seed=sc.seed),
        "algebroid_iso": lambda: check_algebroid_iso(A, TangentAlgebroid(M),
                                                     M.sample(rng, _points(sc)),
                                                     tol=sc.tol["structural"],
                                                     name="A(pair) = TM"),
        "bracket_closure": lambda: bracket_closure(A, points=_points(sc), seed=sc.seed),
        "convolution": convolution,
    }


def _build_pullback(sc):
    from .algebroid import bracket_closure, check_algebroid_iso, lie_algebroid_of, \
        thick_pullback
    from .geometry import Projection, euclidean
    from .groupoid import morphism, pair_groupoid, pullback_groupoid, structure_maps_tame
    from . import dual as D
    M = euclidean(sc.n + sc.k)
    f = Projection(M, tuple(range(sc.n, sc.n + sc.k)), name="f")
    H = pair_groupoid(f.codomain)
    P = pullback_groupoid(f, H)
    A = lie_algebroid_of(P)
    PM = pair_groupoid(M)
    n, k = sc.n, sc.k

    def to_pair(g):
        a, h, b = g[..., :n], g[..., n:n + 2 * k], g[..., n + 2 * k:]
        return D.concatenate([f.assemble(a, h[..., :k]), f.assemble(b, h[..., k:])], -1)

    def from_pair(g):
        p, q = g[..., :n + k], g[..., n + k:]
        return D.concatenate([f.free_part(p), f(p), f(q), f.free_part(q)], -1)
    iso = morphism(P, PM, to_pair, lambda x: x, name="f^(pair) = pair", inverse=from_pair)
    rng = np.random.default_rng(sc.seed)
    return {
        "axioms": lambda: _axioms(P, sc),
        "algebroid_axioms": lambda: _algebroid_reports(A, sc),
        "tame": lambda: structure_maps_tame(P, samples=sc.samples, seed=sc.seed),
        "algebroid_iso": lambda: check_algebroid_iso(
            A, thick_pullback(f, lie_algebroid_of(H)), M.sample(rng, _points(sc)),
            tol=sc.tol["bracket"], name="A(f^H) ~ f^A(H)"),
        "bracket_closure": lambda: bracket_closure(A, points=_points(sc), seed=sc.seed),
        "morphism": lambda: _morphisms("pullback identification", [iso], sc),
    }


def _build_adiabatic(sc):
    from .algebroid import adiabatic_algebroid, bracket_closure, check_algebroid_iso, \
        lie_algebroid_of
    from .deformation import adiabatic_groupoid, adiabatic_restrictions, scaling_action
    from .geometry import euclidean
    from .groupoid import pair_groupoid, structure_maps_tame
    G = pair_groupoid(euclidean(sc.n))
    Gad = adiabatic_groupoid(G)
    A = lie_algebroid_of(Gad)
    rng = np.random.default_rng(sc.seed)

    def morphisms():
        isos = [scaling_action(Gad, s) for s in (0.5, 2.0, 10.0)]
        isos += [r.iso for r in adiabatic_restrictions(Gad)]
        return _morphisms("adiabatic morphisms", isos, sc)
    return {
        "axioms": lambda: _axioms(Gad, sc),
        "algebroid_axioms": lambda: _algebroid_reports(A, sc),
        "tame": lambda: structure_maps_tame(Gad, samples=sc.samples, seed=sc.seed),
        "algebroid_iso": lambda: check_algebroid_iso(
            A, adiabatic_algebroid(lie_algebroid_of(G)), Gad.units.sample(rng, _points(sc)),
            tol=sc.tol["bracket"], name="A(G_ad) ~ A(G)_ad"),
        "bracket_closure": lambda: bracket_closure(A, points=_points(sc), seed=sc.seed),
        "morphism": morphisms,
    }


def _edge_inputs(sc):
    from .geometry import HALF, LINE, Projection, manifold
    from .groupoid import pair_groupoid
    if sc.f == "nontame":
        # dropping a boundary factor does not preserve depth
        M = manifold(HALF, *([LINE] * sc.k), name="[0,inf) x R^k")
        f = Projection(M, tuple(range(1, 1 + sc.k)), name="f")
    else:
        M = manifold(*([LINE] * (sc.n + sc.k)), name=f"R^{sc.n + sc.k}")
        f = Projection(M, tuple(range(sc.n, sc.n + sc.k)), name="f")
    return f, pair_groupoid(f.codomain)


def _build_edge(sc):
    from .algebroid import bracket_closure, lie_algebroid_of
    from .deformation import edge_modification, edge_restrictions
    from .groupoid import structure_maps_tame
    f, H = _edge_inputs(sc)
    E = edge_modification(f, H)
    A = lie_algebroid_of(E)
    return {
        "axioms": lambda: _axioms(E, sc),
        "algebroid_axioms": lambda: _algebroid_reports(A, sc),
        "tame": lambda: structure_maps_tame(E, samples=sc.samples, seed=sc.seed),
        "bracket_closure": lambda: bracket_closure(A, points=_points(sc), seed=sc.seed),
        "morphism": lambda: _morphisms("edge restrictions",
                                       [r.iso for r in edge_restrictions(E)], sc),
    }


def _build_edge_ni(sc):
    from .algebroid import bracket_closure, lie_algebroid_of
    from .deformation import (comparison_morphism, edge_modification, edge_modification_ni,
                              edge_ni_as_pullback, edge_ni_restriction)
    from .groupoid import structure_maps_tame
    f, H = _edge_inputs(sc)
    E_ni = edge_modification_ni(f, H)
    A = lie_algebroid_of(E_ni)

    def morphisms():
        E = edge_modification(f, H)
        isos = [comparison_morphism(E, E_ni), edge_ni_restriction(E_ni).iso,
                edge_ni_as_pullback(f, H)[1]]
        return _morphisms("edge_ni morphisms", isos, sc)
    return {
        "axioms": lambda: _axioms(E_ni, sc),
        "algebroid_axioms": lambda: _algebroid_reports(A, sc),
        "tame": lambda: structure_maps_tame(E_ni, samples=sc.samples, seed=sc.seed),
        "bracket_closure": lambda: bracket_closure(A, points=_points(sc), seed=sc.seed),
        "morphism": morphisms,
    }


def _build_desing(sc, anisotropic=False, face=False):
    from .algebroid import bracket_closure, lie_algebroid_of
    from . import desing as DS
    G, L = (DS.corner_face if face else DS.linear_slice)(sc.n, sc.k)
    glued = DS.hyperbolic_desingularize(G, L) if face else DS.desingularize(G, L)
    target, psi = glued, None
    if anisotropic:
        target, psi = DS.desingularize_ni(G, L, glued=glued)
    A = lie_algebroid_of(G)
    W, Wni = DS.desing_algebroid(A, L), DS.desing_algebroid_ni(A, L)
    Wt = Wni if anisotropic else W

    def morphisms():
        isos = list(DS.desing_restrictions(target))
        if psi is not None:
            isos.append(psi)
        if face and L.n == 1:
            isos.append(DS.face_model_iso(target))
        reps = [_morphisms("desingularization morphisms", isos, sc),
                DS.s_invariance(target, seed=sc.seed)]
        if not face:
            reps.append(DS.canonical_form_check(G, L, pairs=sc.samples, seed=sc.seed,
                                                tol=sc.tol["structural"]))
        return Report.combine("morphisms", reps)

    def ideal():
        z = DS.sample_blowup(L, _points(sc), seed=sc.seed, on_s=_points(sc))
        return DS.ideal_check(W, Wni, z, tol=sc.tol["ideal"], seed=sc.seed)

    def tame():
        if face:
            raise UnsupportedError("the face projection is not tame; the model is built "
                                   "without the tameness check")
        return L.check(points=_points(sc), seed=sc.seed)
    return {
        "axioms": lambda: _axioms(target, sc),
        "algebroid_axioms": lambda: _algebroid_reports(Wt, sc),
        "tame": tame,
        "algebroid_iso": lambda: DS.check_desing_algebroid_iso(
            G, L, points=max(100, _points(sc)), seed=sc.seed, glued=target,
            anisotropic=anisotropic, tol=sc.tol["bracket"]),
        "bracket_closure": lambda: bracket_closure(Wt, points=_points(sc), seed=sc.seed),
        "ideal": ideal,
        "morphism": morphisms,
    }


def _build_demo(sc):
    from .convolution import edge_operator_demo
    order, R = int(sc.order or 10), float(sc.R or 3.0)
    return {"convolution": lambda: edge_operator_demo(sc.n, sc.k, order=order, R=R,
                                                      seed=sc.seed)}


BUILDERS = {
    "pair": _build_pair,
    "pullback": _build_pullback,
    "adiabatic": _build_adiabatic,
    "edge": _build_edge,
    "edge_ni": _build_edge_ni,
    "desingularize": lambda sc: _build_desing(sc),
    "desingularize_ni": lambda sc: _build_desing(sc, anisotropic=True),
    "hyperbolic": lambda sc: _build_desing(sc, face=True),
    "edge_operator_demo": _build_demo,
}


# ---------------------------------------------------------------- running

def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def _entry(idx, sc, check, passed, residual, tol, witness, error, elapsed):
    vals = {"scenario": idx, "construction": sc.construction, "check": check,
            "passed": bool(passed), "max_residual": residual, "tol": tol,
            "witness": witness, "error": error, "seed": sc.seed, "samples": sc.samples,
            "version": __version__, "elapsed_s": round(elapsed, 3)}
    return {k: _clean(vals[k]) for k in FIELDS}


def _error(e):
    return {"type": type(e).__name__, "message": str(e)}


def run_scenario(sc, idx=0, threads=1):
    """Build the construction and run its checks; returns report entries."""
    t0 = time.perf_counter()
    try:
        table = BUILDERS[sc.construction](sc)
    except ArtifactError as e:
        return [_entry(idx, sc, "construction", False, None, None, e.witness, _error(e),
                       time.perf_counter() - t0)]

    def one(check):
        t = time.perf_counter()
        if check not in table:
            e = UnsupportedError(f"check {check!r} does not apply to {sc.construction}")
            return _entry(idx, sc, check, False, None, None, None, _error(e), 0.0)
        try:
            rep = table[check]()
        except ArtifactError as e:
            return _entry(idx, sc, check, False, None, None, e.witness, _error(e),
                          time.perf_counter() - t)
        return _entry(idx, sc, check, rep.passed, rep.max_residual, rep.tol, rep.witness,
                      None, time.perf_counter() - t)
    if threads > 1 and len(sc.checks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, sc.checks))
    return [one(c) for c in sc.checks]


def payload(entries):
    """Report entries without timings: the deterministic part."""
    return [{k: v for k, v in e.items() if k != "elapsed_s"} for e in entries]


def parse_scenarios(text, seed=None, samples=None, tol=None):
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(Scenario(json.loads(line), seed, samples, tol))
    return out


def run(scenarios, threads=None):
    from .convolution import thread_count
    threads = thread_count() if threads is None else threads
    entries = []
    for i, sc in enumerate(scenarios):
        entries.extend(run_scenario(sc, i, threads))
    return entries


def summary_line(entries):
    failed = [e for e in entries if not e["passed"]]
    return {"summary": True, "passed": not failed, "checks": len(entries),
            "failed": len(failed), "version": __version__}


def _parse_tol(items):
    out = {}
    for item in items or []:
        name, _, value = item.partition("=")
        if name not in TOLERANCES or not value:
            raise SystemExit(f"bad --tol {item!r}; names: {', '.join(TOLERANCES)}")
        out[name] = float(value)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    ap.add_argument("--list-constructions", action="store_true",
                    help="print the construction and check names")
    sub = ap.add_subparsers(dest="cmd")
    rp = sub.add_parser("run", help="run a scenario file")
    rp.add_argument("scenario_file")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--samples", type=int)
    rp.add_argument("--tol", action="append", metavar="NAME=VALUE")
    rp.add_argument("--report", metavar="PATH")
    args = ap.parse_args(argv)
    if args.list_constructions:
        print("constructions: " + " ".join(CONSTRUCTIONS))
        print("checks: " + " ".join(CHECKS))
        return 0
    if args.cmd != "run":
        ap.print_help()
        return 2
    with open(args.scenario_file) as fh:
        text = fh.read()
    try:
        scenarios = parse_scenarios(text, args.seed, args.samples, _parse_tol(args.tol))
    except (ArtifactError, ValueError) as e:
        print(f"invalid scenario file: {e}", file=sys.stderr)
        return 2
    entries = run(scenarios)
    for e in entries:
        verdict = "PASS" if e["passed"] else "FAIL"
        extra = f" [{e['error']['type']}: {e['error']['message']}]" if e["error"] else ""
        res = e["max_residual"]
        res = f"{res:.3e}" if isinstance(res, float) else str(res)
        print(f"{verdict} #{e['scenario']} {e['construction']}:{e['check']} "
              f"residual {res}{extra}")
    summ = summary_line(entries)
    print(f"{'PASS' if summ['passed'] else 'FAIL'}: {summ['checks'] - summ['failed']}"
          f"/{summ['checks']} checks passed")
    if args.report:
        with open(args.report, "w") as fh:
            for e in entries + [summ]:
                fh.write(json.dumps(e) + "\n")
    return 0 if summ["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
