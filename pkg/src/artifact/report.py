"""Check reports shared by all property suites."""

from dataclasses import dataclass, field

import numpy as np


def _plain(x):
    """Convert numpy values to JSON-friendly python values."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float):
        return x if np.isfinite(x) else str(x)
    return x


@dataclass
class Report:
    name: str
    passed: bool
    max_residual: float = 0.0
    tol: float = 0.0
    witness: dict | None = None
    details: dict = field(default_factory=dict)
    sampled: bool = True
    parts: list = field(default_factory=list)

    def __bool__(self):
        return self.passed

    @classmethod
    def from_residuals(cls, name, residuals, tol, witness_fn=None, **details):
        """Pass iff every residual is <= tol; witness is the first offender."""
        res = np.asarray(residuals, dtype=float).ravel()
        if res.size == 0:
            return cls(name, True, 0.0, tol, details=details)
        bad = ~(res <= tol)
        worst = float(np.nanmax(np.where(np.isnan(res), np.inf, res)))
        witness = None
        if bad.any():
            i = int(np.argmax(bad))
            witness = {"index": i, "residual": float(res[i])}
            if witness_fn is not None:
                witness.update(witness_fn(i))
        return cls(name, not bad.any(), worst, tol, witness, details)

    @classmethod
    def combine(cls, name, parts, **details):
        parts = list(parts)
        passed = all(p.passed for p in parts)
        worst = max([p.max_residual for p in parts], default=0.0)
        witness = None
        for p in parts:
            if not p.passed:
                witness = {"part": p.name, **(p.witness or {})}
                break
        tol = max([p.tol for p in parts], default=0.0)
        return cls(name, passed, worst, tol, witness, details,
                   any(p.sampled for p in parts), parts)

    def failed_part(self):
        for p in self.parts:
            if not p.passed:
                return p
        return None

    def to_dict(self):
        out = {
            "name": self.name,
            "verdict": "PASS" if self.passed else "FAIL",
            "max_residual": self.max_residual,
            "tol": self.tol,
            "sampled": self.sampled,
            "witness": self.witness,
        }
        if self.details:
            out["details"] = self.details
        if self.parts:
            out["parts"] = [p.to_dict() for p in self.parts]
        return _plain(out)

    def summary(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name}: max residual {self.max_residual:.3e} (tol {self.tol:.1e})"
