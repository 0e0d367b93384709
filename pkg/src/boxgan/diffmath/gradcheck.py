"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad

KINK_TOL = 1e-2


@dataclass
class EntryCheck:
    param: int
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float
    kink: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[EntryCheck] = field(default_factory=list)

    def max_rel_err(self, param: int | None = None) -> float:
        errs = [e.rel_err for e in self.entries if not e.kink and (param is None or e.param == param)]
        return max(errs, default=0.0)

    @property
    def kinks(self) -> list[EntryCheck]:
        return [e for e in self.entries if e.kink]

    @property
    def passed(self) -> bool:
        return self.max_rel_err() <= self.tolerance

    def per_param(self) -> dict[int, bool]:
        params = sorted({e.param for e in self.entries})
        return {p: self.max_rel_err(p) <= self.tolerance for p in params}


def grad_check(fn: Callable[..., Tensor], point, tolerance: float = 1e-6, h: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    ``point`` is one array or a sequence of arrays; ``fn`` receives one float64
    Tensor per array and returns a scalar.  Entries where the one-sided
    differences disagree are flagged as kinks and left out of the verdict.
    The relative error uses a floor of 1e-4 * max(1, |f|) in the denominator
    so exact-zero gradients do not divide by rounding noise.
    """
    single = isinstance(point, np.ndarray) or np.isscalar(point)
    arrays = [np.array(point, dtype=np.float64)] if single else [np.array(p, dtype=np.float64) for p in point]

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    value = fn(*leaves)
    analytic = [g.data for g in grad(value, leaves)]
    floor = 1e-4 * max(1.0, abs(value.item()))

    def evaluate(k, idx, delta):
        probe = [a.copy() for a in arrays]
        probe[k][idx] += delta
        # graph recording stays on: fn may differentiate internally
        return fn(*[Tensor(a) for a in probe]).item()

    f0 = value.item()
    report = GradCheckReport(tolerance)
    for k, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            fp = evaluate(k, idx, h)
            fm = evaluate(k, idx, -h)
            numeric = (fp - fm) / (2 * h)
            d_plus = (fp - f0) / h
            d_minus = (f0 - fm) / h
            kink = abs(d_plus - d_minus) > KINK_TOL * max(1.0, abs(d_plus), abs(d_minus))
            an = float(analytic[k][idx])
            rel = abs(an - numeric) / max(abs(an), abs(numeric), floor)
            report.entries.append(EntryCheck(k, tuple(int(i) for i in idx), an, numeric, rel, kink))
    return report
