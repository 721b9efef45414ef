"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor

# Relative error uses a small denominator floor so coordinates whose true
# gradient is ~0 do not produce spurious blow-ups from FD roundoff.
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: int
    tol: float
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {state}: max rel err {self.max_rel_err:.3e} over "
            f"{self.checked} coordinates (tol {self.tol:.1e})"
        )


def _forward_value(fn: Callable[[], Tensor]) -> np.ndarray:
    out = fn()
    if out.data.shape != ():
        raise ValueError(f"grad_check: fn must return a scalar, got shape {out.data.shape}")
    return out.data.copy()


def grad_check(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of `fn()` against central finite differences.

    `fn` recomputes the scalar loss from the current contents of `params`
    and must be deterministic; 64-bit params are expected. When the total
    coordinate count exceeds `max_coords`, a uniform subsample (at least
    `max_coords` entries) is checked.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    v1 = _forward_value(fn)
    v2 = _forward_value(fn)
    if v1.tobytes() != v2.tobytes():
        raise RuntimeError("grad_check: fn is not deterministic (two forward passes disagree)")

    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    coords = [(name, i) for name, p in params.items() for i in range(p.data.size)]
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(i)] for i in sorted(picks)]

    max_rel = 0.0
    failures = []
    for name, i in coords:
        flat = params[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(_forward_value(fn))
        flat[i] = orig - h
        f_minus = float(_forward_value(fn))
        flat[i] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        ad = float(analytic[name].reshape(-1)[i])
        rel = abs(ad - fd) / max(abs(ad), abs(fd), REL_FLOOR)
        if rel > max_rel:
            max_rel = rel
        if rel >= tol:
            failures.append((name, i, ad, fd, rel))
    return GradCheckReport(max_rel_err=max_rel, checked=len(coords), tol=tol, failures=failures)
