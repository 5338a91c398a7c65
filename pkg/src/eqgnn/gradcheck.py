"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Var, backward, record_kinks


@dataclass
class GradReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    # entries whose +step/-step probes landed on different sides of a
    # rectifier kink; the function is not differentiable there
    skipped_kinks: dict[str, int] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def failing(self) -> list[str]:
        return [k for k, e in self.max_rel_error.items() if e >= self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failing

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_rel_error.items():
            flag = "FAIL" if err >= self.tolerance else "ok"
            out.append(f"{flag:4s} {name:24s} max_rel_err={err:.3e} "
                       f"checked={self.checked[name]} kinks={self.skipped_kinks[name]}")
        return out


def _params_of(params) -> Mapping[str, Var]:
    if hasattr(params, "params"):
        return params.params
    return params


def check_gradients(loss_fn: Callable[[], Var], params, tolerance: float = 1e-4,
                    step: float = 1e-4, floor: float = 1e-7,
                    analytic: Mapping[str, np.ndarray] | None = None) -> GradReport:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` rebuilds the graph from the current parameter values on every
    call.  Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``.
    Pass ``analytic`` to audit an externally supplied gradient instead of the
    one produced by :func:`backward`.
    """
    named = _params_of(params)
    for p in named.values():
        p.grad = None
    if analytic is None:
        backward(loss_fn())
        analytic = {k: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
                    for k, p in named.items()}

    report = GradReport(tolerance=tolerance)
    for name, p in named.items():
        worst, checked, kinks = 0.0, 0, 0
        flat = p.value.reshape(-1)
        ana = np.asarray(analytic[name]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with record_kinks() as hi_masks:
                f_hi = float(loss_fn().value)
            flat[i] = orig - step
            with record_kinks() as lo_masks:
                f_lo = float(loss_fn().value)
            flat[i] = orig
            if any(not np.array_equal(a, b) for a, b in zip(hi_masks, lo_masks)):
                kinks += 1
                continue
            num = (f_hi - f_lo) / (2.0 * step)
            err = abs(ana[i] - num) / max(abs(ana[i]), abs(num), floor)
            worst = max(worst, err)
            checked += 1
        report.max_rel_error[name] = worst
        report.checked[name] = checked
        report.skipped_kinks[name] = kinks
    return report
