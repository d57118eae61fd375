"""Finite-difference verification of analytic gradients.

Checks run at float64 regardless of the training precision; central
differences are meaningless at float32. The loss builder must be a
deterministic function of the parameter values. Points where the loss is
not differentiable (relu/clamp kinks) are outside the contract of a
finite-difference check, so callers pick inputs away from kinks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, epsilon, no_grad


@dataclass
class ParamReport:
    name: str
    max_rel_error: float
    worst_index: int
    analytic: float
    numeric: float
    nonfinite_indices: list = field(default_factory=list)


@dataclass
class GradCheckReport:
    params: list
    tolerance: float
    max_rel_error: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(not p.nonfinite_indices for p in self.params)


def _rel_error(a, n, floor):
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(loss_builder, params, step=1e-5, tolerance=1e-4, denom_floor=None,
               max_entries=None):
    """Compare backward() gradients against central finite differences.

    loss_builder: callable(dict[str, Tensor]) -> scalar Tensor.
    params: dict of float64 leaf tensors (requires_grad set by the check).
    max_entries: optional per-parameter cap; entries are then drawn from a
    seeded stream so repeated checks probe the same coordinates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    floor = epsilon() if denom_floor is None else denom_floor

    work = {
        name: Tensor(np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64),
                     requires_grad=True, name=name)
        for name, p in params.items()
    }
    loss = loss_builder(work)
    if loss.data.size != 1:
        raise ValueError("loss_builder must return a scalar tensor")
    for t in work.values():
        t.zero_grad()
    loss.backward()
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in work.items()
    }

    frozen = {name: Tensor(t.data.copy(), requires_grad=False) for name, t in work.items()}

    def eval_loss():
        with no_grad():  # probing needs values only, never a graph
            return float(loss_builder(frozen).data.reshape(()))

    reports = []
    failures = []
    overall = 0.0
    for name, t in frozen.items():
        flat = t.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            picker = np.random.Generator(np.random.PCG64(abs(hash(name)) % 2 ** 32))
            indices = picker.choice(flat.size, size=max_entries, replace=False)
        else:
            indices = range(flat.size)
        worst = (0.0, 0, 0.0, 0.0)
        nonfinite = []
        for i in indices:
            keep = flat[i]
            flat[i] = keep + step
            up = eval_loss()
            flat[i] = keep - step
            down = eval_loss()
            flat[i] = keep
            if not (np.isfinite(up) and np.isfinite(down)):
                nonfinite.append(i)
                continue
            numeric = (up - down) / (2.0 * step)
            err = _rel_error(grad_flat[i], numeric, floor)
            if err > worst[0]:
                worst = (err, i, float(grad_flat[i]), numeric)
        rep = ParamReport(name, worst[0], worst[1], worst[2], worst[3], nonfinite)
        reports.append(rep)
        overall = max(overall, worst[0])
        if worst[0] > tolerance or nonfinite:
            failures.append(rep)
    return GradCheckReport(params=reports, tolerance=tolerance,
                           max_rel_error=overall, failures=failures)
