"""AdamW with decoupled weight decay.

Decay multiplies weights by (1 - lr * wd) before the moment update and is
never applied to bias-like parameters (conv biases, the region threshold
bias). Moments are bias-corrected; with weight_decay = 0 the update is
exactly Adam.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradientError
from .. import checkpoint as _ckpt

OptimizerState = _ckpt.OptimizerState


def adamw_step(params, grads, state: OptimizerState, *, lr, beta1=0.9, beta2=0.999,
               eps=1e-8, weight_decay=0.01, no_decay=frozenset()) -> None:
    """One update over `params` given `grads` (name -> ndarray), in place.

    Raises NonFiniteGradientError before touching any parameter if any
    gradient is NaN/Inf, so a rejected step leaves params and state intact.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g.astype(p.data.dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new = p.data.copy()
        if weight_decay and name not in no_decay:
            new *= 1.0 - lr * weight_decay
        new -= lr * update
        p.data = new
