from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from actoreg.core.errors import ContractError, NumericError
from actoreg.core.tensor import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def create(cls, params: list[Tensor], lr: float = 1e-3, **kwargs) -> AdamState:
        # moments live in flat buffers; ``m`` and ``v`` hold per-parameter views into them
        sizes = [p.data.size for p in params]
        dtype = np.result_type(*[p.data.dtype for p in params]) if params else np.float32
        m_flat = np.zeros(sum(sizes), dtype=dtype)
        v_flat = np.zeros(sum(sizes), dtype=dtype)
        bounds = np.cumsum([0, *sizes])
        views = lambda flat: [flat[a:b].reshape(p.data.shape) for a, b, p in zip(bounds, bounds[1:], params)]
        state = cls(m=views(m_flat), v=views(v_flat), lr=lr, **kwargs)
        state.extra["flat"] = (m_flat, v_flat, bounds)
        return state


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float | None = None) -> AdamState:
    """Bias-corrected Adam; updates ``params`` in place and advances ``state.t``.

    ``lr`` overrides ``state.lr`` for this step (learning-rate schedules).
    """
    if len(grads) != len(params):
        raise ContractError(f"adam_step: {len(grads)} grads for {len(params)} params")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ContractError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
    m, v, bounds = state.extra["flat"]
    g = np.concatenate([g.reshape(-1) for g in grads]).astype(m.dtype, copy=False)
    # one cheap reduction over all gradients; only search for the culprit when something is off
    if not math.isfinite(float(g.sum(dtype=np.float64))):
        for p, g in zip(params, grads):
            if not np.all(np.isfinite(g)):
                name = p.name or "<unnamed>"
                raise NumericError(f"adam_step: non-finite gradient for parameter {name}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    step = (state.lr if lr is None else lr) * math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    # eps is scaled to match the textbook form  m_hat / (sqrt(v_hat) + eps)
    eps_hat = state.eps * math.sqrt(1.0 - b2**t)
    m *= b1
    m += (1.0 - b1) * g
    g *= g
    v *= b2
    v += (1.0 - b2) * g
    update = np.sqrt(v)
    update += eps_hat
    np.divide(m, update, out=update)
    update *= step
    for p, a, b in zip(params, bounds, bounds[1:]):
        p.data -= update[a:b].reshape(p.data.shape).astype(p.data.dtype, copy=False)
    return state


def cosine_lr(base_lr: float, t: int, total: int) -> float:
    if total <= 0:
        return base_lr
    frac = min(t, total) / total
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * frac))
