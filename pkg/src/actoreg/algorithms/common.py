from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from actoreg.core import Tensor, mul, softmax_cross_entropy
from actoreg.core.errors import ConfigError, NumericError
from actoreg.networks import Mlp, TwinCritic


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


def polyak_update(online: list[Tensor], target: list[Tensor], tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target`` in place."""
    for o, t in zip(online, target):
        t.data *= np.float32(1.0 - tau)
        t.data += np.float32(tau) * o.data


def sync_buffers(online: Mlp, target: Mlp) -> None:
    """Copy non-learned state (running stats, power-iteration vectors) to a target copy."""
    for i, norm in online.norms.items():
        if norm.running_mean is not None:
            target.norms[i].running_mean[...] = norm.running_mean
            target.norms[i].running_var[...] = norm.running_var
    for i, st in online.spectral.items():
        target.spectral[i].u = st.u.copy()
        target.spectral[i].v = st.v.copy()


def target_params(net: Mlp | TwinCritic) -> list[Tensor]:
    return net.parameters()


def expectile_loss(residual, tau: float):
    """Mean of ``|tau - 1{u < 0}| * u**2``; accepts arrays or tensors."""
    if isinstance(residual, Tensor):
        weight = np.where(residual.data < 0, 1.0 - tau, tau).astype(residual.data.dtype)
        return mul(residual * residual, weight).mean()
    u = np.asarray(residual, dtype=np.float64)
    return float(np.mean(np.abs(tau - (u < 0)) * u * u))


def two_hot(values: np.ndarray, v_min: float, v_max: float, bins: int) -> np.ndarray:
    """Spread each value over its two neighbouring bin centers (values clamped to the grid)."""
    if bins < 2 or not v_min < v_max:
        raise ConfigError("need bins >= 2 and v_min < v_max", "critic.bins")
    values = np.clip(np.asarray(values, dtype=np.float64), v_min, v_max)
    pos = (values - v_min) / (v_max - v_min) * (bins - 1)
    lo = np.clip(np.floor(pos).astype(np.int64), 0, bins - 2)
    frac = pos - lo
    out = np.zeros((values.shape[0], bins), dtype=np.float32)
    rows = np.arange(values.shape[0])
    out[rows, lo] = (1.0 - frac).astype(np.float32)
    out[rows, lo + 1] += frac.astype(np.float32)
    return out


def categorical_critic_loss(q_logits: Tensor, target_value, bins: int, v_min: float, v_max: float) -> Tensor:
    """Cross-entropy between predicted bin logits and the two-hot encoded target."""
    if q_logits.shape[1] != bins:
        raise ConfigError(f"logits have {q_logits.shape[1]} bins, expected {bins}", "critic.bins")
    target = two_hot(np.atleast_1d(target_value), v_min, v_max, bins)
    return softmax_cross_entropy(q_logits, target)


def value_range_from_dataset(dataset, gamma: float, margin: float = 0.1) -> tuple[float, float]:
    """Return range for a categorical critic from discounted returns-to-go in the data.

    Episodes are recovered from the stored order: a segment ends at a terminal
    or wherever ``next_states[i]`` differs from ``states[i + 1]``.
    """
    r = dataset.rewards.astype(np.float64)
    if not np.all(np.isfinite(r)):
        raise NumericError("dataset rewards contain non-finite values")
    n = len(r)
    ends = dataset.dones.astype(bool).copy()
    if n > 1:
        ends[:-1] |= np.any(dataset.next_states[:-1] != dataset.states[1:], axis=1)
    ends[-1] = True
    rtg = np.zeros(n)
    running = 0.0
    for i in range(n - 1, -1, -1):
        if ends[i]:
            running = 0.0
        running = r[i] + gamma * running
        rtg[i] = running
    lo = min(rtg.min(), 0.0, r.min())
    hi = max(rtg.max(), 0.0, r.max())
    span = max(hi - lo, 1e-3)
    return float(lo - margin * span), float(hi + margin * span)


def require_finite(value: float, what: str, step: int) -> None:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what} at step {step}")
