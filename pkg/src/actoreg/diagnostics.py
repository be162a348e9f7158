"""Actor-internal diagnostics: dead units, feature norms, srank and plasticity, on train vs validation data."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from actoreg.core import AdamState, Rng, adam_step, backward, no_grad, square, tsum
from actoreg.networks import Mlp, penultimate_features

SRANK_DELTA = 0.99
PLASTICITY_STEPS = 100
MAX_DIAG_BATCH = 4096


def _features(actor_or_features, states=None) -> np.ndarray:
    if isinstance(actor_or_features, Mlp):
        if states is None or len(states) == 0:
            raise ValueError("state batch must be nonempty")
        return penultimate_features(actor_or_features, states)
    feats = np.asarray(actor_or_features)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("feature batch must be a nonempty 2-D array")
    return feats


def dead_neuron_fraction(actor, states=None) -> float:
    """Fraction of penultimate ReLU units that are zero on every sample.

    Accepts an actor plus states, or a precomputed (batch, units) activation matrix.
    """
    feats = _features(actor, states)
    return float(np.mean(np.all(feats == 0, axis=0)))


def feature_norm(actor, states=None) -> float:
    """Mean per-sample L2 norm of the penultimate features."""
    feats = _features(actor, states).astype(np.float64)
    return float(np.mean(np.sqrt(np.sum(feats * feats, axis=1))))


def srank(features: np.ndarray, delta: float = SRANK_DELTA) -> int:
    """Smallest k whose top-k singular values hold a ``delta`` share of the total."""
    sv = np.linalg.svd(np.asarray(features, dtype=np.float64), compute_uv=False)
    total = sv.sum()
    if total == 0:
        return 0
    cum = np.cumsum(sv) / total
    # tolerate rounding in the cumulative sum right at the threshold
    return int(np.searchsorted(cum, delta - 1e-12) + 1)


def bc_loss(actor: Mlp, states, actions, rng: Rng | None = None, mode: str = "eval"):
    out = actor.forward(states, rng=rng, mode=mode)
    pred = out[0] if isinstance(out, tuple) else out
    return tsum(square(pred - actions), axis=1).mean()


def plasticity_loss(actor: Mlp, states: np.ndarray, actions: np.ndarray, steps: int = PLASTICITY_STEPS,
                    lr: float = 1e-3, seed: int = 0) -> float:
    """Fit a copy of ``actor`` to (states, actions) by squared-error BC; return the final loss.

    Updates run in train mode (dropout active); the returned loss is evaluated
    in eval mode after the last update. The original actor is not modified.
    """
    if len(states) == 0:
        raise ValueError("validation data must be nonempty")
    probe = actor.clone()
    params = probe.parameters()
    opt = AdamState.create(params, lr=lr)
    rng = Rng(seed, "plasticity")
    for _ in range(steps):
        loss = bc_loss(probe, states, actions, rng=rng, mode="train")
        adam_step(params, backward(loss, params), opt)
    with no_grad():
        return float(bc_loss(probe, states, actions).data)


@dataclass
class DiagnosticsReport:
    step: int
    dead_fraction_train: float
    dead_fraction_val: float
    feature_norm_train: float
    feature_norm_val: float
    srank_train: int
    srank_val: int
    plasticity_loss: float
    dead_fraction_ratio: float | None = None
    feature_norm_ratio: float | None = None
    srank_ratio: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(val: float, train: float) -> float | None:
    return None if train == 0 else float(val) / float(train)


def _cap(idx: np.ndarray, limit: int, rng: Rng) -> np.ndarray:
    if len(idx) <= limit:
        return idx
    return np.sort(rng.generator.choice(idx, size=limit, replace=False))


def diagnostics_ratio_report(actor: Mlp, dataset, split, step: int = 0, plasticity_steps: int = PLASTICITY_STEPS,
                             lr: float = 1e-3, seed: int = 0, max_batch: int = MAX_DIAG_BATCH) -> DiagnosticsReport:
    """All metrics on both splits plus val/train ratios (missing when the train side is 0)."""
    if len(split.train) == 0 or len(split.validation) == 0:
        raise ValueError("both splits must be nonempty")
    rng = Rng(seed, "diagnostics")
    tr = _cap(np.asarray(split.train), max_batch, rng)
    va = _cap(np.asarray(split.validation), max_batch, rng)
    f_tr = penultimate_features(actor, dataset.states[tr])
    f_va = penultimate_features(actor, dataset.states[va])
    rep = DiagnosticsReport(
        step=int(step),
        dead_fraction_train=dead_neuron_fraction(f_tr),
        dead_fraction_val=dead_neuron_fraction(f_va),
        feature_norm_train=feature_norm(f_tr),
        feature_norm_val=feature_norm(f_va),
        srank_train=srank(f_tr),
        srank_val=srank(f_va),
        plasticity_loss=plasticity_loss(actor, dataset.states[va], dataset.actions[va], plasticity_steps, lr, seed),
    )
    rep.dead_fraction_ratio = _ratio(rep.dead_fraction_val, rep.dead_fraction_train)
    rep.feature_norm_ratio = _ratio(rep.feature_norm_val, rep.feature_norm_train)
    rep.srank_ratio = _ratio(rep.srank_val, rep.srank_train)
    return rep
