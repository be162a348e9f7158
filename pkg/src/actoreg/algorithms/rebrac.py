"""Behavior-regularized TD3-style actor-critic (ReBRAC family) with actor regularizer hooks."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from actoreg.algorithms.common import (
    Batch,
    categorical_critic_loss,
    polyak_update,
    require_finite,
    sync_buffers,
)
from actoreg.core import AdamState, Rng, Tensor, adam_step, backward, check_finite, no_grad, square, tsum
from actoreg.core.errors import ConfigError
from actoreg.networks import Mlp, MlpSpec, TwinCritic
from actoreg.regularizers import (
    RegularizerConfig,
    add_gradient_noise,
    elastic_net_penalty,
    gradient_noise_scale,
    inject_noise,
)


@dataclass
class RebracConfig:
    actor_bc_coef: float = 1.0
    critic_bc_coef: float = 1.0
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_update_delay: int = 2
    discount: float = 0.99
    tau: float = 5e-3
    batch_size: int = 1024
    learning_rate: float = 1e-3
    hidden_dim: int = 256
    num_hidden_layers: int = 3
    critic_layernorm: bool = True
    critic_loss: str = "categorical"  # mse | categorical
    bins: int = 101
    v_min: float | None = None  # None: estimated from the dataset
    v_max: float | None = None
    normalize_q: bool = True

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("must lie in (0, 1)", "rebrac.discount")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("must lie in (0, 1]", "rebrac.tau")
        if self.policy_update_delay < 1:
            raise ConfigError("must be >= 1", "rebrac.policy_update_delay")
        if self.critic_loss not in ("mse", "categorical"):
            raise ConfigError("must be 'mse' or 'categorical'", "rebrac.critic_loss")
        if self.critic_loss == "categorical" and self.bins < 2:
            raise ConfigError("must be >= 2", "rebrac.bins")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "rebrac.batch_size")
        if self.learning_rate <= 0:
            raise ConfigError("must be > 0", "rebrac.learning_rate")

    def to_dict(self) -> dict:
        return asdict(self)


class RebracTrainer:
    """All learnable state of one ReBRAC run plus the update rule."""

    name = "rebrac"

    def __init__(self, state_dim: int, action_dim: int, config: RebracConfig, reg: RegularizerConfig,
                 seed: int, value_range: tuple[float, float] | None = None):
        self.config, self.reg = config, reg
        self.seed = seed
        self.t = 0
        root = Rng(seed, "rebrac")
        self.rngs = {name: root.child(name) for name in ("target_noise", "dropout", "input_noise",
                                                          "objective_noise", "gradient_noise")}
        self.actor = Mlp(
            MlpSpec(state_dim, action_dim, config.hidden_dim, config.num_hidden_layers,
                    norm_kind=reg.norm_kind, dropout_rate=reg.dropout_rate, output_head="tanh"),
            root.child("actor_init"),
        )
        bins, v_min, v_max = None, 0.0, 0.0
        if config.critic_loss == "categorical":
            if value_range is None:
                if config.v_min is None or config.v_max is None:
                    raise ConfigError("categorical critic needs a value range", "rebrac.v_min")
                value_range = (config.v_min, config.v_max)
            bins, (v_min, v_max) = config.bins, value_range
        self.critic = TwinCritic(state_dim, action_dim, config.hidden_dim, config.num_hidden_layers,
                                 norm_kind="layer" if config.critic_layernorm else "none",
                                 bins=bins, v_min=v_min, v_max=v_max, rng=root.child("critic_init"))
        self.target_actor = self.actor.clone()
        self.target_critic = self.critic.clone()
        self.actor_opt = AdamState.create(self.actor.parameters(), lr=config.learning_rate)
        self.critic_opt = AdamState.create(self.critic.parameters(), lr=config.learning_rate)

    @property
    def networks(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic_q1": self.critic.q1, "critic_q2": self.critic.q2}

    # ------------------------------------------------------------- losses

    def td_target(self, batch: Batch) -> np.ndarray:
        cfg = self.config
        with no_grad():
            next_a = self.target_actor.forward(batch.next_states, mode="eval", frozen=True).data
            noise = np.clip(cfg.policy_noise * self.rngs["target_noise"].normal(next_a.shape),
                            -cfg.noise_clip, cfg.noise_clip)
            next_a = np.clip(next_a + noise, -1.0, 1.0).astype(np.float32)
            q1, q2 = self.target_critic.q_values(batch.next_states, next_a, frozen=True)
            next_q = np.minimum(q1.data, q2.data)
        penalty = ((next_a - batch.actions) ** 2).sum(axis=1)
        next_q = next_q - np.float32(cfg.critic_bc_coef) * penalty
        return (batch.rewards + np.float32(cfg.discount) * (1.0 - batch.dones) * next_q).astype(np.float32)

    def critic_loss(self, batch: Batch, target: np.ndarray) -> Tensor:
        o1, o2 = self.critic.head_outputs(batch.states, batch.actions)
        if self.critic.bins:
            c = self.critic
            return (categorical_critic_loss(o1, target, c.bins, c.v_min, c.v_max)
                    + categorical_critic_loss(o2, target, c.bins, c.v_min, c.v_max))
        return square(o1 - target).mean() + square(o2 - target).mean()

    def actor_loss(self, batch: Batch) -> tuple[Tensor, dict]:
        """BC-regularized deterministic policy objective; returns loss and report terms."""
        cfg, reg = self.config, self.reg
        states = inject_noise(batch.states, reg.input_noise, self.rngs["input_noise"])
        pi = self.actor.forward(states, rng=self.rngs["dropout"], mode="train")
        q1 = self.critic.q1_value(batch.states, pi, frozen=True)
        residual = inject_noise(pi - batch.actions, reg.objective_noise, self.rngs["objective_noise"])
        bc = tsum(square(residual), axis=1).mean()
        q_term = q1.mean()
        if cfg.normalize_q:
            q_term = q_term * np.float32(1.0 / max(float(np.abs(q1.data).mean()), 1e-6))
        loss = bc * np.float32(cfg.actor_bc_coef) - q_term
        penalty = 0.0
        if reg.weight_decay > 0:
            pen = elastic_net_penalty(self.actor.weight_params(), reg.weight_decay, reg.weight_decay_alpha)
            loss = loss + pen
            penalty = float(pen.data)
        return loss, {"bc_term": float(bc.data), "penalty_term": penalty}

    # ------------------------------------------------------------- update

    def step(self, batch: Batch) -> dict:
        cfg, reg = self.config, self.reg
        t = self.t
        target = self.td_target(batch)
        closs = self.critic_loss(batch, target)
        check_finite(closs, f"critic loss, step {t}")
        cparams = self.critic.parameters()
        adam_step(cparams, backward(closs, cparams), self.critic_opt)

        report = {"step": t, "actor_loss": None, "critic_loss": float(closs.data),
                  "bc_term": None, "penalty_term": 0.0, "noise_scale": 0.0}
        if t % cfg.policy_update_delay == 0:
            aloss, terms = self.actor_loss(batch)
            check_finite(aloss, f"actor loss, step {t}")
            aparams = self.actor.parameters()
            grads = backward(aloss, aparams)
            scale = gradient_noise_scale(reg.gradient_noise, t, reg.gradient_noise_decay)
            grads = add_gradient_noise(grads, scale, self.rngs["gradient_noise"])
            adam_step(aparams, grads, self.actor_opt)
            report.update(actor_loss=float(aloss.data), noise_scale=scale, **terms)
            require_finite(report["actor_loss"], "actor loss", t)

        polyak_update(self.actor.parameters(), self.target_actor.parameters(), cfg.tau)
        sync_buffers(self.actor, self.target_actor)
        polyak_update(self.critic.parameters(), self.target_critic.parameters(), cfg.tau)
        self.t += 1
        return report

    def policy(self, states: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.actor.forward(states, mode="eval", frozen=True).data


def rebrac_step(state: RebracTrainer, batch: Batch) -> dict:
    return state.step(batch)
