"""Implicit Q-learning with advantage-weighted policy extraction and actor regularizer hooks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from actoreg.algorithms.common import Batch, expectile_loss, polyak_update, require_finite
from actoreg.core import (
    AdamState,
    Rng,
    Tensor,
    adam_step,
    backward,
    check_finite,
    cosine_lr,
    exp,
    mul,
    no_grad,
    square,
    tsum,
)
from actoreg.core.errors import ConfigError
from actoreg.networks import Mlp, MlpSpec, TwinCritic, value_network
from actoreg.regularizers import (
    RegularizerConfig,
    add_gradient_noise,
    elastic_net_penalty,
    gradient_noise_scale,
    inject_noise,
)

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class IqlConfig:
    expectile: float = 0.7
    temperature: float = 3.0
    max_weight: float = 100.0
    discount: float = 0.99
    tau: float = 5e-3
    batch_size: int = 256
    learning_rate: float = 3e-4
    lr_schedule: str = "cosine"  # constant | cosine (actor only)
    hidden_dim: int = 256
    num_hidden_layers: int = 2

    def __post_init__(self):
        if not 0.0 < self.expectile < 1.0:
            raise ConfigError("must lie in (0, 1)", "iql.expectile")
        if self.max_weight <= 0:
            raise ConfigError("must be > 0", "iql.max_weight")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("must lie in (0, 1)", "iql.discount")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("must lie in (0, 1]", "iql.tau")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("must be 'constant' or 'cosine'", "iql.lr_schedule")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "iql.batch_size")
        if self.learning_rate <= 0:
            raise ConfigError("must be > 0", "iql.learning_rate")

    def to_dict(self) -> dict:
        return asdict(self)


def gaussian_log_prob(mean: Tensor, log_std: Tensor, actions: np.ndarray) -> Tensor:
    """Per-sample log density of a diagonal Gaussian, summed over action dims."""
    z = mul(actions - mean, exp(-log_std))
    return tsum(square(z) * -0.5 - log_std - _HALF_LOG_2PI, axis=1)


class IqlTrainer:
    name = "iql"

    def __init__(self, state_dim: int, action_dim: int, config: IqlConfig, reg: RegularizerConfig,
                 seed: int, total_steps: int = 1):
        self.config, self.reg = config, reg
        self.seed = seed
        self.total_steps = max(int(total_steps), 1)
        self.t = 0
        root = Rng(seed, "iql")
        self.rngs = {name: root.child(name) for name in ("dropout", "input_noise", "objective_noise",
                                                          "gradient_noise")}
        self.actor = Mlp(
            MlpSpec(state_dim, action_dim, config.hidden_dim, config.num_hidden_layers,
                    norm_kind=reg.norm_kind, dropout_rate=reg.dropout_rate, output_head="gaussian"),
            root.child("actor_init"),
        )
        self.critic = TwinCritic(state_dim, action_dim, config.hidden_dim, config.num_hidden_layers,
                                 rng=root.child("critic_init"))
        self.value = value_network(state_dim, config.hidden_dim, config.num_hidden_layers, root.child("value_init"))
        self.target_critic = self.critic.clone()
        lr = config.learning_rate
        self.actor_opt = AdamState.create(self.actor.parameters(), lr=lr)
        self.critic_opt = AdamState.create(self.critic.parameters(), lr=lr)
        self.value_opt = AdamState.create(self.value.parameters(), lr=lr)

    @property
    def networks(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic_q1": self.critic.q1, "critic_q2": self.critic.q2, "value": self.value}

    # ------------------------------------------------------------- losses

    def value_loss(self, batch: Batch, q_target: np.ndarray) -> Tensor:
        v = self.value.forward(batch.states)[:, 0]
        return expectile_loss(Tensor(q_target) - v, self.config.expectile)

    def critic_loss(self, batch: Batch) -> Tensor:
        cfg = self.config
        with no_grad():
            next_v = self.value.forward(batch.next_states, frozen=True).data[:, 0]
        target = (batch.rewards + np.float32(cfg.discount) * (1.0 - batch.dones) * next_v).astype(np.float32)
        q1, q2 = self.critic.q_values(batch.states, batch.actions)
        return square(q1 - target).mean() + square(q2 - target).mean()

    def awr_weights(self, advantage: np.ndarray) -> np.ndarray:
        cfg, reg = self.config, self.reg
        logits = np.float32(cfg.temperature) * advantage
        logits = inject_noise(logits, reg.objective_noise, self.rngs["objective_noise"])
        return np.minimum(np.exp(np.minimum(logits, 80.0)), cfg.max_weight).astype(np.float32)

    def actor_loss(self, batch: Batch, advantage: np.ndarray) -> tuple[Tensor, dict]:
        reg = self.reg
        weights = self.awr_weights(advantage)
        states = inject_noise(batch.states, reg.input_noise, self.rngs["input_noise"])
        mean, log_std = self.actor.forward(states, rng=self.rngs["dropout"], mode="train")
        logp = gaussian_log_prob(mean, log_std, batch.actions)
        loss = -(mul(logp, weights).mean())
        penalty = 0.0
        if reg.weight_decay > 0:
            pen = elastic_net_penalty(self.actor.weight_params(), reg.weight_decay, reg.weight_decay_alpha)
            loss = loss + pen
            penalty = float(pen.data)
        return loss, {"bc_term": float(-logp.data.mean()), "penalty_term": penalty}

    # ------------------------------------------------------------- update

    def step(self, batch: Batch) -> dict:
        cfg, reg = self.config, self.reg
        t = self.t
        with no_grad():
            q1t, q2t = self.target_critic.q_values(batch.states, batch.actions, frozen=True)
            q_target = np.minimum(q1t.data, q2t.data)

        vloss = self.value_loss(batch, q_target)
        check_finite(vloss, f"value loss, step {t}")
        vparams = self.value.parameters()
        adam_step(vparams, backward(vloss, vparams), self.value_opt)

        with no_grad():
            v_now = self.value.forward(batch.states, frozen=True).data[:, 0]
        aloss, terms = self.actor_loss(batch, q_target - v_now)
        check_finite(aloss, f"actor loss, step {t}")
        aparams = self.actor.parameters()
        grads = backward(aloss, aparams)
        scale = gradient_noise_scale(reg.gradient_noise, t, reg.gradient_noise_decay)
        grads = add_gradient_noise(grads, scale, self.rngs["gradient_noise"])
        lr = cosine_lr(cfg.learning_rate, t, self.total_steps) if cfg.lr_schedule == "cosine" else None
        adam_step(aparams, grads, self.actor_opt, lr=lr)

        closs = self.critic_loss(batch)
        check_finite(closs, f"critic loss, step {t}")
        cparams = self.critic.parameters()
        adam_step(cparams, backward(closs, cparams), self.critic_opt)
        polyak_update(cparams, self.target_critic.parameters(), cfg.tau)

        report = {"step": t, "actor_loss": float(aloss.data), "critic_loss": float(closs.data),
                  "value_loss": float(vloss.data), "noise_scale": scale, **terms}
        require_finite(report["actor_loss"], "actor loss", t)
        self.t += 1
        return report

    def policy(self, states: np.ndarray) -> np.ndarray:
        with no_grad():
            mean, _ = self.actor.forward(states, mode="eval", frozen=True)
            return mean.data


def iql_step(state: IqlTrainer, batch: Batch) -> dict:
    return state.step(batch)
