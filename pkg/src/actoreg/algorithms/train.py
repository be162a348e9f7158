"""Training loop shared by both trainers: batch sampling, periodic evaluation, checkpoints and logs."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from actoreg.algorithms.common import Batch, value_range_from_dataset
from actoreg.algorithms.iql import IqlConfig, IqlTrainer
from actoreg.algorithms.rebrac import RebracConfig, RebracTrainer
from actoreg.core import Rng
from actoreg.core.errors import ConfigError
from actoreg.data.envs import Environment, reference_returns, rollout
from actoreg.diagnostics import PLASTICITY_STEPS, diagnostics_ratio_report
from actoreg.evalstats import normalized_score
from actoreg.networks import save_checkpoint
from actoreg.regularizers import RegularizerConfig

ALGORITHMS = ("rebrac", "iql")


def default_eval_episodes(env: Environment) -> int:
    return 100 if env.domain == "sparse" else 10


def default_discount(env: Environment) -> float:
    return 0.999 if env.domain == "sparse" else 0.99


@dataclass
class TrainConfig:
    steps: int = 50_000
    eval_interval: int = 2_500
    eval_episodes: int | None = None  # None: 100 for sparse tasks, 10 otherwise
    log_interval: int = 100
    diagnostics: bool = True
    plasticity_steps: int = PLASTICITY_STEPS

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("must be >= 1", "train.steps")
        if not 1 <= self.eval_interval <= self.steps:
            raise ConfigError("must lie in [1, steps]", "train.eval_interval")
        if self.eval_episodes is not None and self.eval_episodes < 1:
            raise ConfigError("must be >= 1", "train.eval_episodes")
        if self.log_interval < 1:
            raise ConfigError("must be >= 1", "train.log_interval")
        if self.plasticity_steps < 0:
            raise ConfigError("must be >= 0", "train.plasticity_steps")


@dataclass
class RunResult:
    steps: list[int] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    trainer: object = None


def make_trainer(algorithm: str, dataset, algo_config, reg: RegularizerConfig, seed: int, total_steps: int):
    n, m = dataset.state_dim, dataset.action_dim
    if algorithm == "rebrac":
        cfg = algo_config or RebracConfig()
        value_range = None
        if cfg.critic_loss == "categorical" and (cfg.v_min is None or cfg.v_max is None):
            value_range = value_range_from_dataset(dataset, cfg.discount)
        return RebracTrainer(n, m, cfg, reg, seed, value_range=value_range)
    if algorithm == "iql":
        return IqlTrainer(n, m, algo_config or IqlConfig(), reg, seed, total_steps=total_steps)
    raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}", "run.algorithm")


def batch_sampler(dataset, indices: np.ndarray, batch_size: int, rng: Rng) -> Callable[[], Batch]:
    indices = np.asarray(indices)

    def sample() -> Batch:
        idx = indices[rng.integers(0, len(indices), shape=batch_size)]
        return Batch(dataset.states[idx], dataset.actions[idx], dataset.rewards[idx],
                     dataset.next_states[idx], dataset.dones[idx].astype(np.float32))

    return sample


def policy_eval_hook(env: Environment, episodes: int, seed: int) -> Callable:
    """Mean return of the deterministic policy from start states fixed per seed."""
    starts = env.reset(Rng(seed, "eval_starts"), episodes)

    def hook(trainer, step: int) -> float:
        ro = rollout(env, trainer.policy, episodes, Rng(seed, "eval"), start_states=starts)
        return float(ro.returns.mean())

    return hook


def train_run(algorithm: str, dataset, split, seed: int, algo_config=None, reg: RegularizerConfig | None = None,
              train: TrainConfig | None = None, env: Environment | None = None,
              eval_hook: Callable | None = None, out_dir=None, on_eval: Callable | None = None) -> RunResult:
    """Train for ``train.steps`` steps, evaluating and checkpointing every ``eval_interval`` steps.

    ``eval_hook(trainer, step) -> mean return`` defaults to policy rollouts in
    ``env``. With ``out_dir`` the run writes ``losses.jsonl``, ``eval.csv``,
    ``diagnostics.jsonl`` and ``checkpoints/``.
    """
    reg = reg or RegularizerConfig()
    train = train or TrainConfig()
    if eval_hook is None:
        if env is None:
            raise ConfigError("need an environment or an eval_hook", "run.env")
        eval_hook = policy_eval_hook(env, train.eval_episodes or default_eval_episodes(env), seed)
    anchors = reference_returns(env) if env is not None else None
    trainer = make_trainer(algorithm, dataset, algo_config, reg, seed, train.steps)
    sample = batch_sampler(dataset, split.train, trainer.config.batch_size, Rng(seed, "batches"))

    out = Path(out_dir) if out_dir is not None else None
    loss_file = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        loss_file = open(out / "losses.jsonl", "w")
        with open(out / "eval.csv", "w", newline="") as f:
            csv.writer(f).writerow(["step", "return", "score"])
        (out / "diagnostics.jsonl").write_text("")

    result = RunResult(trainer=trainer)
    try:
        for t in range(train.steps):
            report = trainer.step(sample())
            if loss_file is not None and t % train.log_interval == 0:
                loss_file.write(json.dumps(report) + "\n")
            done = t + 1
            if done % train.eval_interval:
                continue
            ret = eval_hook(trainer, done)
            score = float("nan")
            if anchors is not None:
                score = normalized_score(ret, *anchors)
            result.steps.append(done)
            result.returns.append(ret)
            result.scores.append(score)
            diag = None
            if train.diagnostics:
                diag = diagnostics_ratio_report(trainer.actor, dataset, split, done, train.plasticity_steps,
                                                trainer.config.learning_rate, seed).to_dict()
                result.diagnostics.append(diag)
            if out is not None:
                with open(out / "eval.csv", "a", newline="") as f:
                    csv.writer(f).writerow([done, repr(ret), repr(score)])
                if diag is not None:
                    with open(out / "diagnostics.jsonl", "a") as f:
                        f.write(json.dumps(diag) + "\n")
                meta = {"algorithm": algorithm, "seed": int(seed), "step": done}
                save_checkpoint(out / "checkpoints" / f"step_{done:08d}.ckpt", trainer.networks, meta)
                loss_file.flush()
            if on_eval is not None:
                on_eval(done, ret, score)
        if out is not None:
            meta = {"algorithm": algorithm, "seed": int(seed), "step": trainer.t}
            save_checkpoint(out / "checkpoints" / "final.ckpt", trainer.networks, meta)
    finally:
        if loss_file is not None:
            loss_file.close()
    return result
