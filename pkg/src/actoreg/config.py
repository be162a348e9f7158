"""TOML run and sweep configuration: schema, validation and snapshots.

A config file has one section per module::

    [data]        env, tier, size, seed, path
    [run]         algorithm, name, seeds, validation_fraction, split_seed, rar_window
    [train]       steps, eval_interval, eval_episodes, log_interval, diagnostics, plasticity_steps
    [rebrac]      ReBRAC hyperparameters (used when run.algorithm = "rebrac")
    [iql]         IQL hyperparameters (used when run.algorithm = "iql")
    [regularizer] actor regularizers
    [sweep]       axes, tuning_seeds, eval_seeds, strict_grid

Every key is checked against the dataclass it configures; unknown keys are
errors reported with their ``section.key`` path.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from actoreg.algorithms.iql import IqlConfig
from actoreg.algorithms.rebrac import RebracConfig
from actoreg.algorithms.train import ALGORITHMS, TrainConfig, default_discount
from actoreg.core.errors import ConfigError
from actoreg.data.dataset import TIERS
from actoreg.data.envs import ENVIRONMENTS, make_env
from actoreg.evalstats import default_rar_window
from actoreg.regularizers import NORM_KINDS, RegularizerConfig

# hyperparameter grids a sweep may draw from; 0 (regularizer off) is always allowed
OMEGA_GRID = (1e-5, 1e-4, 1e-3, 0.01, 0.1)
DROPOUT_GRID = {"rebrac": (0.1, 0.2, 0.3, 0.5, 0.75, 0.9), "iql": (0.1, 0.2, 0.3, 0.5)}
NOISE_GRID = (0.003, 0.01, 0.03, 0.1, 0.3)
ALPHA_GRID = (0.0, 0.5, 1.0)

DEFAULT_TUNING_SEEDS = tuple(range(5))
DEFAULT_EVAL_SEEDS = tuple(range(100, 110))


@dataclass
class DataConfig:
    env: str = "point-dense"
    tier: str = "expert"
    size: int = 20_000
    seed: int = 0
    path: str = "data/point-dense-expert.ofrl"

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment; choose from {sorted(ENVIRONMENTS)}", "data.env")
        if self.tier not in TIERS:
            raise ConfigError(f"must be one of {TIERS}", "data.tier")
        if self.size < 100:
            raise ConfigError("must be >= 100", "data.size")


@dataclass
class RunSection:
    algorithm: str = "rebrac"
    name: str = ""
    seeds: list[int] = field(default_factory=lambda: [0])
    validation_fraction: float = 0.05
    split_seed: int = 0
    rar_window: int | None = None  # None: 5 for sparse tasks, 10 otherwise

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"must be one of {ALGORITHMS}", "run.algorithm")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("must be a nonempty list of non-negative integers", "run.seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds", "run.seeds")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ConfigError("must lie in (0, 0.5]", "run.validation_fraction")
        if self.rar_window is not None and self.rar_window < 1:
            raise ConfigError("must be >= 1", "run.rar_window")


@dataclass
class SweepSection:
    axes: dict = field(default_factory=dict)
    tuning_seeds: list[int] = field(default_factory=lambda: list(DEFAULT_TUNING_SEEDS))
    eval_seeds: list[int] = field(default_factory=lambda: list(DEFAULT_EVAL_SEEDS))
    strict_grid: bool = True

    def __post_init__(self):
        if set(self.tuning_seeds) & set(self.eval_seeds):
            raise ConfigError("tuning and evaluation seeds must be disjoint", "sweep.eval_seeds")
        if not self.tuning_seeds:
            raise ConfigError("must be nonempty", "sweep.tuning_seeds")
        if not self.eval_seeds:
            raise ConfigError("must be nonempty", "sweep.eval_seeds")
        for name, values in self.axes.items():
            if not isinstance(values, list) or not values:
                raise ConfigError("axis values must be a nonempty list", f"sweep.axes.{name}")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    rebrac: RebracConfig = field(default_factory=RebracConfig)
    iql: IqlConfig = field(default_factory=IqlConfig)
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    sweep: SweepSection | None = None

    @property
    def algorithm(self) -> str:
        return self.run.algorithm

    @property
    def algo_config(self):
        return self.rebrac if self.run.algorithm == "rebrac" else self.iql

    @property
    def task(self) -> str:
        return f"{self.data.env}-{self.data.tier}"

    @property
    def run_name(self) -> str:
        return self.run.name or f"{self.run.algorithm}-{self.task}"

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            out[f.name] = {k: v for k, v in dataclasses.asdict(value).items() if v is not None}
        return out

    def with_overrides(self, overrides: dict) -> RunConfig:
        """Copy with ``{"section.key": value}`` overrides applied and validated."""
        raw = self.to_dict()
        for path, value in overrides.items():
            section, _, key = path.partition(".")
            raw.setdefault(section, {})[key] = value
        return from_dict(raw)


SECTIONS = {
    "data": DataConfig,
    "run": RunSection,
    "train": TrainConfig,
    "rebrac": RebracConfig,
    "iql": IqlConfig,
    "regularizer": RegularizerConfig,
    "sweep": SweepSection,
}


def _build(section: str, cls, values) -> object:
    if not isinstance(values, dict):
        raise ConfigError("must be a table", section)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError("unknown key", f"{section}.{key}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(str(e), section) from None


def from_dict(raw: dict) -> RunConfig:
    for section in raw:
        if section not in SECTIONS:
            raise ConfigError("unknown section", section)
    built = {name: _build(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items() if name != "sweep"}
    if "sweep" in raw:
        built["sweep"] = _build("sweep", SweepSection, raw["sweep"])
    cfg = RunConfig(**built)
    # discount defaults follow the task domain unless set explicitly
    for alg in ALGORITHMS:
        if "discount" not in raw.get(alg, {}):
            getattr(cfg, alg).discount = default_discount(make_env(cfg.data.env))
    # the RAR window must fit in the evaluation checkpoints a run produces
    window = cfg.run.rar_window or default_rar_window(make_env(cfg.data.env).domain)
    evals = cfg.train.steps // cfg.train.eval_interval
    if evals < window:
        raise ConfigError(f"{evals} evaluation checkpoints cannot fill a RAR window of {window}", "train.eval_interval")
    if cfg.sweep is not None:
        validate_axes(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}", str(path)) from None
    return from_dict(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(cfg.to_dict()))


# ----------------------------------------------------------------- sweep grids


def allowed_values(name: str, algorithm: str):
    """Permitted sweep values for a parameter path, or None when unrestricted."""
    if name == "regularizer.weight_decay":
        return (0.0, *OMEGA_GRID)
    if name == "regularizer.dropout_rate":
        return (0.0, *DROPOUT_GRID[algorithm])
    if name in ("regularizer.input_noise", "regularizer.objective_noise", "regularizer.gradient_noise"):
        return (0.0, *NOISE_GRID)
    if name == "regularizer.weight_decay_alpha":
        return ALPHA_GRID
    if name == "regularizer.norm_kind":
        return NORM_KINDS
    return None


def _on_grid(value, grid) -> bool:
    if isinstance(value, str):
        return value in grid
    return any(not isinstance(g, str) and abs(float(value) - g) <= 1e-12 * max(1.0, abs(g)) for g in grid)


def validate_axes(cfg: RunConfig) -> None:
    sweep = cfg.sweep
    for name, values in sweep.axes.items():
        section, _, key = name.partition(".")
        if section not in SECTIONS or section == "sweep" or not key:
            raise ConfigError("axis must name a 'section.key' parameter", f"sweep.axes.{name}")
        if key not in {f.name for f in dataclasses.fields(SECTIONS[section])}:
            raise ConfigError("unknown parameter", f"sweep.axes.{name}")
        grid = allowed_values(name, cfg.algorithm)
        if sweep.strict_grid and grid is not None:
            bad = [v for v in values if not _on_grid(v, grid)]
            if bad:
                raise ConfigError(f"values {bad} not in the allowed grid {list(grid)}", f"sweep.axes.{name}")
        # every point must also form a valid run config
        for v in values:
            cfg_copy = copy.deepcopy(cfg)
            cfg_copy.sweep = None
            cfg_copy.with_overrides({name: v})
