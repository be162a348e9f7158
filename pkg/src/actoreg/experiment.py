"""Run directories, hyperparameter sweeps and report assembly."""
from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from actoreg.algorithms.train import train_run
from actoreg.config import RunConfig, dump_config, load_config
from actoreg.core.errors import ActoregError, ConfigError
from actoreg.data.dataset import load_dataset, split
from actoreg.data.envs import make_env
from actoreg.evalstats import (
    aggregate_metrics,
    default_rar_window,
    performance_profile,
    probability_of_improvement,
    rar,
    score_matrices,
    write_metrics_json,
    write_profile_csv,
    write_scores_csv,
)

log = logging.getLogger(__name__)

RUN_ARTIFACTS = ("config.toml", "eval.csv", "diagnostics.jsonl", "losses.jsonl", "checkpoints")
PROFILE_THRESHOLDS = tuple(np.round(np.linspace(0.0, 1.5, 31), 6))


class ReportError(ActoregError):
    pass


class SweepError(ActoregError):
    pass


def seed_dir(out_dir, seed: int) -> Path:
    return Path(out_dir) / f"seed_{seed}"


def rar_window(cfg: RunConfig) -> int:
    return cfg.run.rar_window or default_rar_window(make_env(cfg.data.env).domain)


def run_seed(cfg: RunConfig, seed: int, out_dir, dataset=None) -> dict:
    """Train one seed into ``out_dir`` and return its summary (RAR in return and score units)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = dataset if dataset is not None else load_dataset(cfg.data.path)
    meta_env = dataset.metadata.get("env")
    if meta_env is not None and meta_env != cfg.data.env:
        raise ConfigError(f"dataset was generated for {meta_env!r}", "data.env")
    env = make_env(cfg.data.env)
    parts = split(dataset, cfg.run.validation_fraction, cfg.run.split_seed)
    snapshot = cfg.with_overrides({"run.seeds": [seed]})
    snapshot.sweep = None
    dump_config(snapshot, out / "config.toml")
    result = train_run(cfg.algorithm, dataset, parts, seed, cfg.algo_config, cfg.regularizer, cfg.train,
                       env=env, out_dir=out)
    window = rar_window(cfg)
    summary = {
        "algorithm": cfg.algorithm,
        "task": cfg.task,
        "seed": seed,
        "rar_window": window,
        "rar_return": rar(result.returns, window),
        "rar_score": rar(result.scores, window),
        "final_score": result.scores[-1],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def run_experiment(cfg: RunConfig, out_dir, seeds=None) -> list[dict]:
    """Run every seed of ``cfg`` into ``out_dir/seed_<s>``."""
    seeds = list(seeds) if seeds is not None else list(cfg.run.seeds)
    dataset = load_dataset(cfg.data.path)
    return [run_seed(cfg, s, seed_dir(out_dir, s), dataset) for s in seeds]


# ----------------------------------------------------------------- sweep


Runner = Callable[[RunConfig, int, Path], float]


def default_runner(cfg: RunConfig, seed: int, out_dir: Path) -> float:
    return run_seed(cfg, seed, out_dir)["rar_score"]


def grid_points(axes: dict) -> list[dict]:
    names = list(axes)
    return [dict(zip(names, values)) for values in itertools.product(*(axes[n] for n in names))]


def regularization_magnitude(point: dict) -> float:
    """Tie-break size of a grid point: sum of |numeric values|, 1 per active string option."""
    total = 0.0
    for v in point.values():
        if isinstance(v, str):
            total += 0.0 if v == "none" else 1.0
        else:
            total += abs(float(v))
    return total


def _lex_key(point: dict) -> tuple:
    return tuple((name, (1, v) if isinstance(v, str) else (0, float(v))) for name, v in sorted(point.items()))


def select_winner(points: list[dict], mean_rars: list[float | None]) -> int:
    """Index of the best point: highest mean RAR, then smallest magnitude, then lexicographic order."""
    candidates = [i for i, r in enumerate(mean_rars) if r is not None]
    if not candidates:
        raise SweepError("every sweep run failed")
    return min(candidates, key=lambda i: (-mean_rars[i], regularization_magnitude(points[i]), _lex_key(points[i])))


@dataclass
class SweepResult:
    winner: dict
    winner_index: int
    points: list[dict]
    tuning_mean_rar: list[float | None]
    eval_rars: dict = field(default_factory=dict)
    table: list[dict] = field(default_factory=list)

    @property
    def eval_mean_rar(self) -> float | None:
        ok = [r for r in self.eval_rars.values() if r is not None]
        return float(np.mean(ok)) if ok else None


def _execute(jobs: list[tuple], runner: Runner, n_jobs: int) -> list[dict]:
    def one(job):
        phase, idx, point, cfg, seed, out = job
        row = {"phase": phase, "point": idx, "params": json.dumps(point, sort_keys=True), "seed": seed,
               "rar": None, "status": "ok", "error": ""}
        try:
            row["rar"] = float(runner(cfg, seed, out))
        except Exception as e:  # a failed child run is recorded, not fatal
            log.warning("sweep run %s point %d seed %d failed: %s", phase, idx, seed, e)
            row.update(status="failed", error=f"{type(e).__name__}: {e}")
        return row

    if n_jobs <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, jobs))


def sweep(cfg: RunConfig, out_dir, runner: Runner | None = None, jobs: int = 1) -> SweepResult:
    """Grid search over ``cfg.sweep.axes`` on tuning seeds, then re-run the winner on evaluation seeds."""
    if cfg.sweep is None or not cfg.sweep.axes:
        raise ConfigError("sweep needs at least one axis", "sweep.axes")
    runner = runner or default_runner
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.sweep
    base = replace(cfg, sweep=None)
    points = grid_points(spec.axes)
    configs = [base.with_overrides(p) for p in points]

    tuning = [("tune", i, p, configs[i], s, out / "tune" / f"point_{i:03d}" / f"seed_{s}")
              for i, p in enumerate(points) for s in spec.tuning_seeds]
    rows = _execute(tuning, runner, jobs)
    means: list[float | None] = []
    for i in range(len(points)):
        ok = [r["rar"] for r in rows if r["point"] == i and r["status"] == "ok"]
        means.append(float(np.mean(ok)) if ok else None)
    best = select_winner(points, means)

    evaluation = [("eval", best, points[best], configs[best], s, out / "eval" / f"seed_{s}")
                  for s in spec.eval_seeds]
    eval_rows = _execute(evaluation, runner, jobs)
    rows += eval_rows

    result = SweepResult(points[best], best, points, means,
                         {r["seed"]: r["rar"] for r in eval_rows}, rows)
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["phase", "point", "params", "seed", "rar", "status", "error"])
        w.writeheader()
        w.writerows(rows)
    summary = {
        "winner": result.winner,
        "winner_index": best,
        "points": points,
        "tuning_mean_rar": means,
        "tuning_seeds": list(spec.tuning_seeds),
        "eval_seeds": list(spec.eval_seeds),
        "eval_rar": {str(k): v for k, v in result.eval_rars.items()},
        "eval_mean_rar": result.eval_mean_rar,
    }
    (out / "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return result


# ----------------------------------------------------------------- report


def _expand_run_dirs(dirs) -> list[Path]:
    out = []
    for d in map(Path, dirs):
        if (d / "config.toml").exists() or (d / "eval.csv").exists():
            out.append(d)
        else:
            seeds = sorted(p for p in d.glob("seed_*") if p.is_dir())
            out.extend(seeds if seeds else [d])
    return out


def read_eval_series(run_dir) -> tuple[list[int], list[float], list[float]]:
    path = Path(run_dir) / "eval.csv"
    if not path.exists():
        raise ReportError(f"{run_dir}: missing eval series (eval.csv)")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ReportError(f"{run_dir}: eval series is empty")
    return ([int(r["step"]) for r in rows], [float(r["return"]) for r in rows], [float(r["score"]) for r in rows])


def collect_scores(run_dirs) -> list[dict]:
    rows = []
    for d in _expand_run_dirs(run_dirs):
        cfg_path = d / "config.toml"
        if not cfg_path.exists():
            raise ReportError(f"{d}: missing config snapshot (config.toml)")
        cfg = load_config(cfg_path)
        _, _, scores = read_eval_series(d)
        window = rar_window(cfg)
        if len(scores) < window:
            raise ReportError(f"{d}: eval series has {len(scores)} checkpoints, RAR needs {window}")
        # a named run is its own entry in the report (e.g. "rebrac+ln" vs "rebrac")
        rows.append({"algorithm": cfg.run.name or cfg.algorithm, "task": cfg.task, "seed": cfg.run.seeds[0],
                     "score": rar(scores, window)})
    return rows


def build_report(rows: list[dict], out_dir, reps: int = 2000, seed: int = 0) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(out / "scores.csv", rows)
    matrices = score_matrices(rows)
    metrics: dict = {"aggregate": {}, "probability_of_improvement": {}}
    for alg, sm in matrices.items():
        metrics["aggregate"][alg] = aggregate_metrics(sm, reps=reps, seed=seed)
    for a, b in itertools.permutations(matrices, 2):
        if matrices[a].tasks == matrices[b].tasks:
            metrics["probability_of_improvement"][f"{a} > {b}"] = probability_of_improvement(
                matrices[a], matrices[b], reps=reps, seed=seed)
    curves = {alg: performance_profile(sm, PROFILE_THRESHOLDS) for alg, sm in matrices.items()}
    write_profile_csv(out / "profiles.csv", PROFILE_THRESHOLDS, curves)
    write_metrics_json(out / "metrics.json", metrics)
    return metrics


def report(run_dirs, out_dir, reps: int = 2000, seed: int = 0) -> dict:
    """Assemble ``scores.csv``, ``metrics.json`` and ``profiles.csv`` from completed run directories."""
    if not run_dirs:
        raise ReportError("no run directories given")
    return build_report(collect_scores(run_dirs), out_dir, reps, seed)
