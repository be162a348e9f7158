"""Normalized scores, running-average returns, rliable-style aggregates and robustness probes."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from actoreg.core import Rng
from actoreg.data.envs import Environment, reference_returns, rollout

BOOTSTRAP_REPS = 2000
CI_LEVEL = 0.95
ROBUSTNESS_SIGMA = {"action": 0.2, "observation": 0.05}
ROBUSTNESS_CEILING = 1.1


def normalized_score(raw, random_ref: float, expert_ref: float):
    if not np.isfinite(random_ref) or not np.isfinite(expert_ref) or expert_ref <= random_ref:
        raise ValueError(f"degenerate references: random={random_ref}, expert={expert_ref}")
    out = 100.0 * (np.asarray(raw, dtype=np.float64) - random_ref) / (expert_ref - random_ref)
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------- RAR


@dataclass
class EvalSeries:
    steps: list[int]
    returns: list[float]

    def __post_init__(self):
        if len(self.steps) != len(self.returns):
            raise ValueError("steps and returns differ in length")


def default_rar_window(domain: str) -> int:
    return 5 if domain == "sparse" else 10


def rar(series, n: int | None = None, domain: str = "dense") -> float:
    """Mean of the last ``n`` checkpoint returns (default window from the task domain)."""
    values = series.returns if isinstance(series, EvalSeries) else list(series)
    n = default_rar_window(domain) if n is None else n
    if n < 1:
        raise ValueError("window must be >= 1")
    if len(values) < n:
        raise ValueError(f"series has {len(values)} checkpoints, RAR window needs {n}")
    return float(np.mean(np.asarray(values[-n:], dtype=np.float64)))


# ----------------------------------------------------------------- aggregates


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # runs x tasks
    tasks: list[str]
    algorithm: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[1] != len(self.tasks):
            raise ValueError(f"scores must be runs x {len(self.tasks)} tasks, got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("score matrix has missing or non-finite entries")

    @property
    def runs(self) -> int:
        return self.scores.shape[0]


def iqm(values) -> float:
    """Mean after dropping floor(n/4) values from each end of the sorted sample."""
    x = np.sort(np.ravel(np.asarray(values, dtype=np.float64)))
    k = len(x) // 4
    return float(x[k:len(x) - k].mean())


def optimality_gap(values, threshold: float = 1.0) -> float:
    """Mean shortfall below ``threshold`` of scores divided by 100."""
    x = np.ravel(np.asarray(values, dtype=np.float64)) / 100.0
    return float(np.mean(np.maximum(0.0, threshold - x)))


METRICS = {
    "median": lambda x: float(np.median(x)),
    "iqm": iqm,
    "mean": lambda x: float(np.mean(x)),
    "optimality_gap": optimality_gap,
}


def _stratified_indices(runs: int, tasks: int, reps: int, rng: Rng) -> np.ndarray:
    """(reps, runs, tasks) run indices, resampled independently within each task."""
    return rng.integers(0, runs, shape=(reps, runs, tasks))


def _percentile_ci(samples: np.ndarray, level: float) -> tuple[float, float]:
    a = (1.0 - level) / 2.0
    lo, hi = np.percentile(samples, [100 * a, 100 * (1 - a)])
    return float(lo), float(hi)


def aggregate_metrics(scores: ScoreMatrix, reps: int = BOOTSTRAP_REPS, seed: int = 0,
                      level: float = CI_LEVEL) -> dict:
    """Median, IQM, mean and optimality gap with stratified-bootstrap percentile CIs."""
    s = scores.scores
    runs, tasks = s.shape
    idx = _stratified_indices(runs, tasks, reps, Rng(seed, "bootstrap"))
    boot = np.sort(s[idx, np.arange(tasks)].reshape(reps, -1), axis=1)
    k = boot.shape[1] // 4
    batched = {
        "median": np.median(boot, axis=1),
        "iqm": boot[:, k:boot.shape[1] - k].mean(axis=1),
        "mean": boot.mean(axis=1),
        "optimality_gap": np.maximum(0.0, 1.0 - boot / 100.0).mean(axis=1),
    }
    out = {}
    for name, fn in METRICS.items():
        lo, hi = _percentile_ci(batched[name], level)
        out[name] = {"point": fn(s), "lo": lo, "hi": hi}
    return out


def _poi(a: np.ndarray, b: np.ndarray) -> float:
    per_task = []
    for j in range(a.shape[1]):
        x, y = a[:, j][:, None], b[:, j][None, :]
        per_task.append(np.mean((x > y) + 0.5 * (x == y)))
    return float(np.mean(per_task))


def probability_of_improvement(a: ScoreMatrix, b: ScoreMatrix, reps: int = BOOTSTRAP_REPS, seed: int = 0,
                               level: float = CI_LEVEL) -> dict:
    """Mann-Whitney P(a > b) + 0.5 P(a = b) over run pairs, averaged over tasks."""
    if list(a.tasks) != list(b.tasks):
        raise ValueError(f"task sets differ: {a.tasks} vs {b.tasks}")
    rng = Rng(seed, "poi_bootstrap")
    tasks = len(a.tasks)
    ia = _stratified_indices(a.runs, tasks, reps, rng.child("a"))
    ib = _stratified_indices(b.runs, tasks, reps, rng.child("b"))
    cols = np.arange(tasks)
    samples = np.array([_poi(a.scores[ia[r], cols], b.scores[ib[r], cols]) for r in range(reps)])
    lo, hi = _percentile_ci(samples, level)
    return {"point": _poi(a.scores, b.scores), "lo": lo, "hi": hi}


def performance_profile(scores: ScoreMatrix, thresholds) -> np.ndarray:
    """Fraction of run x task scores (divided by 100) strictly above each threshold."""
    tau = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(tau) < 0):
        raise ValueError("thresholds must be ascending")
    x = np.ravel(scores.scores) / 100.0
    return np.array([np.mean(x > t) for t in tau])


# ----------------------------------------------------------------- robustness


@dataclass
class RobustnessResult:
    mode: str
    sigma: float
    clean: float
    noisy: float
    ratio: float | None


def robustness_eval(policy, env: Environment, mode: str, sigma: float | None = None, episodes: int | None = None,
                    seed: int = 0, normalize: bool = True) -> RobustnessResult:
    """Noisy-to-clean performance ratio under per-step Gaussian noise on actions or observations.

    Performance is the normalized score when ``normalize`` (raw mean return
    otherwise). Both passes share start states; the ratio is capped at 1.1 and
    missing when clean performance is 0.
    """
    if mode not in ROBUSTNESS_SIGMA:
        raise ValueError(f"mode must be one of {sorted(ROBUSTNESS_SIGMA)}")
    sigma = ROBUSTNESS_SIGMA[mode] if sigma is None else float(sigma)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    episodes = episodes or (100 if env.domain == "sparse" else 10)
    starts = env.reset(Rng(seed, "robustness_starts"), episodes)
    clean = rollout(env, policy, episodes, Rng(seed, "robustness"), start_states=starts).returns.mean()
    kw = {"action_noise": sigma} if mode == "action" else {"obs_noise": sigma}
    noisy = rollout(env, policy, episodes, Rng(seed, "robustness"), start_states=starts, **kw).returns.mean()
    clean, noisy = float(clean), float(noisy)
    if normalize:
        anchors = reference_returns(env)
        clean, noisy = normalized_score(clean, *anchors), normalized_score(noisy, *anchors)
    ratio = None if clean == 0 else min(noisy / clean, ROBUSTNESS_CEILING)
    return RobustnessResult(mode, sigma, clean, noisy, ratio)


# ----------------------------------------------------------------- files


SCORE_COLUMNS = ["algorithm", "task", "seed", "score"]


def write_scores_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SCORE_COLUMNS)
        w.writeheader()
        for r in sorted(rows, key=lambda r: (r["algorithm"], r["task"], int(r["seed"]))):
            w.writerow({"algorithm": r["algorithm"], "task": r["task"], "seed": int(r["seed"]),
                        "score": repr(float(r["score"]))})


def read_scores_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SCORE_COLUMNS:
            raise ValueError(f"{path}: expected columns {SCORE_COLUMNS}, got {reader.fieldnames}")
        return [{"algorithm": r["algorithm"], "task": r["task"], "seed": int(r["seed"]),
                 "score": float(r["score"])} for r in reader]


def score_matrices(rows: list[dict]) -> dict[str, ScoreMatrix]:
    """Group score rows by algorithm into runs x tasks matrices (runs ordered by seed)."""
    out = {}
    for alg in sorted({r["algorithm"] for r in rows}):
        mine = [r for r in rows if r["algorithm"] == alg]
        tasks = sorted({r["task"] for r in mine})
        per_task = {t: sorted((r["seed"], r["score"]) for r in mine if r["task"] == t) for t in tasks}
        counts = {len(v) for v in per_task.values()}
        if len(counts) != 1:
            raise ValueError(f"{alg}: tasks have unequal run counts {sorted(counts)}")
        scores = np.array([[per_task[t][i][1] for t in tasks] for i in range(counts.pop())])
        out[alg] = ScoreMatrix(scores, tasks, alg)
    return out


def write_profile_csv(path, thresholds, curves: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", *curves])
        for i, t in enumerate(thresholds):
            w.writerow([repr(float(t)), *(repr(float(c[i])) for c in curves.values())])


def write_metrics_json(path, metrics: dict) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
