import itertools

import numpy as np
import pytest

from actoreg.core import Rng
from actoreg.data import make_env
from actoreg.evalstats import (
    BOOTSTRAP_REPS,
    METRICS,
    ROBUSTNESS_CEILING,
    ROBUSTNESS_SIGMA,
    EvalSeries,
    ScoreMatrix,
    aggregate_metrics,
    default_rar_window,
    iqm,
    normalized_score,
    optimality_gap,
    performance_profile,
    probability_of_improvement,
    rar,
    read_scores_csv,
    robustness_eval,
    score_matrices,
    write_scores_csv,
)
from actoreg.evalstats import _percentile_ci, _stratified_indices


# ----------------------------------------------------------------- brute-force oracles (pure python)


def bf_sorted(values):
    out = []
    for v in values:  # insertion sort, no library help
        i = 0
        while i < len(out) and out[i] <= v:
            i += 1
        out.insert(i, v)
    return out


def bf_median(values):
    s = bf_sorted(values)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def bf_iqm(values):
    s = bf_sorted(values)
    k = len(s) // 4
    mid = s[k:len(s) - k]
    return sum(mid) / len(mid)


def bf_gap(values):
    return sum(max(0.0, 1.0 - v / 100) for v in values) / len(values)


def bf_poi(a, b):
    tasks = len(a[0])
    total = 0.0
    for j in range(tasks):
        wins = 0.0
        pairs = 0
        for x, y in itertools.product([r[j] for r in a], [r[j] for r in b]):
            wins += 1.0 if x > y else 0.5 if x == y else 0.0
            pairs += 1
        total += wins / pairs
    return total / tasks


def bf_profile(values, tau):
    return sum(1 for v in values if v / 100 > tau) / len(values)


def flat(m):
    return [float(v) for row in m for v in row]


# ----------------------------------------------------------------- normalization and RAR


def test_normalized_score_anchors():
    assert normalized_score(5.0, 1.0, 5.0) == 100.0
    assert normalized_score(1.0, 1.0, 5.0) == 0.0
    assert normalized_score(3.0, 1.0, 5.0) == 50.0


def test_normalized_score_degenerate():
    with pytest.raises(ValueError):
        normalized_score(1.0, 2.0, 2.0)


def test_rar_examples():
    assert rar([10, 20, 30], 2) == 25.0
    assert rar(EvalSeries([1, 2, 3], [10.0, 20.0, 30.0]), 3) == 20.0
    with pytest.raises(ValueError):
        rar([1.0, 2.0], 3)


def test_rar_default_windows():
    assert default_rar_window("sparse") == 5 and default_rar_window("dense") == 10
    assert default_rar_window("highdim") == 10
    assert rar(list(range(20)), domain="sparse") == np.mean(range(15, 20))
    assert rar(list(range(20))) == np.mean(range(10, 20))


# ----------------------------------------------------------------- worked examples


def test_iqm_worked_example():
    assert iqm(np.arange(1, 9)) == 4.5


def test_gap_worked_example():
    assert optimality_gap([50.0, 150.0]) == 0.25


def test_constant_scores():
    m = aggregate_metrics(ScoreMatrix(np.full((3, 2), 70.0), ["a", "b"]), reps=50)
    assert m["median"]["point"] == m["iqm"]["point"] == m["mean"]["point"] == 70.0


def test_poi_examples():
    a = ScoreMatrix([[5.0, 5.0], [6.0, 7.0]], ["x", "y"])
    b = ScoreMatrix([[1.0, 2.0], [3.0, 4.0]], ["x", "y"])
    assert probability_of_improvement(a, b, reps=20)["point"] == 1.0
    assert probability_of_improvement(a, a, reps=20)["point"] == 0.5
    assert probability_of_improvement(ScoreMatrix([[1.0], [3.0]], ["t"]), ScoreMatrix([[2.0], [2.0]], ["t"]),
                                      reps=20)["point"] == 0.5


def test_poi_task_mismatch():
    with pytest.raises(ValueError):
        probability_of_improvement(ScoreMatrix([[1.0]], ["a"]), ScoreMatrix([[1.0]], ["b"]))


def test_profile_examples():
    s = ScoreMatrix([[20.0, 60.0, 100.0]], ["a", "b", "c"])
    assert performance_profile(s, [0.5])[0] == pytest.approx(2 / 3)
    assert performance_profile(s, [0.0, 2.0]).tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        performance_profile(s, [1.0, 0.5])


# ----------------------------------------------------------------- oracle sweep


def random_integer_matrices(count=100, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(-20, 160, size=(5, 6)).astype(float) for _ in range(count)]


def test_statistics_match_brute_force():
    thresholds = [t / 10 for t in range(-2, 18)]
    mats = random_integer_matrices()
    for a, b in zip(mats, mats[1:] + mats[:1]):
        va = flat(a)
        assert iqm(a) == pytest.approx(bf_iqm(va), abs=1e-12)
        assert float(np.median(a)) == bf_median(va)
        assert float(np.mean(a)) == pytest.approx(sum(va) / len(va), abs=1e-12)
        assert optimality_gap(a) == pytest.approx(bf_gap(va), abs=1e-12)
        prof = performance_profile(ScoreMatrix(a, list("abcdef")), thresholds)
        assert prof.tolist() == [bf_profile(va, t) for t in thresholds]
        poi = probability_of_improvement(ScoreMatrix(a, list("abcdef")), ScoreMatrix(b, list("abcdef")), reps=1)
        assert poi["point"] == pytest.approx(bf_poi(a.tolist(), b.tolist()), abs=1e-12)


def test_poi_symmetry_without_ties():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = rng.permutation(60).reshape(2, 5, 6).astype(float)
        ab = probability_of_improvement(ScoreMatrix(a, list("abcdef")), ScoreMatrix(b, list("abcdef")), reps=1)
        ba = probability_of_improvement(ScoreMatrix(b, list("abcdef")), ScoreMatrix(a, list("abcdef")), reps=1)
        assert ab["point"] + ba["point"] == pytest.approx(1.0, abs=1e-12)


# ----------------------------------------------------------------- properties


def test_iqm_bounds_and_permutation_invariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.normal(size=(5, 6)) * 50
        v = iqm(x)
        assert x.min() <= v <= x.max()
        s = np.sort(x.ravel())
        assert s[7] <= v <= s[-8]
        assert iqm(x[rng.permutation(5)]) == pytest.approx(v, abs=1e-12)


def test_gap_zero_iff_all_above_threshold_and_decreasing():
    assert optimality_gap([100.0, 120.0]) == 0.0
    assert optimality_gap([99.0, 120.0]) > 0.0
    assert optimality_gap([60.0, 80.0]) > optimality_gap([70.0, 80.0])


def test_profile_monotone():
    s = ScoreMatrix(np.random.default_rng(3).normal(60, 40, size=(5, 6)), list("abcdef"))
    prof = performance_profile(s, np.linspace(-1, 2, 61))
    assert np.all(np.diff(prof) <= 0)


def test_bootstrap_ci_contains_point():
    rng = np.random.default_rng(4)
    for i in range(100):
        m = ScoreMatrix(rng.normal(70, 30, size=(5, 6)), list("abcdef"))
        for name, res in aggregate_metrics(m, seed=i).items():
            assert res["lo"] <= res["point"] <= res["hi"], name


def test_bootstrap_deterministic_and_default_reps():
    assert BOOTSTRAP_REPS == 2000
    m = ScoreMatrix(np.random.default_rng(5).normal(size=(4, 3)), list("abc"))
    assert aggregate_metrics(m, seed=1) == aggregate_metrics(m, seed=1)


def test_score_matrix_validation():
    with pytest.raises(ValueError):
        ScoreMatrix([[1.0, np.nan]], ["a", "b"])
    with pytest.raises(ValueError):
        ScoreMatrix([[1.0, 2.0]], ["a"])


# ----------------------------------------------------------------- robustness


def test_robustness_defaults():
    assert ROBUSTNESS_SIGMA == {"action": 0.2, "observation": 0.05}
    assert ROBUSTNESS_CEILING == 1.1


@pytest.mark.parametrize("mode", ["action", "observation"])
def test_robustness_zero_sigma_is_one(mode):
    env = make_env("point-dense")
    res = robustness_eval(env.expert_action, env, mode, sigma=0.0, episodes=5)
    assert res.ratio == 1.0 and res.clean == res.noisy


def test_robustness_noise_hurts_expert_and_cap():
    env = make_env("point-dense")
    res = robustness_eval(env.expert_action, env, "action", sigma=1.0, episodes=20)
    assert res.sigma == 1.0 and res.ratio < 1.0
    assert robustness_eval(env.expert_action, env, "observation").sigma == 0.05
    # a policy whose clean score is negative can produce a huge ratio; it must be capped
    bad = robustness_eval(lambda s: np.ones((len(s), 2), np.float32), env, "action", sigma=0.5, episodes=5)
    assert bad.ratio is None or bad.ratio <= ROBUSTNESS_CEILING


def test_robustness_invalid():
    env = make_env("point-dense")
    with pytest.raises(ValueError):
        robustness_eval(env.expert_action, env, "reward")
    with pytest.raises(ValueError):
        robustness_eval(env.expert_action, env, "action", sigma=-0.1)


# ----------------------------------------------------------------- files


def test_scores_csv_roundtrip(tmp_path):
    rows = [{"algorithm": alg, "task": t, "seed": s, "score": float(10 * s + i)}
            for alg in ("x", "y") for i, t in enumerate(("t1", "t2")) for s in (2, 1, 0)]
    write_scores_csv(tmp_path / "s.csv", rows)
    back = read_scores_csv(tmp_path / "s.csv")
    assert sorted(back, key=str) == sorted(rows, key=str)
    mats = score_matrices(back)
    assert mats["x"].tasks == ["t1", "t2"]
    assert mats["x"].scores.tolist() == [[0.0, 1.0], [10.0, 11.0], [20.0, 21.0]]


def test_bootstrap_matches_per_sample_metrics():
    s = np.random.default_rng(6).normal(60, 30, size=(5, 6))
    res = aggregate_metrics(ScoreMatrix(s, list("abcdef")), reps=300, seed=2)
    idx = _stratified_indices(5, 6, 300, Rng(2, "bootstrap"))
    boot = s[idx, np.arange(6)]
    for name, fn in METRICS.items():
        lo, hi = _percentile_ci(np.array([fn(b) for b in boot]), 0.95)
        assert res[name]["lo"] == pytest.approx(lo, abs=1e-9) and res[name]["hi"] == pytest.approx(hi, abs=1e-9)
