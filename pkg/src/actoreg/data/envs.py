"""Point-mass goal-reaching tasks standing in for dense, sparse-maze and high-dim-action benchmarks.

Environments are stateless and vectorized: ``step`` maps a batch of float32
states and actions to next states, rewards and terminal flags, so replaying
stored transitions reproduces them bit for bit.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from actoreg.core import Rng

DAMPING = 0.8
ACCEL = 0.3
DT = 0.1
KP, KD = 4.0, 2.0


def _mixing_matrix(action_dim: int) -> np.ndarray | None:
    """Fixed 2 x m map from actions to planar force; None for m == 2.

    Rows are orthogonal +-1 patterns scaled so the minimum-norm action for any
    force in [-1, 1]^2 stays inside [-1, 1]^m.
    """
    if action_dim == 2:
        return None
    if action_dim % 2:
        raise ValueError("action_dim must be even")
    r1 = np.ones(action_dim)
    r2 = np.tile([1.0, -1.0], action_dim // 2)
    return (np.stack([r1, r2]) * (2.0 / action_dim)).astype(np.float32)


@dataclass(frozen=True)
class Environment:
    name: str
    variant: str = "dense"  # dense | sparse
    state_dim: int = 4
    action_dim: int = 2
    horizon: int = 100
    reward_scale: float = 1.0
    goal: tuple[float, float] = (0.0, 0.0)
    goal_radius: float = 0.1
    start_low: tuple[float, float] = (-1.0, -1.0)
    start_high: tuple[float, float] = (1.0, 1.0)
    action_cost: float = 0.0
    # axis-aligned wall rectangles (xmin, ymin, xmax, ymax)
    walls: tuple[tuple[float, float, float, float], ...] = ()
    domain: str = "dense"  # dense | sparse | highdim; selects protocol defaults

    @property
    def mixing(self) -> np.ndarray | None:
        return _mixing_matrix(self.action_dim)

    # ------------------------------------------------------------- dynamics

    def reset(self, rng: Rng, n: int) -> np.ndarray:
        pos = rng.generator.uniform(self.start_low, self.start_high, size=(n, 2))
        states = np.zeros((n, self.state_dim), dtype=np.float32)
        states[:, :2] = pos
        return states

    def force(self, actions: np.ndarray) -> np.ndarray:
        mix = self.mixing
        return actions if mix is None else actions @ mix.T

    def step(self, states: np.ndarray, actions: np.ndarray):
        states = np.asarray(states, dtype=np.float32)
        actions = np.clip(np.asarray(actions, dtype=np.float32), -1.0, 1.0)
        pos, vel = states[:, :2], states[:, 2:4]
        vel_new = np.float32(DAMPING) * vel + np.float32(ACCEL) * self.force(actions)
        pos_new = pos + np.float32(DT) * vel_new
        outside = (pos_new < -1.0) | (pos_new > 1.0)
        pos_new = np.clip(pos_new, -1.0, 1.0)
        vel_new = np.where(outside, np.float32(0.0), vel_new)
        for xmin, ymin, xmax, ymax in self.walls:
            hit = ((pos_new[:, 0] >= xmin) & (pos_new[:, 0] <= xmax)
                   & (pos_new[:, 1] >= ymin) & (pos_new[:, 1] <= ymax))
            pos_new = np.where(hit[:, None], pos, pos_new)
            vel_new = np.where(hit[:, None], np.float32(0.0), vel_new)
        next_states = np.concatenate([pos_new, vel_new], axis=1).astype(np.float32)
        dist = np.sqrt(((pos_new - np.asarray(self.goal, np.float32)) ** 2).sum(axis=1))
        reached = dist < self.goal_radius
        if self.variant == "dense":
            rewards = -dist
            if self.action_cost:
                rewards = rewards - np.float32(self.action_cost) * (actions * actions).mean(axis=1)
        else:
            rewards = reached.astype(np.float32)
        rewards = (rewards * np.float32(self.reward_scale)).astype(np.float32)
        return next_states, rewards, reached

    # ------------------------------------------------------------- scripted control

    def expert_action(self, states: np.ndarray) -> np.ndarray:
        """Proportional-derivative controller toward the goal (via waypoints around walls)."""
        pos, vel = states[:, :2], states[:, 2:4]
        target = np.broadcast_to(np.asarray(self.goal, np.float32), pos.shape).copy()
        for _, _, xmax, ymax in self.walls:
            # climb along the near side, cross above the wall top, then head for the goal
            before = pos[:, 0] <= xmax + 0.1
            low = pos[:, 1] < ymax + 0.15
            target[before & low] = (xmax - 0.35, ymax + 0.35)
            target[before & ~low] = (xmax + 0.25, ymax + 0.2)
        force = np.clip(KP * (target - pos) - KD * vel, -1.0, 1.0)
        mix = self.mixing
        if mix is None:
            return force.astype(np.float32)
        # minimum-norm action producing ``force``
        return np.clip(force @ np.linalg.pinv(mix).T, -1.0, 1.0).astype(np.float32)


def point_goal_env(variant: str = "dense", n: int = 4, m: int = 2, reward_scale: float | None = None,
                   horizon: int = 100) -> Environment:
    if n != 4:
        raise ValueError("point-goal state is (x, y, vx, vy); n must be 4")
    if variant == "dense":
        if m == 2:
            return Environment("point-dense", "dense", horizon=horizon, reward_scale=reward_scale or 1.0)
        return Environment("point-highdim", "dense", action_dim=m, horizon=horizon,
                           reward_scale=reward_scale or 1.0, action_cost=0.5, domain="highdim")
    if variant == "sparse":
        return Environment(
            "point-maze", "sparse", action_dim=m, horizon=horizon,
            reward_scale=100.0 if reward_scale is None else reward_scale,
            goal=(0.7, -0.7), start_low=(-1.0, -1.0), start_high=(-0.3, 1.0),
            walls=((-0.1, -1.0, 0.1, 0.4),), domain="sparse",
        )
    raise ValueError(f"unknown variant {variant!r}")


ENVIRONMENTS: dict[str, Callable[[], Environment]] = {
    "point-dense": lambda: point_goal_env("dense"),
    "point-maze": lambda: point_goal_env("sparse"),
    "point-highdim": lambda: point_goal_env("dense", m=8),
}


def make_env(name: str) -> Environment:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


# ----------------------------------------------------------------- rollouts


@dataclass
class Rollout:
    returns: np.ndarray
    lengths: np.ndarray
    # episode-major transition arrays (only when recorded)
    states: np.ndarray | None = None
    actions: np.ndarray | None = None
    rewards: np.ndarray | None = None
    next_states: np.ndarray | None = None
    dones: np.ndarray | None = None


def rollout(env: Environment, policy: Callable[[np.ndarray], np.ndarray], episodes: int, rng: Rng,
            record: bool = False, action_noise: float = 0.0, obs_noise: float = 0.0,
            start_states: np.ndarray | None = None) -> Rollout:
    """Run ``episodes`` episodes in lockstep; perturbations use ``rng`` after the start states."""
    states = env.reset(rng, episodes) if start_states is None else np.array(start_states, dtype=np.float32)
    active = np.ones(episodes, dtype=bool)
    returns = np.zeros(episodes, dtype=np.float64)
    lengths = np.zeros(episodes, dtype=np.int64)
    trace = []
    for _ in range(env.horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        obs = states[idx]
        if obs_noise:
            obs = obs + np.float32(obs_noise) * rng.normal(obs.shape, dtype=np.float32)
        actions = np.asarray(policy(obs), dtype=np.float32)
        if action_noise:
            actions = actions + np.float32(action_noise) * rng.normal(actions.shape, dtype=np.float32)
        actions = np.clip(actions, -1.0, 1.0)
        nxt, rew, done = env.step(states[idx], actions)
        returns[idx] += rew
        lengths[idx] += 1
        if record:
            trace.append((idx, states[idx], actions, rew, nxt, done))
        states[idx] = nxt
        active[idx[done]] = False
    out = Rollout(returns, lengths)
    if record:
        out.states, out.actions, out.rewards, out.next_states, out.dones = _episode_major(trace)
    return out


def _episode_major(trace):
    ep = np.concatenate([t[0] for t in trace])
    order = np.argsort(ep, kind="stable")
    cols = [np.concatenate([t[k] for t in trace])[order] for k in range(1, 6)]
    return cols[0], cols[1], cols[2], cols[3], cols[4]


@functools.lru_cache(maxsize=32)
def reference_returns(env: Environment, episodes: int = 200, seed: int = 2024) -> tuple[float, float]:
    """(random, expert) mean returns over a fixed set of start states."""
    starts = env.reset(Rng(seed, "reference_starts"), episodes)
    act_rng = Rng(seed, "reference_random")

    def random_policy(obs):
        return act_rng.uniform(-1.0, 1.0, (len(obs), env.action_dim))

    rand = rollout(env, random_policy, episodes, Rng(seed, "ref_r"), start_states=starts).returns.mean()
    expert = rollout(env, env.expert_action, episodes, Rng(seed, "ref_e"), start_states=starts).returns.mean()
    return float(rand), float(expert)
