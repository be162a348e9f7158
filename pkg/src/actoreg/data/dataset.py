from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from actoreg.core import Rng
from actoreg.core.errors import FormatError
from actoreg.data.envs import Environment, rollout

TIERS = ("random", "medium", "expert", "mixed")
MEDIUM_ACTION_NOISE = 0.3
MEDIUM_EPSILON = 0.3

MAGIC = b"OFRLDS1\x00"
_HEADER = struct.Struct("<IIQ")


@dataclass
class TransitionDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("states", "actions", "next_states", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def subset(self, idx: np.ndarray) -> TransitionDataset:
        return TransitionDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                                 self.next_states[idx], self.dones[idx], dict(self.metadata))

    def episode_returns(self) -> np.ndarray:
        """Undiscounted returns of the stored episodes (segments split at terminals and state jumps)."""
        ends = self.dones.astype(bool).copy()
        if len(self) > 1:
            ends[:-1] |= np.any(self.next_states[:-1] != self.states[1:], axis=1)
        ends[-1] = True
        bounds = np.flatnonzero(ends) + 1
        return np.array([seg.sum() for seg in np.split(self.rewards.astype(np.float64), bounds[:-1])])


@dataclass
class SplitDataset:
    train: np.ndarray
    validation: np.ndarray


# ----------------------------------------------------------------- generation


def _collect(env: Environment, policy, size: int, rng: Rng) -> list[np.ndarray]:
    cols: list[list[np.ndarray]] = [[], [], [], [], []]
    have = 0
    while have < size:
        # mean expert episodes are short; overshoot a little to limit iterations
        episodes = max(8, (size - have) // 10)
        ro = rollout(env, policy, episodes, rng, record=True)
        for c, arr in zip(cols, (ro.states, ro.actions, ro.rewards, ro.next_states, ro.dones)):
            c.append(arr)
        have += len(ro.rewards)
    return [np.concatenate(c)[:size] for c in cols]


def generate_dataset(env: Environment, tier: str, size: int, seed: int) -> TransitionDataset:
    """Roll out a scripted behavior policy of the given quality tier.

    random: uniform actions; expert: the scripted controller; medium: expert
    plus Gaussian action noise (std 0.3) and 30% uniform-random actions;
    mixed: half random, half medium.
    """
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}; choose from {TIERS}")
    if size < 100:
        raise ValueError("dataset size must be >= 100")
    root = Rng(seed, f"dataset/{env.name}/{tier}")
    act_rng = root.child("behavior")
    m = env.action_dim

    def random_policy(obs):
        return act_rng.uniform(-1.0, 1.0, (len(obs), m))

    def medium_policy(obs):
        a = env.expert_action(obs) + np.float32(MEDIUM_ACTION_NOISE) * act_rng.normal((len(obs), m), np.float32)
        explore = act_rng.random(len(obs)) < MEDIUM_EPSILON
        a[explore] = act_rng.uniform(-1.0, 1.0, (int(explore.sum()), m))
        return np.clip(a, -1.0, 1.0)

    env_rng = root.child("env")
    if tier == "mixed":
        half = size // 2
        parts = [_collect(env, random_policy, half, env_rng), _collect(env, medium_policy, size - half, env_rng)]
        cols = [np.concatenate([a, b]) for a, b in zip(*parts)]
    else:
        policy = {"random": random_policy, "expert": env.expert_action, "medium": medium_policy}[tier]
        cols = _collect(env, policy, size, env_rng)
    states, actions, rewards, next_states, dones = cols
    meta = {"env": env.name, "tier": tier, "seed": int(seed), "reward_scale": float(env.reward_scale)}
    return TransitionDataset(states.astype(np.float32), actions.astype(np.float32), rewards.astype(np.float32),
                             next_states.astype(np.float32), dones.astype(bool), meta)


# ----------------------------------------------------------------- split


def split(dataset: TransitionDataset, fraction: float = 0.05, seed: int = 0) -> SplitDataset:
    """Uniform random train/validation partition; validation gets ``floor(N * fraction)`` rows."""
    if not 0.0 < fraction <= 0.5:
        raise ValueError("fraction must lie in (0, 0.5]")
    n = len(dataset)
    n_val = int(np.floor(n * fraction + 1e-9))
    if n_val < 1:
        raise ValueError(f"N * fraction = {n * fraction:g} < 1: validation split would be empty")
    perm = Rng(seed, "split").permutation(n)
    return SplitDataset(np.sort(perm[n_val:]), np.sort(perm[:n_val]))


# ----------------------------------------------------------------- file format


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_dataset(dataset: TransitionDataset, path) -> None:
    """Write the binary dataset file plus its ``<name>.meta.json`` sidecar."""
    n, m, count = dataset.state_dim, dataset.action_dim, len(dataset)
    body = b"".join([
        MAGIC,
        _HEADER.pack(n, m, count),
        np.ascontiguousarray(dataset.states, dtype="<f4").tobytes(),
        np.ascontiguousarray(dataset.actions, dtype="<f4").tobytes(),
        np.ascontiguousarray(dataset.rewards, dtype="<f4").tobytes(),
        np.ascontiguousarray(dataset.next_states, dtype="<f4").tobytes(),
        np.ascontiguousarray(dataset.dones, dtype=np.uint8).tobytes(),
    ])
    path = Path(path)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    sidecar_path(path).write_text(json.dumps(dataset.metadata, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> TransitionDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic (not an OFRLDS1 dataset or unsupported version)")
    pos = len(MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise FormatError(f"{path}: truncated in section 'header'")
    n, m, count = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    if count == 0:
        raise FormatError(f"{path}: dataset has no transitions")
    sections = [("states", "<f4", (count, n)), ("actions", "<f4", (count, m)), ("rewards", "<f4", (count,)),
                ("next_states", "<f4", (count, n)), ("dones", np.uint8, (count,))]
    arrays = {}
    for name, dtype, shape in sections:
        nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if len(raw) < pos + nbytes:
            raise FormatError(f"{path}: truncated in section '{name}'")
        arrays[name] = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape)
        pos += nbytes
    if len(raw) < pos + 4:
        raise FormatError(f"{path}: truncated in section 'checksum'")
    (crc,) = struct.unpack_from("<I", raw, pos)
    if crc != zlib.crc32(raw[:pos]):
        raise FormatError(f"{path}: checksum mismatch")
    if len(raw) != pos + 4:
        raise FormatError(f"{path}: {len(raw) - pos - 4} trailing bytes after checksum")
    meta_path = sidecar_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return TransitionDataset(
        arrays["states"].astype(np.float32), arrays["actions"].astype(np.float32),
        arrays["rewards"].astype(np.float32), arrays["next_states"].astype(np.float32),
        arrays["dones"].astype(bool), meta,
    )
