"""Counter-based random streams.

A stream is keyed by ``(seed, stream_id)`` on top of numpy's Philox, so any
component (init, dropout masks, noise, environment) can own an independent,
reproducible sequence without coordinating call order with the others.
"""
from __future__ import annotations

import zlib

import numpy as np

from actoreg.core.tensor import Tensor, default_dtype

_MASK64 = (1 << 64) - 1


def stream_id(name: str | int) -> int:
    if isinstance(name, int):
        return name & _MASK64
    return zlib.crc32(name.encode("utf-8"))


class Rng:
    def __init__(self, seed: int, stream: str | int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = stream_id(stream)
        self._gen = np.random.Generator(np.random.Philox(key=(self.stream << 64) | self.seed))

    def child(self, name: str | int) -> Rng:
        """Independent stream derived from this one's seed and a new name."""
        return Rng(self.seed, (self.stream * 1_000_003 + stream_id(name)) & _MASK64)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, dtype=None) -> np.ndarray:
        dtype = dtype or default_dtype()
        return self._gen.standard_normal(shape, dtype=dtype)

    def uniform(self, low=0.0, high=1.0, shape=None, dtype=None) -> np.ndarray:
        dtype = dtype or default_dtype()
        return self._gen.uniform(low, high, shape).astype(dtype)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(shape, dtype=np.float32)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def rng_normal(rng: Rng, shape) -> Tensor:
    return Tensor(rng.normal(shape))
