"""Counter-based hashing used for both the lazy environment and walker streams.

Every random number in a simulation is a pure function of a 64-bit key and a
counter, so results never depend on call order, chunking or thread count.
The mixer is the SplitMix64 finalizer (a bijection on 64-bit words).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True, inline="always")
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True, nogil=True, inline="always")
def to_unit(z):
    """Top 53 bits of ``z`` as a double in [0, 1)."""
    return float(uint64(z) >> uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def root_key(seed):
    return mix64(uint64(seed) ^ uint64(0xD1B54A32D192ED03))


@njit(cache=True, nogil=True, inline="always")
def child_key(parent, index):
    return mix64(uint64(parent) ^ (uint64(index + 1) * uint64(0x9E3779B97F4A7C15)))


@njit(cache=True, nogil=True, inline="always")
def mark_uniform(key):
    return to_unit(mix64(uint64(key) ^ uint64(0x8CB92BA72F3D8DD7)))


@njit(cache=True, nogil=True, inline="always")
def stream_uniform(key, n):
    """The ``n``-th output of the SplitMix64 stream started at ``key``."""
    return to_unit(mix64(uint64(key) + uint64(n + 1) * uint64(0x9E3779B97F4A7C15)))


@dataclass(frozen=True)
class WalkerStream:
    """Uniform stream for one walker; step ``n`` consumes ``uniform(n)``."""

    key: int

    def uniform(self, n: int) -> float:
        return float(stream_uniform(np.uint64(self.key), n))


class SeedSchedule:
    """Splittable seed schedule: replica ``i`` gets independent env/walk lanes.

    Backed by :class:`numpy.random.SeedSequence`, keyed by
    ``(master_seed, *path, replica, lane)``.
    """

    ENV, WALK, AUX = 0, 1, 2

    def __init__(self, master_seed: int, path: tuple[int, ...] = ()):
        self.master_seed = int(master_seed)
        self.path = tuple(int(p) for p in path)

    def child(self, *tags: int) -> "SeedSchedule":
        return SeedSchedule(self.master_seed, self.path + tuple(tags))

    def _seq(self, replica: int, lane: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=self.path + (int(replica), int(lane)))

    def replica_seeds(self, replica: int) -> tuple[int, int]:
        env = int(self._seq(replica, self.ENV).generate_state(1, dtype=np.uint64)[0])
        walk = int(self._seq(replica, self.WALK).generate_state(1, dtype=np.uint64)[0])
        return env, walk

    def aux_rng(self, replica: int = 0) -> np.random.Generator:
        return np.random.default_rng(self._seq(replica, self.AUX))

    def __repr__(self) -> str:
        return f"SeedSchedule({self.master_seed}, path={self.path})"


def beta_tag(beta: float) -> tuple[int, int]:
    """Stable spawn-key tag for a grid value, independent of its position in the grid."""
    return (0 if beta >= 0 else 1, int(round(abs(beta) * 1e9)))


class FixedSeeds:
    """Every replica uses the same (env, walk) seed pair."""

    def __init__(self, env_seed: int, walk_seed: int):
        self.env_seed = int(env_seed)
        self.walk_seed = int(walk_seed)

    def replica_seeds(self, replica: int) -> tuple[int, int]:
        return self.env_seed, self.walk_seed

    def child(self, *tags: int) -> "FixedSeeds":
        return self

    def aux_rng(self, replica: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.env_seed, self.walk_seed])
