"""The infinite marked tree, generated lazily from ``(seed, vertex path)``.

Every vertex has ``d - 1`` children, indexed ``0 .. d-2``.  A vertex is
identified by its path of child indices from the root.  The key of a vertex is
a hash chain over its path (one mixing round per level, so the path length is
part of the encoding); the mark of the edge ``(parent(v), v)`` is the
inverse-CDF image of a uniform derived from the key of ``v``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .distributions import EdgeLaw
from .rng import child_key, mark_uniform, root_key

LEVEL_GUARD = 10**8


@dataclass(frozen=True)
class Vertex:
    path: tuple[int, ...] = ()

    @property
    def level(self) -> int:
        return len(self.path)

    @property
    def is_root(self) -> bool:
        return not self.path

    def parent(self) -> "Vertex":
        return Vertex(self.path[:-1]) if self.path else self

    def child(self, i: int) -> "Vertex":
        return Vertex(self.path + (int(i),))

    def ancestors(self):
        """Vertices on the path from the root to ``self`` (inclusive)."""
        return [Vertex(self.path[:k]) for k in range(len(self.path) + 1)]

    def is_ancestor_of(self, other: "Vertex") -> bool:
        return other.path[: len(self.path)] == self.path


ROOT = Vertex()


@njit(cache=True, nogil=True)
def sample_atom(u, cdf):
    i = 0
    while i < cdf.size - 1 and u >= cdf[i]:
        i += 1
    return i


@njit(cache=True, nogil=True)
def _path_keys(seed, path):
    keys = np.empty(path.size + 1, dtype=np.uint64)
    keys[0] = root_key(seed)
    for k in range(path.size):
        keys[k + 1] = child_key(keys[k], path[k])
    return keys


@njit(cache=True, nogil=True)
def _path_atoms(keys, cdf):
    out = np.empty(keys.size - 1, dtype=np.int64)
    for k in range(1, keys.size):
        out[k - 1] = sample_atom(mark_uniform(keys[k]), cdf)
    return out


@njit(cache=True, nogil=True)
def _level_atoms(seed, level, arity, cdf):
    """Atom indices of all edges down to ``level``; row ``k`` holds level ``k+1``."""
    keys = np.empty(1, dtype=np.uint64)
    keys[0] = root_key(seed)
    atoms = []
    for k in range(level):
        nk = np.empty(keys.size * arity, dtype=np.uint64)
        na = np.empty(keys.size * arity, dtype=np.int64)
        for j in range(keys.size):
            for c in range(arity):
                kk = child_key(keys[j], c)
                nk[j * arity + c] = kk
                na[j * arity + c] = sample_atom(mark_uniform(kk), cdf)
        keys = nk
        atoms.append(na)
    return atoms


@dataclass(frozen=True)
class Environment:
    """Edge marks of the ``d``-ary tree, i.i.d. with law ``law``."""

    seed: int
    law: EdgeLaw
    d: int

    def __post_init__(self):
        if self.d < 3:
            raise ValueError("d must be >= 3")
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    @property
    def arity(self) -> int:
        return self.d - 1

    @property
    def cdf(self) -> np.ndarray:
        return self.law.cdf

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.law.values)

    def _check(self, v: Vertex):
        if any(not 0 <= i < self.arity for i in v.path):
            raise ValueError(f"child indices must lie in [0, {self.arity - 1}]")

    def keys(self, v: Vertex) -> np.ndarray:
        self._check(v)
        return _path_keys(np.uint64(self.seed), np.asarray(v.path, dtype=np.int64))

    def path_atoms(self, v: Vertex) -> np.ndarray:
        """Atom indices of the edges along the root-to-``v`` path."""
        return _path_atoms(self.keys(v), self.cdf)


def edge_mark(env: Environment, v: Vertex) -> float:
    """``X(parent(v), v)``."""
    if v.is_root:
        raise ValueError("the root has no parent edge")
    return float(env.values[env.path_atoms(v)[-1]])


def s_value(env: Environment, v: Vertex) -> float:
    """Sum of edge marks along the root-to-``v`` path (0 at the root)."""
    s = 0.0
    for a in env.path_atoms(v):
        s += env.values[a]
    return float(s)


def _check_level(env: Environment, L: int):
    if L < 0:
        raise ValueError("level must be nonnegative")
    if env.arity**L > LEVEL_GUARD:
        raise ValueError(f"(d-1)^L = {env.arity ** L} exceeds the guard {LEVEL_GUARD}")


def level_marks(env: Environment, L: int) -> list[np.ndarray]:
    """Edge marks by level: entry ``k`` has the ``(d-1)^(k+1)`` marks into level ``k+1``.

    Vertices within a level are ordered lexicographically by path, so the
    children of vertex ``j`` at level ``k`` sit at ``j*(d-1) .. j*(d-1)+d-2``.
    """
    _check_level(env, L)
    if L == 0:
        return []
    atoms = _level_atoms(np.uint64(env.seed), L, env.arity, env.cdf)
    return [env.values[a] for a in atoms]


def level_s_values(env: Environment, L: int) -> np.ndarray:
    """Exact ``S`` for all ``(d-1)^L`` vertices at level ``L`` (lexicographic order)."""
    s = np.zeros(1)
    for marks in level_marks(env, L):
        s = np.repeat(s, env.arity) + marks
    return s


def _index_to_path(j: int, L: int, arity: int) -> tuple[int, ...]:
    path = []
    for _ in range(L):
        j, c = divmod(j, arity)
        path.append(c)
    return tuple(reversed(path))


def enumerate_level(env: Environment, L: int) -> list[tuple[Vertex, float]]:
    s = level_s_values(env, L)
    return [(Vertex(_index_to_path(j, L, env.arity)), float(s[j])) for j in range(s.size)]
