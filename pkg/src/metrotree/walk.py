"""The Metropolis chain on the marked tree.

From ``v`` the chain moves to a neighbour ``w`` with probability
``p_beta(X(v, w)) = h(exp((beta0 + beta) X(v, w))) / d`` and holds otherwise.
The root's missing parent is a phantom self-edge of mark 0.

The hot loop proposes one of the ``d`` neighbour slots uniformly and accepts
with ``h(exp((beta0 + beta) x))``, consuming one stream uniform per step.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from .distributions import EdgeLaw
from .environment import ROOT, Environment, Vertex, edge_mark, sample_atom
from .rng import WalkerStream, child_key, mark_uniform, stream_uniform

START, HOLD, CHILD, PARENT, LOOP = -1, 0, 1, 2, 3
MOVE_NAMES = {START: "start", HOLD: "hold", CHILD: "child", PARENT: "parent", LOOP: "loop"}
DEFAULT_CHUNK = 1 << 16


class HFunction:
    """Acceptance function ``h`` with ``h(x) = x h(1/x)``."""

    KINDS = ("metropolis", "barker")

    def __init__(self, kind: str = "metropolis"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown h-function {kind!r}; expected one of {self.KINDS}")
        self.kind = kind

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "metropolis":
            out = np.minimum(1.0, x)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(np.isinf(x), 1.0, x / (1.0 + x))
        return out if out.ndim else float(out)

    def of_exp(self, y):
        """``h(exp(y))`` without overflow."""
        y = np.asarray(y, dtype=float)
        if self.kind == "metropolis":
            out = np.exp(np.minimum(y, 0.0))
        else:
            out = expit(y)
        return out if out.ndim else float(out)

    def __eq__(self, other):
        return isinstance(other, HFunction) and other.kind == self.kind

    def __hash__(self):
        return hash(self.kind)

    def __repr__(self):
        return f"HFunction({self.kind!r})"


@dataclass(frozen=True)
class Params:
    d: int
    beta: float
    h: HFunction
    law: EdgeLaw

    def __post_init__(self):
        if self.d < 3:
            raise ValueError("d must be >= 3")
        if isinstance(self.h, str):
            object.__setattr__(self, "h", HFunction(self.h))

    @property
    def gamma(self) -> float:
        return self.law.beta0 + self.beta

    def with_beta(self, beta: float) -> "Params":
        return Params(self.d, float(beta), self.h, self.law)

    def acceptance_tables(self):
        """``h(exp(gamma x))`` per atom for child moves, parent moves, and the phantom loop."""
        vals = np.asarray(self.law.values)
        return (
            np.asarray(self.h.of_exp(self.gamma * vals), dtype=float),
            np.asarray(self.h.of_exp(-self.gamma * vals), dtype=float),
            float(self.h.of_exp(0.0)),
        )


def p_beta(params: Params, x):
    """Probability of crossing an edge of mark ``x`` in one step."""
    return params.h.of_exp(params.gamma * np.asarray(x, dtype=float)) / params.d


def ellipticity_floor(params: Params) -> float:
    g = params.law.ess_sup
    return params.h.of_exp(-(params.law.beta0 + abs(params.beta)) * g) / params.d


@dataclass(frozen=True)
class TransitionRow:
    vertex: Vertex
    moves: list[tuple[Vertex, float, float]]  # (neighbour, mark X(v, w), probability)
    hold: float

    @property
    def total(self) -> float:
        return math.fsum([m[2] for m in self.moves] + [self.hold])


def transition_distribution(env: Environment, params: Params, v: Vertex) -> TransitionRow:
    """Children first (index order), then the parent (the root itself at the root)."""
    moves = []
    for c in range(env.arity):
        w = v.child(c)
        x = edge_mark(env, w)
        moves.append((w, x, float(p_beta(params, x))))
    x_up = 0.0 if v.is_root else -edge_mark(env, v)
    moves.append((v.parent(), x_up, float(p_beta(params, x_up))))
    hold = 1.0 - math.fsum(m[2] for m in moves)
    return TransitionRow(v, moves, hold)


# --- kernel ---------------------------------------------------------------


@njit(cache=True, nogil=True)
def _grow(keys, atoms, prefix, path):
    cap = 2 * keys.size
    k2 = np.empty(cap, dtype=keys.dtype)
    a2 = np.empty(cap, dtype=atoms.dtype)
    p2 = np.empty(cap, dtype=prefix.dtype)
    q2 = np.empty(cap, dtype=path.dtype)
    k2[: keys.size] = keys
    a2[: keys.size] = atoms
    p2[: keys.size] = prefix
    q2[: keys.size] = path
    return k2, a2, p2, q2


@njit(cache=True, nogil=True)
def _advance(keys, atoms, prefix, path, level, n0, n_steps, walk_key, cdf, values,
             acc_fwd, acc_back, acc_loop, d, stop_low, stop_high,
             out_level, out_s, out_move):
    arity = d - 1
    for i in range(n_steps):
        u = stream_uniform(walk_key, n0 + i) * d
        c = int(u)
        if c >= d:
            c = d - 1
        r = u - c
        move = 0
        if c < arity:
            kk = child_key(keys[level], c)
            a = sample_atom(mark_uniform(kk), cdf)
            if r < acc_fwd[a]:
                level += 1
                if level >= keys.size:
                    keys, atoms, prefix, path = _grow(keys, atoms, prefix, path)
                keys[level] = kk
                atoms[level] = a
                prefix[level] = prefix[level - 1] + values[a]
                path[level] = c
                move = 1
        elif level == 0:
            if r < acc_loop:
                move = 3
        elif r < acc_back[atoms[level]]:
            level -= 1
            move = 2
        out_level[i] = level
        out_s[i] = prefix[level]
        out_move[i] = move
        if level <= stop_low or level >= stop_high:
            return keys, atoms, prefix, path, level, i + 1
    return keys, atoms, prefix, path, level, n_steps


# --- state and trajectories -----------------------------------------------


@dataclass
class WalkState:
    """Current vertex (as a stack of keys, atoms and prefix sums of ``S``) and step count."""

    keys: np.ndarray
    atoms: np.ndarray
    prefix: np.ndarray
    path: np.ndarray
    level: int = 0
    n: int = 0

    @classmethod
    def at(cls, env: Environment, v: Vertex = ROOT, capacity: int = 1024) -> "WalkState":
        cap = max(capacity, 2 * (v.level + 1))
        keys = np.zeros(cap, dtype=np.uint64)
        atoms = np.zeros(cap, dtype=np.int64)
        prefix = np.zeros(cap, dtype=np.float64)
        path = np.zeros(cap, dtype=np.int64)
        kv = env.keys(v)
        keys[: v.level + 1] = kv
        if v.level:
            av = env.path_atoms(v)
            atoms[1 : v.level + 1] = av
            path[1 : v.level + 1] = v.path
            s = 0.0
            for k, a in enumerate(av, start=1):
                s += env.values[a]
                prefix[k] = s
        return cls(keys, atoms, prefix, path, v.level, 0)

    @property
    def s(self) -> float:
        return float(self.prefix[self.level])

    @property
    def vertex(self) -> Vertex:
        return Vertex(tuple(int(c) for c in self.path[1 : self.level + 1]))

    def copy(self) -> "WalkState":
        return WalkState(self.keys.copy(), self.atoms.copy(), self.prefix.copy(),
                         self.path.copy(), self.level, self.n)


@dataclass(frozen=True)
class StepRecord:
    n: int
    level: int
    s: float
    move: int

    @property
    def move_name(self) -> str:
        return MOVE_NAMES[self.move]


@dataclass
class StepChunk:
    """Consecutive step records ``step[0] .. step[-1]``."""

    step: np.ndarray
    level: np.ndarray
    s: np.ndarray
    move: np.ndarray

    def __len__(self):
        return self.step.size

    def records(self) -> Iterator[StepRecord]:
        for i in range(self.step.size):
            yield StepRecord(int(self.step[i]), int(self.level[i]), float(self.s[i]), int(self.move[i]))


class _Kernel:
    """Law/parameter tables bound once per (env, params)."""

    def __init__(self, env: Environment, params: Params):
        if env.d != params.d or env.law != params.law:
            raise ValueError("environment and params disagree on d or law")
        self.env = env
        self.params = params
        self.cdf = env.cdf
        self.values = env.values
        self.acc_fwd, self.acc_back, self.acc_loop = params.acceptance_tables()

    def advance(self, state: WalkState, stream: WalkerStream, n_steps: int,
                stop_low: int = -1, stop_high: int = 1 << 62):
        out_level = np.empty(n_steps, dtype=np.int64)
        out_s = np.empty(n_steps, dtype=np.float64)
        out_move = np.empty(n_steps, dtype=np.int8)
        keys, atoms, prefix, path, level, done = _advance(
            state.keys, state.atoms, state.prefix, state.path, state.level, state.n, n_steps,
            np.uint64(stream.key), self.cdf, self.values, self.acc_fwd, self.acc_back,
            self.acc_loop, self.params.d, stop_low, stop_high, out_level, out_s, out_move,
        )
        n0 = state.n
        state.keys, state.atoms, state.prefix, state.path = keys, atoms, prefix, path
        state.level = int(level)
        state.n = n0 + int(done)
        steps = np.arange(n0 + 1, n0 + done + 1, dtype=np.int64)
        return StepChunk(steps, out_level[:done], out_s[:done], out_move[:done])


def step(env: Environment, params: Params, state: WalkState, stream: WalkerStream) -> WalkState:
    """One transition; returns a new state and leaves ``state`` untouched."""
    new = state.copy()
    _Kernel(env, params).advance(new, stream, 1)
    return new


def _concat(a: StepChunk, b: StepChunk) -> StepChunk:
    return StepChunk(np.concatenate([a.step, b.step]), np.concatenate([a.level, b.level]),
                     np.concatenate([a.s, b.s]), np.concatenate([a.move, b.move]))


@dataclass
class Trajectory:
    state: WalkState
    outputs: list = field(default_factory=list)


def run_trajectory(env: Environment, params: Params, n_steps: int, observers: Sequence = (),
                   stream: WalkerStream | None = None, chunk_size: int = DEFAULT_CHUNK,
                   state: WalkState | None = None) -> Trajectory:
    """Advance ``n_steps`` from the root (or ``state``), feeding chunks to observers.

    The first chunk starts with the initial record (``move == START``).  Each
    observer needs ``observe_chunk``; ``result()`` is collected when present.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    stream = stream or WalkerStream(0)
    state = state if state is not None else WalkState.at(env)
    kernel = _Kernel(env, params)
    first = StepChunk(np.array([state.n], dtype=np.int64), np.array([state.level], dtype=np.int64),
                      np.array([state.s]), np.array([START], dtype=np.int8))
    pending = first
    remaining = n_steps
    while remaining > 0:
        chunk = kernel.advance(state, stream, min(chunk_size, remaining))
        remaining -= len(chunk)
        if pending is not None:
            chunk, pending = _concat(pending, chunk), None
        for obs in observers:
            obs.observe_chunk(chunk)
    if pending is not None:
        for obs in observers:
            obs.observe_chunk(pending)
    outputs = [obs.result() for obs in observers if hasattr(obs, "result")]
    return Trajectory(state, outputs)


@dataclass(frozen=True)
class StopOutcome:
    steps: int
    level: int
    hit_low: bool
    hit_high: bool
    max_level: int


def walk_until(env: Environment, params: Params, start: Vertex, stream: WalkerStream,
               stop_low: int, stop_high: int, max_steps: int = 10**7,
               chunk_size: int = 4096) -> StopOutcome:
    """Run from ``start`` until the level reaches ``stop_low`` or ``stop_high``."""
    kernel = _Kernel(env, params)
    state = WalkState.at(env, start, capacity=max(64, min(stop_high + 2, 1 << 16)))
    max_level = state.level
    while state.n < max_steps:
        chunk = kernel.advance(state, stream, min(chunk_size, max_steps - state.n), stop_low, stop_high)
        max_level = max(max_level, int(chunk.level.max()))
        if state.level <= stop_low or state.level >= stop_high:
            break
    return StopOutcome(state.n, state.level, state.level <= stop_low, state.level >= stop_high, max_level)


class Subsampler:
    """Keeps every ``stride``-th record as ``(step, level, S)`` rows."""

    def __init__(self, stride: int = 1000):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride
        self.rows: list[np.ndarray] = []

    def observe_chunk(self, chunk: StepChunk):
        keep = chunk.step % self.stride == 0
        if keep.any():
            self.rows.append(np.column_stack([chunk.step[keep], chunk.level[keep], chunk.s[keep]]))

    def result(self) -> np.ndarray:
        return np.concatenate(self.rows) if self.rows else np.empty((0, 3))


class EndpointRecorder:
    """Records ``S_n`` at a fixed set of step indices."""

    def __init__(self, steps: Sequence[int]):
        self.steps = np.asarray(sorted(set(int(s) for s in steps)), dtype=np.int64)
        self.values = np.full(self.steps.size, np.nan)

    def observe_chunk(self, chunk: StepChunk):
        idx = np.searchsorted(chunk.step, self.steps)
        ok = (idx < chunk.step.size)
        ok[ok] &= chunk.step[idx[ok]] == self.steps[ok]
        self.values[ok] = chunk.s[idx[ok]]

    def result(self) -> dict[int, float]:
        return dict(zip(self.steps.tolist(), self.values.tolist()))


def run_replicas(params: Params, schedule, n_replicas: int, n_steps: int,
                 make_observers: Callable[[int], Sequence], threads: int = 1,
                 chunk_size: int = DEFAULT_CHUNK, replica_offset: int = 0) -> list[Trajectory]:
    """Independent (environment, walker) replicas, returned in replica order."""

    def one(i: int) -> Trajectory:
        env_seed, walk_seed = schedule.replica_seeds(replica_offset + i)
        env = Environment(env_seed, params.law, params.d)
        return run_trajectory(env, params, n_steps, make_observers(i), WalkerStream(walk_seed), chunk_size)

    if threads <= 1:
        return [one(i) for i in range(n_replicas)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_replicas)))
