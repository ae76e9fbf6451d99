"""Online detection of level regeneration times and the i.i.d. blocks between them.

A candidate at level ``L`` is recorded when the walk visits ``L`` for the
first time at step ``t`` and is at ``L + 1`` at step ``t + 1`` (a hold in
between disqualifies it).  The regeneration time is ``t + 1``.  A candidate
dies as soon as the walk is back at level ``L`` or below, so live candidates
form a stack with strictly increasing levels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .walk import StepChunk, StepRecord

DEFAULT_BUFFER = 50


class InsufficientRegenerations(RuntimeError):
    pass


@dataclass(frozen=True)
class RegenCandidate:
    level: int
    hit_time: int
    jump_time: int
    s_at_jump: float


@dataclass(frozen=True)
class RegenBlock:
    dtau: int
    ds: float


@dataclass
class BlockSet:
    """Columns of regeneration blocks, optionally tagged with their replica."""

    dtau: np.ndarray
    ds: np.ndarray
    replica: np.ndarray | None = None

    def __post_init__(self):
        self.dtau = np.asarray(self.dtau, dtype=np.int64)
        self.ds = np.asarray(self.ds, dtype=np.float64)
        if self.replica is None:
            self.replica = np.zeros(self.dtau.size, dtype=np.int64)
        self.replica = np.asarray(self.replica, dtype=np.int64)
        if not (self.dtau.shape == self.ds.shape == self.replica.shape):
            raise ValueError("block columns must have equal length")

    def __len__(self):
        return self.dtau.size

    def __iter__(self):
        for t, s in zip(self.dtau.tolist(), self.ds.tolist()):
            yield RegenBlock(t, s)

    @classmethod
    def from_pairs(cls, pairs) -> "BlockSet":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0, np.int64), np.empty(0))
        dt, ds = zip(*[(b.dtau, b.ds) if isinstance(b, RegenBlock) else b for b in pairs])
        return cls(np.array(dt), np.array(ds, dtype=float))

    @classmethod
    def concat(cls, sets) -> "BlockSet":
        sets = list(sets)
        if not sets:
            return cls(np.empty(0, np.int64), np.empty(0))
        return cls(np.concatenate([b.dtau for b in sets]), np.concatenate([b.ds for b in sets]),
                   np.concatenate([b.replica for b in sets]))


def as_blocks(blocks) -> BlockSet:
    return blocks if isinstance(blocks, BlockSet) else BlockSet.from_pairs(blocks)


@dataclass
class RegenResult:
    blocks: BlockSet
    taus: np.ndarray
    s_at_taus: np.ndarray
    max_level: int
    n_live: int

    @property
    def tau1(self) -> int:
        return int(self.taus[0])

    @property
    def s_tau1(self) -> float:
        return float(self.s_at_taus[0])


@njit(cache=True, nogil=True)
def _scan(step, level, s, expected, max_level, pend_level, pend_time,
          st_level, st_hit, st_jump, st_s, sp):
    for i in range(step.size):
        t = step[i]
        if t != expected:
            return -1, expected, max_level, pend_level, pend_time, sp, st_level, st_hit, st_jump, st_s
        lv = level[i]
        if pend_level >= 0:
            if lv == pend_level + 1:
                if sp >= st_level.size:
                    cap = 2 * st_level.size
                    a = np.empty(cap, np.int64); a[:sp] = st_level[:sp]; st_level = a
                    b = np.empty(cap, np.int64); b[:sp] = st_hit[:sp]; st_hit = b
                    c = np.empty(cap, np.int64); c[:sp] = st_jump[:sp]; st_jump = c
                    e = np.empty(cap, np.float64); e[:sp] = st_s[:sp]; st_s = e
                st_level[sp] = pend_level
                st_hit[sp] = pend_time
                st_jump[sp] = t
                st_s[sp] = s[i]
                sp += 1
            pend_level = -1
        while sp > 0 and st_level[sp - 1] >= lv:
            sp -= 1
        if lv > max_level:
            max_level = lv
            pend_level = lv
            pend_time = t
        expected = t + 1
    return 0, expected, max_level, pend_level, pend_time, sp, st_level, st_hit, st_jump, st_s


class RegenerationDetector:
    """Observer for :func:`metrotree.walk.run_trajectory` (chunked or per record)."""

    def __init__(self, buffer_w: int = DEFAULT_BUFFER, replica: int = 0, first_step: int = 0):
        self.buffer_w = buffer_w
        self.replica = replica
        self.expected = first_step
        self.max_level = -1
        self.pend_level = -1
        self.pend_time = -1
        self.sp = 0
        self.st_level = np.empty(256, np.int64)
        self.st_hit = np.empty(256, np.int64)
        self.st_jump = np.empty(256, np.int64)
        self.st_s = np.empty(256, np.float64)

    def observe_step(self, record: StepRecord):
        """Pure-Python update for a single record."""
        if record.n != self.expected:
            raise ValueError(f"record {record.n} out of order (expected {self.expected})")
        lv = record.level
        if self.pend_level >= 0:
            if lv == self.pend_level + 1:
                self._push(self.pend_level, self.pend_time, record.n, record.s)
            self.pend_level = -1
        while self.sp > 0 and self.st_level[self.sp - 1] >= lv:
            self.sp -= 1
        if lv > self.max_level:
            self.max_level = lv
            self.pend_level, self.pend_time = lv, record.n
        self.expected = record.n + 1

    def _push(self, level, hit, jump, s):
        if self.sp >= self.st_level.size:
            for name in ("st_level", "st_hit", "st_jump", "st_s"):
                old = getattr(self, name)
                new = np.empty(2 * old.size, old.dtype)
                new[: old.size] = old
                setattr(self, name, new)
        self.st_level[self.sp] = level
        self.st_hit[self.sp] = hit
        self.st_jump[self.sp] = jump
        self.st_s[self.sp] = s
        self.sp += 1

    def observe_chunk(self, chunk: StepChunk):
        status, *rest = _scan(chunk.step, chunk.level, chunk.s, self.expected, self.max_level,
                              self.pend_level, self.pend_time, self.st_level, self.st_hit,
                              self.st_jump, self.st_s, self.sp)
        (expected, self.max_level, self.pend_level, self.pend_time, self.sp,
         self.st_level, self.st_hit, self.st_jump, self.st_s) = rest
        if status < 0:
            raise ValueError(f"record out of order (expected step {expected})")
        self.expected = expected

    def live_candidates(self) -> list[RegenCandidate]:
        return [RegenCandidate(int(self.st_level[i]), int(self.st_hit[i]), int(self.st_jump[i]),
                               float(self.st_s[i])) for i in range(self.sp)]

    def finalize(self, buffer_w: int | None = None) -> RegenResult:
        """Accept live candidates at least ``buffer_w`` levels below the deepest level seen."""
        w = self.buffer_w if buffer_w is None else buffer_w
        levels = self.st_level[: self.sp]
        m = int(np.searchsorted(levels, self.max_level - w, side="right"))
        taus = self.st_jump[:m].copy()
        svals = self.st_s[:m].copy()
        if m < 2:
            raise InsufficientRegenerations(
                f"insufficient regenerations ({m} certified); lengthen run")
        blocks = BlockSet(np.diff(taus), np.diff(svals), np.full(m - 1, self.replica, np.int64))
        return RegenResult(blocks, taus, svals, self.max_level, self.sp)

    def result(self) -> RegenResult | InsufficientRegenerations:
        try:
            return self.finalize()
        except InsufficientRegenerations as exc:
            return exc


def finalize(detector: RegenerationDetector, buffer_w: int) -> RegenResult:
    return detector.finalize(buffer_w)


def observe_step(detector: RegenerationDetector, record: StepRecord):
    detector.observe_step(record)


def detect_levels(levels, s=None, buffer_w: int = DEFAULT_BUFFER) -> RegenResult:
    """Run the detector over a full level sequence starting at step 0."""
    levels = np.asarray(levels, dtype=np.int64)
    s = np.zeros(levels.size) if s is None else np.asarray(s, dtype=float)
    det = RegenerationDetector(buffer_w)
    det.observe_chunk(StepChunk(np.arange(levels.size, dtype=np.int64), levels, s,
                                np.zeros(levels.size, np.int8)))
    return det.finalize()


@dataclass(frozen=True)
class BlockStats:
    count: int
    mean_dtau: float
    mean_ds: float
    mean_ds2: float
    moment2_dtau: float
    moment4_dtau: float
    tail_t: np.ndarray
    tail_survival: np.ndarray


def block_stats(blocks) -> BlockStats:
    """Sample moments and the empirical survival function ``P(dtau > t)``."""
    b = as_blocks(blocks)
    if len(b) < 1:
        raise ValueError("block_stats needs at least one block")
    dt = b.dtau.astype(float)
    t = np.unique(b.dtau)
    surv = 1.0 - np.searchsorted(np.sort(b.dtau), t, side="right") / len(b)
    return BlockStats(
        count=len(b),
        mean_dtau=float(np.mean(dt)),
        mean_ds=float(np.mean(b.ds)),
        mean_ds2=float(np.mean(b.ds**2)),
        moment2_dtau=float(np.mean(dt**2)),
        moment4_dtau=float(np.mean(dt**4)),
        tail_t=t,
        tail_survival=surv,
    )


def max_speed_violation(blocks, g: float) -> float:
    """``max(|ds| - g dtau)``; nonpositive when every block respects the speed bound."""
    b = as_blocks(blocks)
    if not len(b):
        return -np.inf
    return float(np.max(np.abs(b.ds) - g * b.dtau))
