import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metrotree.distributions import make_two_point
from metrotree.environment import Environment
from metrotree.regeneration import (BlockSet, InsufficientRegenerations, RegenBlock,
                                    RegenerationDetector, block_stats, detect_levels,
                                    max_speed_violation)
from metrotree.rng import WalkerStream
from metrotree.walk import Params, StepRecord, run_trajectory

LAW = make_two_point(0.25)
P0 = Params(3, 0.0, "metropolis", LAW)


def test_hand_trace():
    levels = [0, 1, 2, 1, 2, 3, 4, 5, 6]
    det = RegenerationDetector(buffer_w=0)
    for t, lv in enumerate(levels):
        det.observe_step(StepRecord(t, lv, float(lv), 0))
    # the L=1 candidate dies at t=3; time 0 is the first visit to level 0, which survives
    assert [c.level for c in det.live_candidates()] == [0, 3, 4, 5]
    first = det.live_candidates()[1]
    assert (first.hit_time, first.jump_time) == (5, 6)
    res = det.finalize(1)
    assert res.taus.tolist() == [1, 6, 7, 8]
    assert detect_levels(levels, buffer_w=3).taus.tolist() == [1, 6]
    with pytest.raises(InsufficientRegenerations):
        detect_levels(levels, buffer_w=4)


def test_monotone_path():
    res = detect_levels(list(range(20)), buffer_w=0)
    assert res.tau1 == 1
    assert res.blocks.dtau.tolist() == [1] * (res.taus.size - 1)


def test_hold_voids_candidate():
    res = detect_levels([0, 1, 1, 2, 3, 4], buffer_w=0)
    assert res.taus.tolist() == [1, 4, 5]


def test_out_of_order():
    det = RegenerationDetector()
    det.observe_step(StepRecord(0, 0, 0.0, -1))
    with pytest.raises(ValueError):
        det.observe_step(StepRecord(2, 1, 0.0, 1))


def test_insufficient_message():
    with pytest.raises(InsufficientRegenerations, match="lengthen run"):
        detect_levels([0, 1, 0, 1, 0], buffer_w=0)


def test_block_stats_example():
    s = block_stats([(5, 2), (3, 1), (4, 3)])
    assert (s.mean_dtau, s.mean_ds, s.mean_ds2) == (4.0, 2.0, pytest.approx(14 / 3))
    one = block_stats([RegenBlock(7, -1.5)])
    assert (one.mean_dtau, one.mean_ds, one.count) == (7.0, -1.5, 1)
    with pytest.raises(ValueError):
        block_stats([])


def test_chunked_matches_per_record():
    env = Environment(123, LAW, 3)

    class PerRecord(RegenerationDetector):
        def observe_chunk(self, chunk):
            for r in chunk.records():
                self.observe_step(r)

    a = run_trajectory(env, P0, 50000, [RegenerationDetector(20)], WalkerStream(4), chunk_size=999)
    b = run_trajectory(env, P0, 50000, [PerRecord(20)], WalkerStream(4))
    ra, rb = a.outputs[0], b.outputs[0]
    assert ra.taus.tolist() == rb.taus.tolist()
    assert np.array_equal(ra.blocks.ds, rb.blocks.ds)


class Levels:
    def __init__(self):
        self.level, self.s = [], []

    def observe_chunk(self, chunk):
        self.level.append(chunk.level.copy())
        self.s.append(chunk.s.copy())

    def result(self):
        return np.concatenate(self.level), np.concatenate(self.s)


def test_soundness_and_speed_bound():
    env = Environment(5, LAW, 3)
    tr = run_trajectory(env, P0.with_beta(0.1), 200000, [RegenerationDetector(50), Levels()],
                        WalkerStream(6))
    res, (levels, s) = tr.outputs
    for tau in res.taus:
        lv = levels[tau - 1]
        assert levels[tau] == lv + 1
        assert np.all(levels[tau:] > lv)
        assert np.all(levels[: tau - 1] < lv)
    assert max_speed_violation(res.blocks, LAW.ess_sup) <= 0
    assert np.all(np.abs(res.blocks.ds) <= LAW.ess_sup * res.blocks.dtau)
    assert np.array_equal(res.s_at_taus, s[res.taus])


def test_blocks_nearly_uncorrelated():
    from metrotree.estimators import simulate
    from metrotree.rng import SeedSchedule
    res = simulate(P0, 400000, 4, SeedSchedule(17))
    b = res.blocks
    assert len(b) >= 10**4
    for col in (b.dtau.astype(float), b.ds):
        pairs = [(col[b.replica == r][:-1], col[b.replica == r][1:]) for r in range(4)]
        x = np.concatenate([p[0] for p in pairs])
        y = np.concatenate([p[1] for p in pairs])
        assert abs(np.corrcoef(x, y)[0, 1]) < 3 / np.sqrt(x.size)


def test_blockset_concat():
    a = BlockSet([1, 2], [0.5, -1.0], [0, 0])
    b = BlockSet.from_pairs([(3, 1.0)])
    c = BlockSet.concat([a, b])
    assert len(c) == 3 and c.dtau.tolist() == [1, 2, 3]
    with pytest.raises(ValueError):
        BlockSet([1], [1.0, 2.0])


@st.composite
def level_paths(draw):
    steps = draw(st.lists(st.sampled_from([-1, 0, 1, 1]), min_size=1, max_size=400))
    lv, out = 0, [0]
    for s in steps:
        lv = max(0, lv + s)
        out.append(lv)
    return out


@settings(max_examples=200, deadline=None)
@given(level_paths())
def test_stack_discipline(levels):
    det = RegenerationDetector(0)
    for t, lv in enumerate(levels):
        det.observe_step(StepRecord(t, lv, 0.0, 0))
        live = [c.level for c in det.live_candidates()]
        assert all(a < b for a, b in zip(live, live[1:]))
        assert all(c < lv for c in live)
    # every live candidate is a genuine regeneration within the observed window
    lv = np.array(levels)
    for c in det.live_candidates():
        assert lv[c.hit_time] == c.level and lv[c.jump_time] == c.level + 1
        assert np.all(lv[: c.hit_time] < c.level)
        assert np.all(lv[c.jump_time:] > c.level)
