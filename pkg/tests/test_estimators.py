import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metrotree.distributions import make_shifted_binomial, make_two_point
from metrotree.estimators import (EinsteinBudget, Estimate, InsufficientRegenerations, einstein_report,
                                  fit_through_origin, one_step_moment, ratio_of_means, replica_mean,
                                  sigma2_from_blocks, sigma2_naive, simulate, speed_from_blocks,
                                  synthetic_blocks, weak_er_estimate)
from metrotree.regeneration import BlockSet
from metrotree.rng import FixedSeeds, SeedSchedule
from metrotree.walk import Params

LAW = make_two_point(0.25)
P0 = Params(3, 0.0, "metropolis", LAW)


def test_estimate_invariants():
    with pytest.raises(ValueError):
        Estimate(1.0, -0.1, 3, "x")
    with pytest.raises(ValueError):
        Estimate(1.0, 0.1, 0, "x")
    e = Estimate(1.0, 0.1, 3, "x")
    assert e.excludes_zero() and e.agrees_with(Estimate(1.2, 0.1, 3, "y"))


def test_speed_arithmetic():
    assert speed_from_blocks([(5, 2), (3, 1), (4, 3)], min_blocks=1).value == 0.5
    with pytest.raises(InsufficientRegenerations):
        speed_from_blocks([(5, 2)] * 29)
    with pytest.raises(AssertionError):
        speed_from_blocks([(1, 2.0)] * 40, g=1.0)


def test_sigma2_arithmetic_and_flags():
    assert sigma2_from_blocks([(4, 2), (6, -2)], min_blocks=1).value == pytest.approx(0.8)
    e = sigma2_from_blocks([(3, 0.0)] * 40)
    assert e.value == 0 and any("degenerate" in f for f in e.flags)


def test_delta_method_against_bootstrap():
    rng = np.random.default_rng(0)
    dt = rng.geometric(0.2, 4000)
    ds = rng.normal(0.3 * dt, 2.0)
    est = ratio_of_means(ds, dt, "r")
    boot = [np.sum(ds[i]) / np.sum(dt[i]) for i in rng.integers(0, 4000, (400, 4000))]
    assert est.stderr == pytest.approx(np.std(boot), rel=0.15)


def test_stderr_rate():
    rng = np.random.default_rng(1)

    def draw(n):
        dt = rng.geometric(0.1, n)
        return BlockSet(dt, rng.normal(0.2 * dt, 3.0))

    se = [speed_from_blocks(draw(n)).stderr for n in (4000, 16000, 64000)]
    assert se[0] / se[1] == pytest.approx(2, rel=0.15)
    assert se[1] / se[2] == pytest.approx(2, rel=0.15)


def test_one_step_oracles():
    assert one_step_moment(P0, 2) == pytest.approx((2 / 3) * (0.25 + 0.75 / 3))
    naive = sigma2_naive(P0, 1, 40000, SeedSchedule(4))
    assert abs(naive.value - one_step_moment(P0, 2)) <= 3 * naive.stderr
    p1 = P0.with_beta(1.0)
    w = weak_er_estimate(p1, 40000, SeedSchedule(5))
    assert abs(w.value - one_step_moment(p1, 1)) <= 3 * w.stderr


def test_identical_seeds_zero_stderr():
    e = sigma2_naive(P0, 500, 5, FixedSeeds(1, 2))
    assert e.stderr == 0.0


def test_naive_requires_beta_zero_and_budget():
    with pytest.raises(ValueError):
        sigma2_naive(P0.with_beta(0.1), 10, 2)
    with pytest.raises(ValueError, match="budget"):
        weak_er_estimate(P0.with_beta(0.001), 10**4)
    with pytest.raises(ValueError):
        weak_er_estimate(P0, 10)


def test_fit_identities():
    betas = [-0.1, -0.05, 0.05, 0.1]
    ests = [Estimate(2 * b + 3 * b * b, 0.01 + abs(b), 100, "x") for b in betas]
    # on a symmetric grid with symmetric weights the quadratic term cancels
    assert fit_through_origin(betas, ests).value == pytest.approx(2.0, abs=1e-12)
    one = fit_through_origin([0.05, 0.1], [Estimate(0.1, 0.01, 1, "x"), Estimate(0.2, 0.02, 1, "x")])
    both = fit_through_origin([-0.1, -0.05, 0.05, 0.1],
                              [Estimate(-0.2, 0.02, 1, "x"), Estimate(-0.1, 0.01, 1, "x"),
                               Estimate(0.1, 0.01, 1, "x"), Estimate(0.2, 0.02, 1, "x")])
    assert one.value == pytest.approx(both.value, abs=1e-14)


def test_einstein_synthetic():
    rep = einstein_report(P0, [0, -0.1, -0.05, -0.02, 0.02, 0.05, 0.1],
                          block_source=synthetic_blocks(0.6))
    assert rep.ratio == pytest.approx(1.0, abs=1e-12)
    assert rep.sigma2_hat.value == pytest.approx(0.6, abs=1e-12)
    with pytest.raises(ValueError, match="sigma2 baseline required"):
        einstein_report(P0, [0.1, -0.1], block_source=synthetic_blocks(0.6))


def test_einstein_partial_failures():
    good = synthetic_blocks(0.6)

    def source(params):
        if params.beta == 0.02:
            return BlockSet([1] * 5, [0.0] * 5), 5
        return good(params)

    rep = einstein_report(P0, [0, 0.02, 0.1], block_source=source)
    assert [b for b, _ in rep.failures] == [0.02]
    assert rep.ratio == pytest.approx(1.0, abs=1e-12)


def test_einstein_small_real_run():
    budget = EinsteinBudget(sigma2_steps=2 * 10**6, base_steps=10**6, max_steps_per_replica=5 * 10**5,
                            min_replicas=2)
    rep = einstein_report(P0, [0, 0.1, -0.1], budget, SeedSchedule(3))
    assert math.isfinite(rep.ratio)
    assert all(p.estimate is not None for p in rep.grid)
    assert all(abs(e.value) <= LAW.ess_sup for _, e in rep.beta_grid)


def test_budget_plan():
    b = EinsteinBudget(base_steps=10**6, ref_beta=0.1, max_steps_per_replica=10**6, min_replicas=2)
    assert b.total_steps(0.1) == 10**6
    assert b.total_steps(-0.05) == 4 * 10**6
    reps, steps = b.plan(0.02)
    assert reps * steps >= 25 * 10**6 and steps <= 10**6


def test_sigma2_agreement_several_configs():
    configs = [
        Params(3, 0.0, "metropolis", LAW),
        Params(3, 0.0, "barker", LAW),
        Params(4, 0.0, "metropolis", make_two_point(0.2)),
        Params(3, 0.0, "metropolis", make_shifted_binomial(2, 0.3)),
        Params(5, 0.0, "barker", make_shifted_binomial(3, 0.25)),
    ]
    for i, params in enumerate(configs):
        res = simulate(params, 10**5, 60, SeedSchedule(100 + i), record_steps=[10**5])
        blocks = sigma2_from_blocks(res.blocks)
        naive = replica_mean(res.s_at(10**5) ** 2 / 10**5, "naive")
        assert blocks.excludes_zero()
        assert blocks.agrees_with(naive), (i, blocks, naive)


def test_zero_drift_checkpoints():
    res = simulate(P0, 10**4, 200, SeedSchedule(6), record_steps=[10**2, 10**3, 10**4], detect=False)
    for n in (10**2, 10**3, 10**4):
        e = replica_mean(res.s_at(n), "m")
        assert abs(e.value) <= 3 * e.stderr


def test_block_speed_matches_s_over_n():
    res = simulate(P0.with_beta(0.1), 4 * 10**5, 20, SeedSchedule(7), record_steps=[4 * 10**5])
    blocks = speed_from_blocks(res.blocks, g=1.0)
    direct = replica_mean(res.s_at(4 * 10**5) / 4e5, "S_n/n")
    assert blocks.agrees_with(direct)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 50), st.floats(-1, 1)), min_size=2, max_size=200))
def test_speed_bounded(pairs):
    blocks = [(t, x * t) for t, x in pairs]
    e = speed_from_blocks(blocks, min_blocks=2, g=1.0)
    assert abs(e.value) <= 1.0 + 1e-12 and e.stderr >= 0
