import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metrotree import diagnostics as dg
from metrotree.distributions import make_shifted_binomial, make_two_point
from metrotree.environment import ROOT, Environment, Vertex
from metrotree.rng import SeedSchedule
from metrotree.walk import Params, transition_distribution

LAW = make_two_point(0.25)
P0 = Params(3, 0.0, "metropolis", LAW)


def test_root_ratios_reproduce_kernel():
    env = Environment(2, LAW, 3)
    for beta in (0.0, 0.4, -0.7):
        params = P0.with_beta(beta)
        net = dg.conductances(env, params, 1)
        row = transition_distribution(env, params, ROOT)
        want = [m[2] for m in row.moves] + [row.hold]
        assert np.allclose(net.kernel_row(ROOT), want, rtol=1e-12, atol=0)


def test_guard():
    with pytest.raises(ValueError):
        dg.conductances(Environment(0, LAW, 3), P0, 21)
    with pytest.raises(ValueError):
        dg.conductances(Environment(0, LAW, 4), P0, 2)


def test_kernel_equivalence_detects_corruption():
    net = dg.conductances(Environment(1, LAW, 3), P0, 4)
    net.cond[3][0] *= 1.01
    with pytest.raises(AssertionError):
        dg.check_kernel_equivalence(net)


def test_conductance_ratio_identity_and_sandwich():
    for h in ("metropolis", "barker"):
        for beta in (0.0, 0.3, -0.5):
            params = Params(3, beta, h, LAW)
            net = dg.conductances(Environment(9, LAW, 3), params, 10, n_row_checks=8)
            rc = dg.check_conductance_ratios(net, 1000, seed=1)
            assert rc.max_identity_error <= 1e-10
            assert rc.sandwich_holds


def test_as_printed_ratio_differs():
    # the variant with S(u) in place of S(parent(u)) does not reproduce the network
    params = P0.with_beta(0.2)
    net = dg.conductances(Environment(9, LAW, 3), params, 6)
    v, u = Vertex((0, 1, 1, 0)), Vertex((0, 1))
    got = net.edge_conductance(v) / net.edge_conductance(u)
    s_u = net.s[2][dg.vertex_index(u, 2)]
    s_pv = net.s[3][dg.vertex_index(v.parent(), 2)]
    x_v, x_u = net.marks[4][dg.vertex_index(v, 2)], net.marks[2][dg.vertex_index(u, 2)]
    printed = (params.h.of_exp(params.gamma * x_v) / params.h.of_exp(params.gamma * x_u)
               * math.exp(params.gamma * (s_pv - s_u)))
    assert abs(got / printed - 1) > 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_recursion_matches_dense(seed):
    law = make_shifted_binomial(2, 0.3) if seed % 2 else LAW
    params = Params(3, (seed - 10) / 10, "barker" if seed % 3 == 0 else "metropolis", law)
    env = Environment(seed, law, 3)
    net = dg.conductances(env, params, 3)
    for path in ((0,), (1,), (1, 0)):
        v = Vertex(path)
        assert dg.hitting_probability(net, v, 3) == pytest.approx(
            dg.dense_hitting_probability(env, params, v, 3), abs=1e-10)


def test_probe_mode_is_series_formula_and_rayleigh():
    env = Environment(4, LAW, 4)
    net = dg.conductances(env, Params(4, 0.2, "metropolis", LAW), 5)
    v = Vertex((2,))
    full = dg.hitting_probability(net, v, 5)
    for u in (Vertex((2, 0, 0, 0, 0)), Vertex((2, 1, 2, 0, 1)), Vertex((2, 2, 2, 2, 2))):
        probe = dg.hitting_probability(net, v, 5, probe=u)
        assert probe == pytest.approx(dg.series_hitting_probability(net, v, u), abs=1e-13)
        assert probe <= full
    assert dg.best_path_bound(net, v, 5) <= full


def test_hitting_errors():
    net = dg.conductances(Environment(4, LAW, 3), P0, 3)
    with pytest.raises(ValueError):
        dg.hitting_probability(net, ROOT, 3)
    with pytest.raises(ValueError):
        dg.hitting_probability(net, Vertex((0,)), 4)
    with pytest.raises(ValueError):
        dg.hitting_probability(net, Vertex((0, 1)), 2)


def test_monte_carlo_hitting():
    env = Environment(31, LAW, 3)
    net = dg.conductances(env, P0, 4)
    v = Vertex((1,))
    exact = dg.hitting_probability(net, v, 4)
    mc = dg.mc_hitting_probability(env, P0, v, 4, 10**5, SeedSchedule(2))
    assert abs(mc.value - exact) <= 3 * math.sqrt(exact * (1 - exact) / 10**5)


def test_srw_point():
    for d in (3, 4):
        law = make_two_point(0.25)
        params = Params(d, -law.beta0, "metropolis", law)
        net = dg.conductances(Environment(1, law, d), params, 5)
        for D in (1, 2, 4):
            exact = dg.hitting_probability(net, Vertex((0,)), 1 + D)
            assert exact == pytest.approx(dg.srw_escape_probability(d, D), abs=1e-13)
        assert dg.srw_escape_probability(d, 200) == pytest.approx((d - 2) / (d - 1), abs=1e-15)
        esc = dg.escape_probability(params, Vertex((0,)), [1, 5, 50], 40000, SeedSchedule(d))
        for D, e in esc:
            assert abs(e.value - dg.srw_escape_probability(d, D)) <= 3 * e.stderr


def test_escape_monotone_and_positive():
    esc = dg.escape_probability(P0, Vertex((0,)), [50, 1, 2, 5, 10], 5000, SeedSchedule(1))
    vals = [e.value for _, e in esc]
    assert [D for D, _ in esc] == [1, 2, 5, 10, 50]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    floor = dg.escape_floor(P0, [-2.0, -1.0, 0.0, 1.0, 2.0], 50, 3000, SeedSchedule(2))
    assert min(e.value for e in floor.values()) > 0.05


def test_quenched_escape_uses_fixed_environment():
    env = Environment(3, LAW, 3)
    a = dg.escape_probability(P0, Vertex((0,)), [5], 2000, SeedSchedule(1), env=env)
    b = dg.escape_probability(P0, Vertex((0,)), [5], 2000, SeedSchedule(1), env=env)
    assert a == b
    with pytest.raises(ValueError):
        dg.escape_probability(P0, ROOT, [5], 10)


def test_reversibility_family():
    rep = dg.reversibility_test(P0, 200000, seed=3)
    by = {r.name: r for r in rep.results}
    assert by["symmetric sum"].mean_diff == 0 and by["symmetric sum"].stderr == 0
    assert rep.passed
    with pytest.raises(ValueError):
        dg.reversibility_test(P0.with_beta(0.1), 10)


def test_reversibility_detects_broken_tilt():
    # at beta != 0 the pair law is not symmetric; force the check past the guard
    params = P0.with_beta(1.5)
    rng = np.random.default_rng(0)
    smp = dg.sample_one_step(params, 400000, rng)
    diff = 2 * smp.x
    assert abs(diff.mean()) > 5 * diff.std() / math.sqrt(diff.size)


def test_level1_oracles():
    for law, d in ((LAW, 3), (make_shifted_binomial(3, 0.3), 4), (make_two_point(0.1), 5)):
        for direction in ("max", "min"):
            assert dg.expected_level1_extreme(law, d, direction) == pytest.approx(
                dg.enumerate_level1_extreme(law, d, direction), abs=1e-12)
    emp = dg.empirical_brw_speed(LAW, 3, 1, range(20000))
    assert abs(emp.value - dg.expected_level1_extreme(LAW, 3)) <= 3 * emp.stderr


def test_brw_trend_and_guard():
    seeds = range(30)
    vals = [dg.empirical_brw_speed(LAW, 3, n, seeds).value for n in (2, 6, 12)]
    assert vals[0] < vals[1] < vals[2] < dg.brw_speed(LAW, 3)
    with pytest.raises(ValueError):
        dg.empirical_brw_speed(LAW, 3, 24, [0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.floats(-1.0, 1.0), st.sampled_from(["metropolis", "barker"]))
def test_conductance_symmetry_and_positivity(seed, beta, h):
    params = Params(3, beta, h, LAW)
    net = dg.conductances(Environment(seed, LAW, 3), params, 4, n_row_checks=4)
    assert all(np.all(c > 0) for c in net.cond)
    assert all(np.all(c >= 0) for c in net.loop)
    # C(v, w) = C(w, v): the child-side and parent-side constructions agree
    a = net.arity
    for k in range(1, 4):
        pv = np.asarray(net.params.h.of_exp(-params.gamma * net.marks[k])) / 3
        from_child = net.cond[k] / pv
        total = net.cond[k] + net.cond[k + 1].reshape(-1, a).sum(1) + net.loop[k]
        assert np.allclose(from_child, total, rtol=1e-12)
