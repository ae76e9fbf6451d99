"""Exact and Monte Carlo cross-checks: conductances, hitting and escape
probabilities, reversibility of the environment chain, BRW extremes.

Conductances of the truncated tree are built from the product of
``Q(parent(u), u) = P(parent(u), u) / P(parent(u), parent(parent(u)))`` down
the path.  At the root the parent move is the phantom loop, so
``P(root, parent(root)) = p_beta(0)``; the overall normalisation (the phantom
edge itself has conductance 1) cancels in every ratio.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .distributions import EdgeLaw, brw_speed
from .environment import (Environment, Vertex, _index_to_path, _path_atoms, _path_keys,
                          level_marks, level_s_values)
from .estimators import Estimate, replica_mean
from .rng import SeedSchedule
from .walk import (_advance, Params, p_beta, transition_distribution)

NETWORK_GUARD = 10**6
BRW_GUARD = 10**7
KERNEL_RTOL = 1e-10


# --- network view ---------------------------------------------------------


def vertex_index(v: Vertex, arity: int) -> int:
    j = 0
    for c in v.path:
        j = j * arity + c
    return j


@dataclass
class NetworkView:
    """Truncated subtree of depth ``D`` with per-level arrays.

    Index ``k`` of ``marks``, ``s`` and ``cond`` refers to level ``k``; vertices
    within a level are in lexicographic path order.  ``cond[k][j]`` is
    ``C(parent(v), v)`` for the ``j``-th vertex ``v`` of level ``k`` (``cond[0]``
    is the phantom edge at the root).  ``loop[k]`` holds the self-loop
    conductances for levels ``0 .. D-1``.
    """

    env: Environment
    params: Params
    depth: int
    marks: list[np.ndarray]
    s: list[np.ndarray]
    cond: list[np.ndarray]
    loop: list[np.ndarray]

    @property
    def arity(self) -> int:
        return self.env.arity

    def index(self, v: Vertex) -> int:
        if v.level > self.depth:
            raise ValueError(f"vertex at level {v.level} lies below the truncation depth {self.depth}")
        return vertex_index(v, self.arity)

    def edge_conductance(self, v: Vertex) -> float:
        """``C(parent(v), v)``, symmetric in its two endpoints."""
        return float(self.cond[v.level][self.index(v)])

    def total_conductance(self, v: Vertex) -> float:
        """``C(v)``, including the parent edge, child edges and the loop."""
        if v.level >= self.depth:
            raise ValueError("children of the deepest level are truncated")
        j = self.index(v)
        a = self.arity
        return float(self.cond[v.level][j] + self.cond[v.level + 1][j * a:(j + 1) * a].sum()
                     + self.loop[v.level][j])

    def kernel_row(self, v: Vertex) -> np.ndarray:
        """``C(v, w) / C(v)`` for children in index order, then parent, then the loop."""
        j = self.index(v)
        a = self.arity
        row = np.concatenate([self.cond[v.level + 1][j * a:(j + 1) * a],
                              [self.cond[v.level][j], self.loop[v.level][j]]])
        return row / self.total_conductance(v)


def conductances(env: Environment, params: Params, depth: int, check: bool = True,
                 n_row_checks: int = 64) -> NetworkView:
    """Build conductances on the depth-``depth`` subtree by the product formula."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if env.d != params.d or env.law != params.law:
        raise ValueError("environment and params disagree on d or law")
    if env.arity**depth > NETWORK_GUARD:
        raise ValueError(f"(d-1)^D = {env.arity ** depth} exceeds the guard {NETWORK_GUARD}")
    a = env.arity
    marks = [np.zeros(1)] + level_marks(env, depth)
    s = [np.zeros(1)]
    for k in range(1, depth + 1):
        s.append(np.repeat(s[k - 1], a) + marks[k])
    p_up = [np.array([float(p_beta(params, 0.0))])]  # P(v, parent(v)) per level
    for k in range(1, depth + 1):
        p_up.append(np.asarray(p_beta(params, -marks[k]), dtype=float))
    cond = [np.ones(1)]
    for k in range(1, depth + 1):
        q = np.asarray(p_beta(params, marks[k]), dtype=float) / np.repeat(p_up[k - 1], a)
        cond.append(np.repeat(cond[k - 1], a) * q)
    loop = []
    for k in range(depth):
        p_child = np.asarray(p_beta(params, marks[k + 1]), dtype=float).reshape(-1, a).sum(axis=1)
        hold = 1.0 - p_child - p_up[k]
        loop.append(cond[k] * np.maximum(hold, 0.0) / p_up[k])
    net = NetworkView(env, params, depth, marks, s, cond, loop)
    if check:
        check_kernel_equivalence(net, n_row_checks)
    return net


def check_kernel_equivalence(net: NetworkView, n_row_checks: int = 64, rtol: float = KERNEL_RTOL):
    """Assert ``C(v, w) / C(v) = P(v, w)`` at every non-leaf vertex of the view."""
    params, a = net.params, net.arity
    worst = 0.0
    for k in range(net.depth):
        total = net.cond[k] + net.cond[k + 1].reshape(-1, a).sum(axis=1) + net.loop[k]
        child = net.cond[k + 1] / np.repeat(total, a)
        want = np.asarray(p_beta(params, net.marks[k + 1]), dtype=float)
        worst = max(worst, float(np.max(np.abs(child / want - 1.0))))
        up = net.cond[k] / total
        up_want = np.asarray(p_beta(params, -net.marks[k]), dtype=float) if k else \
            np.array([float(p_beta(params, 0.0))])
        worst = max(worst, float(np.max(np.abs(up / up_want - 1.0))))
    if worst > rtol:
        raise AssertionError(f"conductance ratios differ from the kernel by {worst:.3e}")
    # an independent check against full transition rows on a few vertices
    rng = np.random.default_rng(net.env.seed & 0xFFFFFFFF)
    for _ in range(n_row_checks):
        k = int(rng.integers(0, net.depth))
        j = int(rng.integers(0, a**k))
        v = Vertex(_index_to_path(j, k, a))
        row = transition_distribution(net.env, params, v)
        want = np.array([m[2] for m in row.moves] + [row.hold])
        got = net.kernel_row(v)
        if np.max(np.abs(got - want)) > rtol * max(1.0, float(np.max(want))):
            raise AssertionError(f"kernel row mismatch at {v}")


# --- conductance identities ----------------------------------------------


@dataclass(frozen=True)
class RatioCheck:
    n_pairs: int
    max_identity_error: float
    sandwich_holds: bool
    c: float


def sandwich_constant(params: Params) -> float:
    """``c`` with ``c <= h(e^{gamma x}) / h(e^{gamma y}) <= 1/c`` for all marks ``x, y``.

    Over ``t = e^{gamma x}`` in ``[e^{-a}, e^{a}]`` with ``a = (beta0 + |beta|) g``
    the range of ``h`` is ``[h(e^{-a}), h(e^{a})]`` and, by ``h(x) = x h(1/x)``,
    ``h(e^{-a}) / h(e^{a}) = e^{-a}``.
    """
    return math.exp(-(params.law.beta0 + abs(params.beta)) * params.law.ess_sup)


def conductance_ratio_formula(params: Params, x_v: float, x_u: float, s_pv: float,
                              s_pu: float) -> float:
    """``C(pv, v) / C(pu, u)`` from the marks of ``v, u`` and ``S`` at their parents."""
    g = params.gamma
    return float(params.h.of_exp(g * x_v) / params.h.of_exp(g * x_u) * math.exp(g * (s_pv - s_pu)))


def random_ancestor_pairs(net: NetworkView, n_pairs: int, rng: np.random.Generator):
    """Pairs ``(u, v)`` of non-root vertices with ``u`` an ancestor of (or equal to) ``v``."""
    a = net.arity
    out = []
    for _ in range(n_pairs):
        kv = int(rng.integers(1, net.depth + 1))
        jv = int(rng.integers(0, a**kv))
        ku = int(rng.integers(1, kv + 1))
        ju = jv // a ** (kv - ku)
        out.append(((ku, ju), (kv, jv)))
    return out


def check_conductance_ratios(net: NetworkView, n_pairs: int = 1000, seed: int = 0) -> RatioCheck:
    """Compare network ratios with the closed form and the exponential sandwich."""
    rng = np.random.default_rng(seed)
    a = net.arity
    c = sandwich_constant(net.params)
    worst, ok = 0.0, True
    for (ku, ju), (kv, jv) in random_ancestor_pairs(net, n_pairs, rng):
        got = net.cond[kv][jv] / net.cond[ku][ju]
        s_pv = net.s[kv - 1][jv // a]
        s_pu = net.s[ku - 1][ju // a]
        want = conductance_ratio_formula(net.params, net.marks[kv][jv], net.marks[ku][ju], s_pv, s_pu)
        worst = max(worst, abs(got / want - 1.0))
        scale = math.exp(net.params.gamma * (s_pv - s_pu))
        slack = 1e-12 * scale
        ok &= c * scale - slack <= got <= scale / c + slack
    return RatioCheck(n_pairs, worst, bool(ok), c)


# --- hitting probabilities -----------------------------------------------


def _series(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(np.isinf(b), a, a * b / (a + b))
    return np.where((a == 0) | (b == 0), 0.0, out)


def _check_target(net: NetworkView, v: Vertex, L: int):
    if v.is_root:
        raise ValueError("v must not be the root")
    if not v.level < L <= net.depth:
        raise ValueError(f"need |v| < L <= D (|v| = {v.level}, L = {L}, D = {net.depth})")


def _subtree_cond(net: NetworkView, v: Vertex, L: int) -> list[np.ndarray]:
    """Edge conductances of the subtree of ``v``, level by level down to ``L``."""
    a = net.arity
    j = net.index(v)
    out = []
    for m in range(v.level + 1, L + 1):
        w = a ** (m - v.level)
        out.append(net.cond[m][j * w:(j + 1) * w].copy())
    return out


def _effective(v_cond: float, sub: list[np.ndarray], arity: int) -> float:
    ceff = np.full(sub[-1].size, np.inf)
    for layer in reversed(sub):
        ceff = _series(layer, ceff).reshape(-1, arity).sum(axis=1)
    c = float(ceff[0])
    return c / (c + v_cond)


def hitting_probability(net: NetworkView, v: Vertex, L: int, probe: Vertex | None = None) -> float:
    """Quenched ``P^v(T_L < T_parent(v))`` by effective-conductance reduction.

    With ``probe = u`` (a level-``L`` descendant of ``v``) every conductance off
    the path from ``v`` to ``u`` is zeroed, giving ``P^v(T_u < T_parent(v))``.
    """
    _check_target(net, v, L)
    sub = _subtree_cond(net, v, L)
    if probe is not None:
        if probe.level != L or not v.is_ancestor_of(probe):
            raise ValueError("probe must be a level-L descendant of v")
        a = net.arity
        rel = probe.path[v.level:]
        for depth, layer in enumerate(sub, start=1):
            keep = vertex_index(Vertex(rel[:depth]), a)
            mask = np.zeros(layer.size, dtype=bool)
            mask[keep] = True
            layer[~mask] = 0.0
    return _effective(net.edge_conductance(v), sub, net.arity)


def series_hitting_probability(net: NetworkView, v: Vertex, u: Vertex) -> float:
    """``(sum_{v <= w <= u} C(pv, v) / C(pw, w))^{-1}`` for a single path."""
    if not v.is_ancestor_of(u) or v.is_root:
        raise ValueError("need a non-root v that is an ancestor of u")
    cv = net.edge_conductance(v)
    return 1.0 / math.fsum(cv / net.edge_conductance(Vertex(u.path[:k]))
                           for k in range(v.level, u.level + 1))


def best_path_bound(net: NetworkView, v: Vertex, L: int) -> float:
    """``max_u P^v(T_u < T_parent(v))`` over level-``L`` descendants ``u``."""
    _check_target(net, v, L)
    a = net.arity
    sub = _subtree_cond(net, v, L)
    r = np.zeros(1)
    for layer in sub:
        r = np.repeat(r, a) + 1.0 / layer
    cv = net.edge_conductance(v)
    return float(1.0 / (1.0 + cv * np.min(r)))


def dense_hitting_probability(env: Environment, params: Params, v: Vertex, L: int) -> float:
    """Same quantity by solving the harmonic equations built from kernel rows."""
    if v.is_root or not v.level < L:
        raise ValueError("need a non-root v with |v| < L")
    a = env.arity
    interior = [v]
    frontier = [v]
    for _ in range(v.level + 1, L):
        frontier = [w.child(c) for w in frontier for c in range(a)]
        interior.extend(frontier)
    pos = {w.path: i for i, w in enumerate(interior)}
    n = len(interior)
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    parent = v.parent().path
    for i, w in enumerate(interior):
        row = transition_distribution(env, params, w)
        A[i, i] = 1.0 - row.hold
        for y, _x, prob in row.moves:
            if y.path == parent:
                continue
            if y.level == L:
                rhs[i] += prob
            else:
                A[i, pos[y.path]] -= prob
    return float(np.linalg.solve(A, rhs)[0])


# --- Monte Carlo exits ----------------------------------------------------


@njit(cache=True, nogil=True)
def _first_exits(seeds, walk_keys, path, cdf, values, acc_fwd, acc_back, acc_loop, d,
                 low, high, max_steps, chunk):
    """Levels at exit, deepest levels reached and step counts for independent walks from ``path``."""
    n = walk_keys.size
    exit_level = np.empty(n, np.int64)
    max_level = np.empty(n, np.int64)
    steps = np.empty(n, np.int64)
    start = path.size
    cap = high + 2
    out_level = np.empty(chunk, np.int64)
    out_s = np.empty(chunk, np.float64)
    out_move = np.empty(chunk, np.int8)
    for i in range(n):
        kv = _path_keys(seeds[i], path)
        av = _path_atoms(kv, cdf)
        keys = np.zeros(cap, np.uint64)
        atoms = np.zeros(cap, np.int64)
        prefix = np.zeros(cap, np.float64)
        pth = np.zeros(cap, np.int64)
        keys[: start + 1] = kv
        for k in range(start):
            atoms[k + 1] = av[k]
            prefix[k + 1] = prefix[k] + values[av[k]]
            pth[k + 1] = path[k]
        level = start
        top = start
        t = 0
        while t < max_steps and low < level < high:
            m = min(chunk, max_steps - t)
            keys, atoms, prefix, pth, level, done = _advance(
                keys, atoms, prefix, pth, level, t, m, walk_keys[i], cdf, values,
                acc_fwd, acc_back, acc_loop, d, low, high, out_level, out_s, out_move)
            for q in range(done):
                if out_level[q] > top:
                    top = out_level[q]
            t += done
        exit_level[i] = level
        max_level[i] = top
        steps[i] = t
    return exit_level, max_level, steps


@dataclass(frozen=True)
class ExitSample:
    exit_level: np.ndarray
    max_level: np.ndarray
    steps: np.ndarray
    censored: int


def sample_exits(params: Params, v: Vertex, depth: int, n_walks: int, schedule,
                 env: Environment | None = None, max_steps: int = 10**6) -> ExitSample:
    """Walks from ``v`` stopped at ``parent(v)`` or ``depth`` levels below ``v``.

    With ``env`` the environment is fixed (quenched); otherwise every walk
    gets its own environment (annealed).
    """
    if v.is_root:
        raise ValueError("v must not be the root")
    rng = schedule.aux_rng(0)
    walk_keys = rng.integers(0, 2**64, size=n_walks, dtype=np.uint64)
    if env is None:
        seeds = rng.integers(0, 2**64, size=n_walks, dtype=np.uint64)
    else:
        if env.law != params.law or env.d != params.d:
            raise ValueError("environment and params disagree on d or law")
        seeds = np.full(n_walks, env.seed, dtype=np.uint64)
    acc_fwd, acc_back, acc_loop = params.acceptance_tables()
    low, high = v.level - 1, v.level + depth
    ex, top, steps = _first_exits(seeds, walk_keys, np.asarray(v.path, dtype=np.int64),
                                  params.law.cdf, np.asarray(params.law.values), acc_fwd,
                                  acc_back, acc_loop, params.d, low, high, max_steps, 1024)
    censored = int(np.sum((ex > low) & (ex < high)))
    return ExitSample(ex, top, steps, censored)


def _binomial(k: int, n: int, method: str, flags=()) -> Estimate:
    p = k / n
    return Estimate(p, math.sqrt(p * (1 - p) / n), n, method, tuple(flags))


def mc_hitting_probability(env: Environment, params: Params, v: Vertex, L: int,
                           n_walks: int = 10**5, schedule=None) -> Estimate:
    """Fraction of walks from ``v`` that reach level ``L`` before ``parent(v)``."""
    schedule = schedule if schedule is not None else SeedSchedule(0)
    ex = sample_exits(params, v, L - v.level, n_walks, schedule, env=env)
    flags = (f"{ex.censored} censored walks",) if ex.censored else ()
    return _binomial(int(np.sum(ex.exit_level >= L)), n_walks, "quenched Monte Carlo", flags)


def escape_probability(params: Params, v: Vertex, depths: Sequence[int], n_samples: int,
                       schedule=None, env: Environment | None = None) -> list[tuple[int, Estimate]]:
    """Estimates of ``P^v(T_{v.level + D} < T_parent(v))`` for each ``D``.

    One walk per sample is run to the deepest ``D``; shallower depths reuse
    the same walks, so the family is exactly nonincreasing in ``D``.
    """
    depths = sorted(set(int(D) for D in depths))
    if not depths or depths[0] < 1:
        raise ValueError("depths must be positive")
    schedule = schedule if schedule is not None else SeedSchedule(0)
    ex = sample_exits(params, v, depths[-1], n_samples, schedule, env=env)
    method = "annealed Monte Carlo" if env is None else "quenched Monte Carlo"
    flags = (f"{ex.censored} censored walks",) if ex.censored else ()
    return [(D, _binomial(int(np.sum(ex.max_level >= v.level + D)), n_samples, method, flags))
            for D in depths]


def srw_escape_probability(d: int, depth: int) -> float:
    """Gambler's ruin for the level of simple random walk on the tree (up ``(d-1)/d``, down ``1/d``)."""
    r = 1.0 / (d - 1)
    return (1.0 - r) / (1.0 - r ** (depth + 1))


def escape_floor(params: Params, betas: Sequence[float], depth: int, n_samples: int,
                 schedule=None) -> dict[float, Estimate]:
    """The depth-``depth`` escape estimate across a sweep of ``beta``."""
    schedule = schedule if schedule is not None else SeedSchedule(0)
    out = {}
    for i, b in enumerate(betas):
        est = escape_probability(params.with_beta(b), Vertex((0,)), [depth], n_samples,
                                 schedule.child(i))
        out[float(b)] = est[0][1]
    return out


# --- reversibility of the environment chain ------------------------------


@dataclass(frozen=True)
class OneStepSample:
    """Radius-1 environments before (``a``) and after (``b``) one step.

    Row ``i`` of ``a`` holds the ``d`` outward marks at the walker; ``b`` at the
    next position, with the mark back towards the previous vertex first.
    ``x`` is ``S_1 - S_0``; ``moved`` is False for holds.
    """

    a: np.ndarray
    b: np.ndarray
    x: np.ndarray
    moved: np.ndarray


def sample_one_step(params: Params, n: int, rng: np.random.Generator) -> OneStepSample:
    """Pairs ``(omega_0, omega_1)`` with ``omega_0`` drawn from the i.i.d. mark law."""
    law = params.law
    vals = np.asarray(law.values)
    d = params.d
    a = vals[np.searchsorted(law.cdf, rng.random((n, d)), side="right").clip(max=vals.size - 1)]
    slot = rng.integers(0, d, size=n)
    x_prop = a[np.arange(n), slot]
    moved = rng.random(n) < np.asarray(params.h.of_exp(params.gamma * x_prop))
    fresh = vals[np.searchsorted(law.cdf, rng.random((n, d - 1)), side="right").clip(max=vals.size - 1)]
    b_moved = np.column_stack([-x_prop, fresh])
    # order the unordered neighbour set canonically so F only sees the multiset
    b = np.where(moved[:, None], b_moved, a)
    x = np.where(moved, x_prop, 0.0)
    return OneStepSample(np.sort(a, axis=1), np.sort(b, axis=1), x, moved)


Functional = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def functional_family(law: EdgeLaw) -> dict[str, Functional]:
    """Fixed family of two-time functionals ``F(a, b, x)``.

    ``F(omega_1, omega_0)`` is evaluated as ``F(b, a, -x)``.
    """
    fam: dict[str, Functional] = {
        "symmetric sum": lambda a, b, x: a.sum(1) + b.sum(1),
        "increment": lambda a, b, x: x,
        "increment x local sum": lambda a, b, x: x * a.sum(1),
        "local sum": lambda a, b, x: a.sum(1),
        "local sum^2 x next sum": lambda a, b, x: a.sum(1) ** 2 * b.sum(1),
        "hold x local max": lambda a, b, x: (x == 0) * a.max(1),
        "local max x next min": lambda a, b, x: a.max(1) * b.min(1),
    }
    vals = sorted(set(law.values) | {0.0})
    top = sorted(set(law.values))
    for s in sorted(set(vals) | {-v for v in vals}):
        for m in top:
            fam[f"bin increment={s:g}, local max={m:g}"] = (
                lambda a, b, x, s=s, m=m: ((x == s) & (a.max(1) == m)).astype(float))
    return fam


@dataclass(frozen=True)
class FunctionalResult:
    name: str
    mean_diff: float
    stderr: float

    @property
    def z(self) -> float:
        return 0.0 if self.stderr == 0 else self.mean_diff / self.stderr

    def passes(self, k: float = 3.0) -> bool:
        return abs(self.mean_diff) <= k * self.stderr if self.stderr > 0 else self.mean_diff == 0


@dataclass
class ReversibilityReport:
    n_samples: int
    results: list[FunctionalResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passes() for r in self.results)


def reversibility_test(params: Params, n_samples: int = 10**6, seed: int = 0,
                       batch: int = 250_000) -> ReversibilityReport:
    """``E[F(omega_0, omega_1)] - E[F(omega_1, omega_0)]`` for the fixed family."""
    if params.beta != 0:
        raise ValueError("the environment chain is reversible only at beta = 0")
    rng = np.random.default_rng(seed)
    fam = functional_family(params.law)
    sums = {k: 0.0 for k in fam}
    sq = {k: 0.0 for k in fam}
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        smp = sample_one_step(params, m, rng)
        for name, F in fam.items():
            diff = F(smp.a, smp.b, smp.x) - F(smp.b, smp.a, -smp.x)
            sums[name] += math.fsum(diff)
            sq[name] += float(np.dot(diff, diff))
        done += m
    rep = ReversibilityReport(n_samples)
    for name in fam:
        mean = sums[name] / n_samples
        var = max(sq[name] / n_samples - mean**2, 0.0)
        rep.results.append(FunctionalResult(name, mean, math.sqrt(var / (n_samples - 1))))
    return rep


# --- branching random walk extremes --------------------------------------


def empirical_brw_speed(law: EdgeLaw, d: int, n: int, seeds: Sequence[int],
                        direction: str = "max") -> Estimate:
    """Mean over environments of ``max`` (or ``min``) of ``S`` over level ``n``, divided by ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if (d - 1) ** n > BRW_GUARD:
        raise ValueError(f"(d-1)^n = {(d - 1) ** n} exceeds the guard {BRW_GUARD}")
    pick = {"max": np.max, "min": np.min}[direction]
    vals = [float(pick(level_s_values(Environment(s, law, d), n))) / n for s in seeds]
    return replica_mean(vals, f"level-{n} enumeration")


def _expected_max(vals: np.ndarray, probs: np.ndarray, m: int) -> float:
    F = np.cumsum(probs)
    F[-1] = 1.0
    Fm = np.concatenate([[0.0], F[:-1]])
    return float(np.dot(vals, F**m - Fm**m))


def expected_level1_extreme(law: EdgeLaw, d: int, direction: str = "max") -> float:
    """``E[max]`` (or ``min``) of ``d - 1`` i.i.d. marks via order statistics."""
    vals = np.asarray(law.values)
    probs = np.asarray(law.probs)
    if direction == "max":
        return _expected_max(vals, probs, d - 1)
    if direction == "min":
        return -_expected_max(-vals[::-1], probs[::-1], d - 1)
    raise ValueError("direction must be 'max' or 'min'")


def enumerate_level1_extreme(law: EdgeLaw, d: int, direction: str = "max") -> float:
    """The same expectation by summing over all ``len(atoms)^(d-1)`` outcomes."""
    pick = max if direction == "max" else min
    total = []
    for combo in itertools.product(law.atoms, repeat=d - 1):
        p = math.prod(q for _, q in combo)
        total.append(p * pick(x for x, _ in combo))
    return math.fsum(total)


@dataclass(frozen=True)
class BRWComparison:
    n: int
    empirical: Estimate
    predicted: float

    @property
    def relative_gap(self) -> float:
        return abs(self.empirical.value - self.predicted) / abs(self.predicted)


def compare_brw_speed(law: EdgeLaw, d: int, n: int, seeds: Sequence[int],
                      direction: str = "max") -> BRWComparison:
    return BRWComparison(n, empirical_brw_speed(law, d, n, seeds, direction),
                         brw_speed(law, d, direction))
