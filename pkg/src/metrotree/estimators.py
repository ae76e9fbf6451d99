"""Speed and variance estimators, the weak-ER experiment and the Einstein fit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .regeneration import (DEFAULT_BUFFER, BlockSet, InsufficientRegenerations,
                           RegenerationDetector, as_blocks)
from .rng import SeedSchedule, beta_tag
from .walk import EndpointRecorder, Params, p_beta, run_replicas

MIN_BLOCKS = 30
K_SE = 3.0
RESIDUAL_SLACK = 1e-15


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_units: int
    method: str
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be nonnegative")
        if self.n_units < 1:
            raise ValueError("an estimate needs at least one unit")

    def interval(self, k: float = K_SE) -> tuple[float, float]:
        return self.value - k * self.stderr, self.value + k * self.stderr

    def excludes_zero(self, k: float = K_SE) -> bool:
        lo, hi = self.interval(k)
        return lo > 0 or hi < 0

    def agrees_with(self, other: "Estimate", k: float = K_SE) -> bool:
        return abs(self.value - other.value) <= k * math.hypot(self.stderr, other.stderr)

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_units": self.n_units,
                "method": self.method, "flags": list(self.flags)}


def ratio_of_means(num: np.ndarray, den: np.ndarray, method: str) -> Estimate:
    """``sum(num) / sum(den)`` with the delta-method standard error for i.i.d. pairs."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    r = math.fsum(num) / math.fsum(den)
    if n < 2:
        return Estimate(r, 0.0, max(n, 1), method)
    resid = num - r * den
    var = float(np.dot(resid, resid)) / (n * (n - 1))
    return Estimate(r, math.sqrt(var) / float(np.mean(den)), n, method)


def _require(b: BlockSet, min_blocks: int):
    if len(b) < min_blocks:
        raise InsufficientRegenerations(
            f"{len(b)} blocks; at least {min_blocks} are needed for a confidence interval")


def speed_from_blocks(blocks, min_blocks: int = MIN_BLOCKS, g: float | None = None) -> Estimate:
    b = as_blocks(blocks)
    _require(b, min_blocks)
    est = ratio_of_means(b.ds, b.dtau, "regeneration-ratio")
    if g is not None and abs(est.value) > g * (1 + 1e-12):
        raise AssertionError(f"|v| = {abs(est.value)} exceeds the speed bound g = {g}")
    return est


def sigma2_from_blocks(blocks, min_blocks: int = MIN_BLOCKS) -> Estimate:
    """``sum(ds^2) / sum(dtau)`` over blocks simulated at ``beta = 0``."""
    b = as_blocks(blocks)
    _require(b, min_blocks)
    est = ratio_of_means(b.ds**2, b.dtau, "regeneration-ratio")
    flags = []
    if est.value <= 0:
        flags.append("degenerate: all block displacements vanish")
    if est.interval()[1] <= 0:
        flags.append("inconsistent: sigma^2 must be strictly positive")
    return Estimate(est.value, est.stderr, est.n_units, est.method, tuple(flags))


# --- simulation drivers ---------------------------------------------------


@dataclass
class SimulationResult:
    params: Params
    n_steps: int
    n_replicas: int
    blocks: BlockSet
    endpoints: np.ndarray  # (n_replicas, len(record_steps))
    record_steps: np.ndarray
    tau1: list
    failures: list[tuple[int, str]] = field(default_factory=list)

    def s_at(self, n: int) -> np.ndarray:
        return self.endpoints[:, int(np.searchsorted(self.record_steps, n))]


def simulate(params: Params, n_steps: int, n_replicas: int, schedule,
             record_steps: Sequence[int] = (), buffer_w: int = DEFAULT_BUFFER,
             threads: int = 1, detect: bool = True) -> SimulationResult:
    """Run replicas, collecting regeneration blocks and ``S_n`` at ``record_steps``."""
    steps = sorted(set(int(s) for s in record_steps) | {n_steps})

    def observers(i):
        obs = [EndpointRecorder(steps)]
        if detect:
            obs.append(RegenerationDetector(buffer_w, replica=i))
        return obs

    trajs = run_replicas(params, schedule, n_replicas, n_steps, observers, threads)
    ends = np.array([[t.outputs[0][s] for s in steps] for t in trajs]).reshape(n_replicas, len(steps))
    sets, tau1, failures = [], [], []
    if detect:
        for i, t in enumerate(trajs):
            res = t.outputs[1]
            if isinstance(res, InsufficientRegenerations):
                failures.append((i, str(res)))
                tau1.append(None)
            else:
                sets.append(res.blocks)
                tau1.append((res.tau1, res.s_tau1))
    return SimulationResult(params, n_steps, n_replicas, BlockSet.concat(sets), ends,
                            np.asarray(steps), tau1, failures)


def replica_mean(values, method: str) -> Estimate:
    x = np.asarray(values, dtype=float)
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return Estimate(float(np.mean(x)), se, int(x.size), method)


def sigma2_naive(params: Params, n_steps: int, n_replicas: int, schedule=None,
                 threads: int = 1) -> Estimate:
    """Replica mean of ``S_n^2 / n`` under the unperturbed chain."""
    if params.beta != 0:
        raise ValueError("sigma^2 is defined at beta = 0")
    schedule = schedule if schedule is not None else SeedSchedule(0)
    res = simulate(params, n_steps, n_replicas, schedule, threads=threads, detect=False)
    return sigma2_naive_from(res)


def sigma2_naive_from(res: SimulationResult) -> Estimate:
    s = res.s_at(res.n_steps)
    return replica_mean(s**2 / res.n_steps, "replica-mean S_n^2/n")


def one_step_moment(params: Params, k: int) -> float:
    """Exact annealed ``E[S_1^k]`` from the root (the phantom loop carries mark 0)."""
    law = params.law
    return (params.d - 1) * law.expect(lambda x: float(p_beta(params, x)) * x**k)


DEFAULT_STEP_BUDGET = 5 * 10**9


def weak_er_estimate(params: Params, n_replicas: int, schedule=None, threads: int = 1,
                     step_budget: int = DEFAULT_STEP_BUDGET) -> Estimate:
    """Replica mean of ``beta * S_{floor(beta^-2)}`` under the perturbed chain."""
    beta = params.beta
    if beta == 0:
        raise ValueError("the weak Einstein relation needs beta != 0")
    n = int(math.floor(beta**-2))
    need = n * n_replicas
    if need > step_budget:
        raise ValueError(f"weak-ER run needs {need} steps, above the budget {step_budget}")
    schedule = schedule if schedule is not None else SeedSchedule(0)
    res = simulate(params, n, n_replicas, schedule, threads=threads, detect=False)
    return replica_mean(beta * res.s_at(n), f"replica-mean beta*S_{n}")


# --- Einstein relation ----------------------------------------------------


@dataclass(frozen=True)
class EinsteinBudget:
    """Step allocation for the Einstein experiment.

    Grid point ``beta`` gets ``base_steps * (ref_beta / |beta|)**2`` steps in
    total, which keeps the relative precision of ``v_beta / beta`` constant
    across the grid.  Totals are split into replicas of at most
    ``max_steps_per_replica`` steps.
    """

    sigma2_steps: int = 2 * 10**8
    base_steps: int = 2 * 10**7
    ref_beta: float = 0.1
    max_steps_per_replica: int = 10**7
    min_replicas: int = 4
    buffer_w: int = DEFAULT_BUFFER
    min_blocks: int = MIN_BLOCKS

    def total_steps(self, beta: float) -> int:
        if beta == 0:
            return int(self.sigma2_steps)
        return int(math.ceil(self.base_steps * (self.ref_beta / abs(beta)) ** 2))

    def plan(self, beta: float) -> tuple[int, int]:
        total = self.total_steps(beta)
        reps = max(self.min_replicas, math.ceil(total / self.max_steps_per_replica))
        return reps, int(math.ceil(total / reps))


@dataclass
class GridPoint:
    beta: float
    estimate: Estimate | None
    n_blocks: int
    n_steps_total: int
    failure: str | None = None


@dataclass
class ERReport:
    sigma2_hat: Estimate
    slope_hat: Estimate
    ratio: float
    ratio_stderr: float
    grid: list[GridPoint]
    sigma2_blocks: int

    @property
    def beta_grid(self) -> list[tuple[float, Estimate]]:
        return [(p.beta, p.estimate) for p in self.grid if p.estimate is not None]

    @property
    def failures(self) -> list[tuple[float, str]]:
        return [(p.beta, p.failure) for p in self.grid if p.failure]

    def residuals(self) -> dict[float, float]:
        half = self.sigma2_hat.value / 2
        return {b: abs(e.value - b * half) for b, e in self.beta_grid}

    def residuals_shrink(self) -> bool:
        """Residuals decrease with ``|beta|`` on each side of the grid."""
        res = self.residuals()
        for sign in (1, -1):
            side = sorted((abs(b), r) for b, r in res.items() if b * sign > 0)
            # ties within rounding count as shrinking (e.g. an exactly linear response)
            if any(r_small > r_big + RESIDUAL_SLACK for (_, r_small), (_, r_big) in zip(side, side[1:])):
                return False
        return True

    def ratio_within(self, lo: float = 0.85, hi: float = 1.15) -> bool:
        return lo <= self.ratio <= hi


def fit_through_origin(betas, estimates: Sequence[Estimate]) -> Estimate:
    """Weighted least squares of ``v`` on ``beta`` without intercept, weights ``1/se^2``."""
    b = np.asarray(betas, dtype=float)
    v = np.array([e.value for e in estimates])
    se = np.array([e.stderr for e in estimates])
    if np.any(se == 0):
        w = np.ones_like(b)
        sxx = float(np.sum(b * b))
        slope = float(np.sum(b * v)) / sxx
        return Estimate(slope, 0.0, b.size, "ols-through-origin")
    w = 1.0 / se**2
    sxx = float(np.sum(w * b * b))
    slope = float(np.sum(w * b * v)) / sxx
    return Estimate(slope, 1.0 / math.sqrt(sxx), b.size, "wls-through-origin")


BlockSource = Callable[[Params], tuple[BlockSet, int]]


def simulated_blocks(schedule, budget: EinsteinBudget, threads: int = 1) -> BlockSource:
    def source(params: Params) -> tuple[BlockSet, int]:
        reps, steps = budget.plan(params.beta)
        res = simulate(params, steps, reps, schedule.child(*beta_tag(params.beta)),
                       buffer_w=budget.buffer_w, threads=threads)
        return res.blocks, reps * steps
    return source


def einstein_report(params: Params, beta_grid: Sequence[float], budget: EinsteinBudget | None = None,
                    schedule=None, threads: int = 1, block_source: BlockSource | None = None) -> ERReport:
    """Compare the fitted slope of ``v_beta`` at 0 with ``sigma^2 / 2``.

    ``beta_grid`` must contain 0 (the variance baseline).  ``block_source``
    replaces the simulation, e.g. with synthetic blocks of known moments.
    """
    grid = sorted(set(float(b) for b in beta_grid))
    if 0.0 not in grid:
        raise ValueError("sigma2 baseline required: beta_grid must include 0")
    budget = budget or EinsteinBudget()
    schedule = schedule if schedule is not None else SeedSchedule(0)
    source = block_source or simulated_blocks(schedule, budget, threads)
    g = params.law.ess_sup

    base_blocks, _ = source(params.with_beta(0.0))
    sigma2 = sigma2_from_blocks(base_blocks, budget.min_blocks)
    points = []
    for beta in grid:
        if beta == 0:
            continue
        blocks, n_total = source(params.with_beta(beta))
        try:
            est = speed_from_blocks(blocks, budget.min_blocks, g=g)
            points.append(GridPoint(beta, est, len(blocks), n_total))
        except InsufficientRegenerations as exc:
            points.append(GridPoint(beta, None, len(blocks), n_total, str(exc)))
    ok = [p for p in points if p.estimate is not None]
    if not ok:
        raise InsufficientRegenerations("no grid point produced enough blocks")
    slope = fit_through_origin([p.beta for p in ok], [p.estimate for p in ok])
    ratio = 2.0 * slope.value / sigma2.value
    ratio_se = abs(ratio) * math.hypot(slope.stderr / slope.value if slope.value else 0.0,
                                       sigma2.stderr / sigma2.value)
    return ERReport(sigma2, slope, ratio, ratio_se, points, len(base_blocks))


def synthetic_blocks(sigma2: float, n_blocks: int = 200) -> BlockSource:
    """Blocks whose estimators return exactly ``v_beta = beta sigma2 / 2`` and ``sigma2``."""
    dt = np.tile(np.array([1, 2, 3], dtype=np.int64), n_blocks // 3 + 1)[:n_blocks]

    def source(params: Params) -> tuple[BlockSet, int]:
        if params.beta == 0:
            sign = np.where(np.arange(n_blocks) % 2 == 0, 1.0, -1.0)
            ds = sign * np.sqrt(sigma2 * dt)
        else:
            ds = params.beta * sigma2 / 2 * dt
        return BlockSet(dt, ds), int(dt.sum())
    return source
