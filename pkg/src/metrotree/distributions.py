"""Edge-mark laws, the standing assumptions on them, and BRW speed predictions.

Only finite atomic laws are supported: compact support is then automatic and
the reversibility condition ``E[exp(beta0 X) f(X)] = E[f(-X)]`` becomes the
atomwise identity ``exp(beta0 x) P(x) = P(-x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import comb, logsumexp

SUM_TOL = 1e-12
BETA0_TOL = 1e-9
XM_TOL = 1e-9
BRACKET = (0.0, 50.0)


class LawError(ValueError):
    """An edge law violates (or cannot be shown to satisfy) an assumption."""


@dataclass(frozen=True)
class EdgeLaw:
    """Finite discrete law of the edge mark ``X``.

    ``values`` are sorted increasingly; ``beta0`` is the reversibility tilt
    and ``ess_sup`` is ``max |x|``.
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]
    beta0: float
    origin: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise LawError("atoms and probabilities must be non-empty and aligned")
        vals = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise LawError("atom values must be finite")
        if np.any(np.diff(vals) <= 0):
            raise LawError("atom values must be distinct and sorted")
        if np.any(probs <= 0) or np.any(probs > 1):
            raise LawError("atom probabilities must lie in (0, 1]")
        if abs(probs.sum() - 1.0) > SUM_TOL:
            raise LawError(f"probabilities sum to {probs.sum()!r}, not 1")
        if not self.beta0 > 0:
            raise LawError("beta0 must be strictly positive")
        err = detailed_balance_error(vals, probs, self.beta0)
        if err > SUM_TOL:
            raise LawError(f"atomic (XR) identity fails by {err:.3e}")

    @property
    def ess_sup(self) -> float:
        return float(max(abs(v) for v in self.values))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values, self.probs))

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def laplace(self, beta: float) -> float:
        """``E[exp(beta X)]``."""
        return float(np.dot(self.probs, np.exp(beta * np.asarray(self.values))))

    def expect(self, f) -> float:
        return float(sum(p * f(x) for x, p in zip(self.values, self.probs)))

    def to_config(self) -> dict:
        if self.origin:
            return dict(self.origin)
        return {"type": "atoms", "atoms": [[x, p] for x, p in self.atoms]}


def detailed_balance_error(values, probs, beta0: float) -> float:
    """Max over atoms of ``|exp(beta0 x) P(x) - P(-x)|``; inf if support is not mirrored."""
    lookup = {float(v): float(p) for v, p in zip(values, probs)}
    worst = 0.0
    for x, p in lookup.items():
        mirror = lookup.get(-x if x != 0 else 0.0)
        if mirror is None:
            return math.inf
        worst = max(worst, abs(math.exp(beta0 * x) * p - mirror))
    return worst


def _clean_atoms(atoms: Iterable[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    pairs = [(float(x), float(p)) for x, p in atoms]
    pairs = [(0.0 if x == 0 else x, p) for x, p in pairs if p > 0]
    pairs.sort()
    vals = np.array([x for x, _ in pairs])
    probs = np.array([p for _, p in pairs])
    if len(set(vals.tolist())) != len(vals):
        raise LawError("duplicate atom values")
    return vals, probs


def make_two_point(p: float) -> EdgeLaw:
    """``P(X = 1) = p``, ``P(X = -1) = 1 - p`` with ``beta0 = log((1-p)/p)``."""
    if not 0 < p < 0.5:
        raise LawError(f"two-point law needs 0 < p < 1/2 (got {p}); beta0 would be <= 0")
    return EdgeLaw(
        values=(-1.0, 1.0),
        probs=(1.0 - p, p),
        beta0=math.log((1.0 - p) / p),
        origin={"type": "two_point", "p": p},
    )


def binomial_p0(d: int, n: int) -> float:
    """Threshold below which the shifted binomial law fails (XM) on the ``d``-ary tree."""
    return (1.0 - math.sqrt(1.0 - (d - 1) ** (-2.0 / n))) / 2.0


def make_shifted_binomial(n: int, p: float, d: int | None = None) -> EdgeLaw:
    """Law of ``2Y - n`` with ``Y ~ Binomial(n, p)``.

    Passing ``d`` does not reject ``p <= p0``; :func:`check_xm` reports it.
    """
    if int(n) != n or n < 1:
        raise LawError("n must be a positive integer")
    n = int(n)
    if not 0 < p < 0.5:
        raise LawError(f"shifted binomial needs 0 < p < 1/2 (got {p})")
    ks = np.arange(n + 1)
    probs = comb(n, ks, exact=False) * p**ks * (1.0 - p) ** (n - ks)
    probs = probs / probs.sum()
    origin = {"type": "shifted_binomial", "n": n, "p": p}
    return EdgeLaw(
        values=tuple(float(2 * k - n) for k in ks),
        probs=tuple(float(q) for q in probs),
        beta0=math.log((1.0 - p) / p),
        origin=origin,
    )


def _is_symmetric(vals: np.ndarray, probs: np.ndarray) -> bool:
    return np.array_equal(vals, -vals[::-1]) and np.allclose(probs, probs[::-1], rtol=0, atol=1e-14)


def make_tilted_symmetric(base_atoms, beta0: float) -> EdgeLaw:
    """Tilt a symmetric law by ``exp(-beta0 x / 2)`` and renormalise."""
    vals, probs = _clean_atoms(base_atoms)
    if not beta0 > 0:
        raise LawError("beta0 must be strictly positive")
    if not _is_symmetric(vals, probs):
        raise LawError("base law must be symmetric about 0")
    if np.all(vals == 0):
        raise LawError("point mass at 0: beta0 is not unique")
    w = np.exp(np.log(probs) - 0.5 * beta0 * vals)
    w = w / w.sum()
    return EdgeLaw(
        values=tuple(vals.tolist()),
        probs=tuple(w.tolist()),
        beta0=float(beta0),
        origin={"type": "tilted", "base_atoms": [[float(x), float(q)] for x, q in zip(vals, probs)],
                "beta0": float(beta0)},
    )


def detect_beta0(atoms) -> float:
    """Recover ``beta0`` from an arbitrary atomic law, or raise if none exists."""
    vals, probs = _clean_atoms(atoms)
    if not np.array_equal(vals, -vals[::-1]):
        raise LawError("support is not mirror-symmetric")
    lookup = dict(zip(vals.tolist(), probs.tolist()))
    slopes = [math.log(lookup[-x] / lookup[x]) / x for x in vals.tolist() if x != 0]
    if not slopes:
        raise LawError("point mass at 0: beta0 is not unique")
    if max(slopes) - min(slopes) > BETA0_TOL:
        raise LawError("log(P(-x)/P(x))/x is not constant across atoms")
    beta0 = float(np.mean(slopes))
    if beta0 <= 0:
        raise LawError(f"detected beta0 = {beta0:.6g} is not positive")
    return beta0


def from_atoms(atoms) -> EdgeLaw:
    vals, probs = _clean_atoms(atoms)
    beta0 = detect_beta0(zip(vals, probs))
    # snap probabilities so the atomic identity holds to rounding
    lookup = dict(zip(vals.tolist(), probs.tolist()))
    for x in vals.tolist():
        if x > 0:
            lookup[x] = lookup[-x] * math.exp(-beta0 * x)
    probs = np.array([lookup[x] for x in vals.tolist()])
    probs /= probs.sum()
    return EdgeLaw(tuple(vals.tolist()), tuple(probs.tolist()), beta0,
                   origin={"type": "atoms", "atoms": [[x, p] for x, p in zip(vals.tolist(), probs.tolist())]})


def law_from_config(cfg: dict[str, Any]) -> EdgeLaw:
    kind = cfg.get("type")
    try:
        if kind == "two_point":
            return make_two_point(float(cfg["p"]))
        if kind == "shifted_binomial":
            return make_shifted_binomial(int(cfg["n"]), float(cfg["p"]))
        if kind == "tilted":
            return make_tilted_symmetric(cfg["base_atoms"], float(cfg["beta0"]))
        if kind == "atoms":
            return from_atoms(cfg["atoms"])
    except KeyError as exc:
        raise LawError(f"law config of type {kind!r} is missing {exc}") from None
    raise LawError(f"unknown law type {kind!r}")


def law_to_config(law: EdgeLaw) -> dict:
    return law.to_config()


# --- log-Laplace transform and assumption (XM) ----------------------------


def log_laplace(law: EdgeLaw, beta: float, d: int) -> float:
    """``Lambda(beta) = log E[exp(beta X)] + log(d - 1)``."""
    return _log_laplace(np.asarray(law.values), np.asarray(law.probs), beta, d)


def _log_laplace(vals: np.ndarray, probs: np.ndarray, beta: float, d: int) -> float:
    return float(logsumexp(beta * vals, b=probs)) + math.log(d - 1)


@dataclass(frozen=True)
class LambdaReport:
    beta_star: float
    lambda_min: float
    satisfies_xm: bool


def check_xm(law: EdgeLaw, d: int) -> LambdaReport:
    """Minimise the convex ``Lambda`` over ``beta >= 0`` and test ``min > 0``."""
    if d < 3:
        raise ValueError("d must be >= 3")
    res = minimize_scalar(
        lambda b: log_laplace(law, b, d),
        bounds=BRACKET,
        method="bounded",
        options={"xatol": 1e-10, "maxiter": 1000},
    )
    beta_star = float(res.x)
    lam = log_laplace(law, beta_star, d)
    # the bounded search never evaluates the endpoint itself
    if log_laplace(law, 0.0, d) <= lam:
        beta_star, lam = 0.0, log_laplace(law, 0.0, d)
    return LambdaReport(beta_star=beta_star, lambda_min=lam, satisfies_xm=lam > XM_TOL)


def _max_speed(vals: np.ndarray, probs: np.ndarray, d: int) -> float:
    """``inf_{beta > 0} Lambda(beta) / beta`` for the law given by (vals, probs)."""
    top = vals[-1]
    if (d - 1) * probs[-1] >= 1.0:
        # Lambda(beta)/beta decreases to the top atom as beta -> infinity
        return float(top)
    def f(b):
        return _log_laplace(vals, probs, b, d) / b
    hi = BRACKET[1]
    while True:
        res = minimize_scalar(f, bounds=(1e-12, hi), method="bounded",
                              options={"xatol": 1e-9, "maxiter": 2000})
        if res.x < 0.99 * hi:
            return float(res.fun)
        hi *= 4.0


def brw_speed(law: EdgeLaw, d: int, direction: str = "max") -> float:
    """Linear speed of ``max`` (or ``min``) of ``S`` over level ``n``."""
    if not check_xm(law, d).satisfies_xm:
        raise LawError("(XM) fails: the BRW speed characterisation does not apply")
    vals = np.asarray(law.values)
    probs = np.asarray(law.probs)
    if direction == "max":
        return _max_speed(vals, probs, d)
    if direction == "min":
        return -_max_speed(-vals[::-1], probs[::-1], d)
    raise ValueError("direction must be 'max' or 'min'")
