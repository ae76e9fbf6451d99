"""Command-line driver: ``metrotree {validate,simulate,einstein,diagnostics}``.

Every output file carries the SHA-256 of the resolved configuration, so a
result can be traced back to (and regenerated from) the config that made it.
Thread count and output directory are excluded from the hash; they do not
change results.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import diagnostics as dg
from . import estimators as es
from .distributions import EdgeLaw, LawError, binomial_p0, brw_speed, check_xm, law_from_config
from .environment import Environment, Vertex
from .regeneration import DEFAULT_BUFFER, InsufficientRegenerations, block_stats
from .rng import SeedSchedule
from .walk import HFunction, Params, Subsampler, run_replicas

EXIT_OK, EXIT_FAIL, EXIT_PARSE = 0, 1, 2

LAW_KEYS = {
    "two_point": {"p": float},
    "shifted_binomial": {"n": int, "p": float},
    "tilted": {"base_atoms": list, "beta0": float},
    "atoms": {"atoms": list},
}


class ConfigError(ValueError):
    """The configuration cannot be parsed (exit code 2)."""


@dataclass
class EinsteinSettings:
    sigma2_steps: int = 2 * 10**8
    base_steps: int = 2 * 10**7
    ref_beta: float = 0.1
    max_steps_per_replica: int = 10**7
    min_replicas: int = 4
    ratio_lo: float = 0.85
    ratio_hi: float = 1.15
    synthetic: bool = False
    synthetic_sigma2: float = 0.5

    def budget(self, buffer_w: int) -> es.EinsteinBudget:
        return es.EinsteinBudget(self.sigma2_steps, self.base_steps, self.ref_beta,
                                 self.max_steps_per_replica, self.min_replicas, buffer_w)


@dataclass
class DiagnosticSettings:
    depth: int = 3
    n_trees: int = 20
    mc_walks: int = 10**5
    ratio_depth: int = 10
    ratio_pairs: int = 1000
    escape_depths: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50])
    escape_samples: int = 20000
    reversibility_samples: int = 10**6
    brw_n: int = 14
    brw_seeds: int = 50
    brw_tolerance: float = 0.15


@dataclass
class ExperimentConfig:
    law: dict
    d: int = 3
    h: str = "metropolis"
    beta: float = 0.0
    beta_grid: list = field(default_factory=lambda: [0.0, -0.1, -0.05, -0.02, 0.02, 0.05, 0.1])
    n_steps: int = 10**5
    n_replicas: int = 20
    seed: int = 0
    buffer_W: int = DEFAULT_BUFFER
    subsample_stride: int = 1000
    einstein: EinsteinSettings = field(default_factory=EinsteinSettings)
    diagnostics: DiagnosticSettings = field(default_factory=DiagnosticSettings)
    threads: int = 1
    out: str = "results"

    HASH_EXCLUDE = ("threads", "out")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "law" not in raw:
            raise ConfigError("config needs a 'law' section")
        kw = dict(raw)
        kw["law"] = _parse_law(raw["law"])
        for name, typ in (("d", int), ("n_steps", int), ("n_replicas", int), ("seed", int),
                          ("buffer_W", int), ("subsample_stride", int), ("threads", int)):
            if name in kw:
                kw[name] = _coerce(kw[name], typ, name)
        if "beta" in kw:
            kw["beta"] = _coerce(kw["beta"], float, "beta")
        if "beta_grid" in kw:
            if not isinstance(kw["beta_grid"], list):
                raise ConfigError("beta_grid must be a list")
            kw["beta_grid"] = [_coerce(b, float, "beta_grid") for b in kw["beta_grid"]]
        if "h" in kw and kw["h"] not in HFunction.KINDS:
            raise ConfigError(f"h must be one of {HFunction.KINDS}")
        kw["einstein"] = _sub(EinsteinSettings, raw.get("einstein", {}), "einstein")
        kw["diagnostics"] = _sub(DiagnosticSettings, raw.get("diagnostics", {}), "diagnostics")
        cfg = cls(**kw)
        if cfg.d < 3:
            raise ConfigError("d must be >= 3")
        if cfg.n_steps < 1 or cfg.n_replicas < 1:
            raise ConfigError("n_steps and n_replicas must be positive")
        cfg.seed &= 0xFFFFFFFFFFFFFFFF
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def hashed_dict(self) -> dict:
        d = self.to_dict()
        for k in self.HASH_EXCLUDE:
            d.pop(k)
        return d

    @property
    def sha256(self) -> str:
        blob = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def edge_law(self) -> EdgeLaw:
        return law_from_config(self.law)

    def params(self, law: EdgeLaw | None = None) -> Params:
        return Params(self.d, self.beta, HFunction(self.h), law or self.edge_law())

    def schedule(self) -> SeedSchedule:
        return SeedSchedule(self.seed)


def _coerce(value, typ, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be numeric")
    if typ is int:
        if float(value) != int(value):
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    return float(value)


def _sub(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    fields = cls.__dataclass_fields__
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    defaults = cls()
    out = {}
    for k, v in raw.items():
        ref = getattr(defaults, k)
        if isinstance(ref, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{name}.{k} must be a boolean")
            out[k] = v
        elif isinstance(ref, (int, float)):
            out[k] = _coerce(v, type(ref), f"{name}.{k}")
        elif isinstance(ref, list):
            if not isinstance(v, list):
                raise ConfigError(f"{name}.{k} must be a list")
            out[k] = [_coerce(x, int, f"{name}.{k}") for x in v]
        else:
            out[k] = v
    return cls(**out)


def _parse_law(raw) -> dict:
    if not isinstance(raw, dict) or "type" not in raw:
        raise ConfigError("law must be a mapping with a 'type'")
    kind = raw["type"]
    if kind not in LAW_KEYS:
        raise ConfigError(f"unknown law type {kind!r}; expected one of {sorted(LAW_KEYS)}")
    spec = LAW_KEYS[kind]
    extra = set(raw) - set(spec) - {"type"}
    if extra:
        raise ConfigError(f"unexpected keys for law {kind!r}: {sorted(extra)}")
    out = {"type": kind}
    for key, typ in spec.items():
        if key not in raw:
            raise ConfigError(f"law {kind!r} needs '{key}'")
        if typ is list:
            atoms = raw[key]
            if not isinstance(atoms, list) or not atoms:
                raise ConfigError(f"law.{key} must be a non-empty list of [value, prob] pairs")
            pairs = []
            for a in atoms:
                if not isinstance(a, (list, tuple)) or len(a) != 2:
                    raise ConfigError(f"law.{key} entries must be [value, prob] pairs")
                pairs.append([_coerce(a[0], float, key), _coerce(a[1], float, key)])
            out[key] = pairs
        else:
            out[key] = _coerce(raw[key], typ, f"law.{key}")
    return out


def load_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    if path is None:
        raw = {"law": {"type": "two_point", "p": 0.25}}
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            raw = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        if raw is None:
            raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return ExperimentConfig.from_dict(raw)


# --- output helpers -------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows, config_hash: str):
    with path.open("w") as fh:
        fh.write(f"# config_sha256: {config_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_json(path: Path, payload: dict, config_hash: str):
    payload = {"config_sha256": config_hash, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, es.Estimate):
        return obj.to_dict()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _metadata(cfg: ExperimentConfig, command: str) -> dict:
    from . import __version__
    return {"command": command, "version": __version__, "config": cfg.hashed_dict()}


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- validate -------------------------------------------------------------


def h_checks(h: HFunction, n: int = 201) -> dict[str, bool]:
    """(H1) range and monotonicity, (H2) a Lipschitz bound, (H3) ``h(x) = x h(1/x)``."""
    x = np.logspace(-8, 8, n)
    y = np.asarray(h(x))
    h1 = bool(np.all((y >= 0) & (y <= 1)) and np.all(np.diff(y) >= 0) and h(0.0) == 0.0
              and abs(float(h(1e16)) - 1.0) < 1e-12)
    lin = np.linspace(0, 50, 5001)
    slopes = np.abs(np.diff(np.asarray(h(lin)))) / np.diff(lin)
    h2 = bool(np.max(slopes) <= 1.0 + 1e-12)
    h3 = bool(np.max(np.abs(y - x * np.asarray(h(1.0 / x)))) <= 1e-12)
    return {"H1": h1, "H2": h2, "H3": h3}


def cmd_validate(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    failures = []
    try:
        law = cfg.edge_law()
    except LawError as exc:
        print(f"FAIL (XR): {exc}", file=out)
        return EXIT_FAIL
    print(f"law: {law.to_config()}", file=out)
    print(f"(XS) g = ess sup |X| = {law.ess_sup:.12g}", file=out)
    print(f"(XR) beta0 = {law.beta0:.12g}", file=out)
    rep = check_xm(law, cfg.d)
    print(f"(XM) min Lambda = {rep.lambda_min:.12g} at beta = {rep.beta_star:.12g}", file=out)
    if cfg.law["type"] in ("two_point", "shifted_binomial"):
        n = cfg.law.get("n", 1)
        print(f"p0(d={cfg.d}, n={n}) = {binomial_p0(cfg.d, n):.10g}", file=out)
    if not rep.satisfies_xm:
        failures.append("(XM)")
    else:
        print(f"BRW max speed = {brw_speed(law, cfg.d, 'max'):.10g}", file=out)
        print(f"BRW min speed = {brw_speed(law, cfg.d, 'min'):.10g}", file=out)
    for name, ok in h_checks(HFunction(cfg.h)).items():
        print(f"({name}) {cfg.h}: {'pass' if ok else 'FAIL'}", file=out)
        if not ok:
            failures.append(f"({name})")
    if failures:
        print("FAIL: " + ", ".join(failures), file=out)
        return EXIT_FAIL
    print("PASS: all assumptions hold", file=out)
    return EXIT_OK


# --- simulate -------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    law = cfg.edge_law()
    params = cfg.params(law)
    h = cfg.sha256
    odir = _outdir(cfg)
    from .regeneration import RegenerationDetector

    def observers(i):
        return [Subsampler(cfg.subsample_stride), RegenerationDetector(cfg.buffer_W, replica=i)]

    trajs = run_replicas(params, cfg.schedule(), cfg.n_replicas, cfg.n_steps, observers, cfg.threads)
    tdir = odir / "trajectories"
    tdir.mkdir(exist_ok=True)
    sets, notes, tau1 = [], [], []
    for i, t in enumerate(trajs):
        rows = t.outputs[0]
        write_csv(tdir / f"replica_{i:05d}.csv", ["step", "level", "S"],
                  ((int(r[0]), int(r[1]), r[2]) for r in rows), h)
        res = t.outputs[1]
        if isinstance(res, InsufficientRegenerations):
            notes.append({"replica": i, "note": str(res)})
        else:
            sets.append(res.blocks)
            tau1.append({"replica": i, "tau1": res.tau1, "S_tau1": res.s_tau1,
                         "max_level": res.max_level})
    blocks = es.BlockSet.concat(sets)
    write_csv(odir / "blocks.csv", ["replica", "dtau", "ds"],
              zip(blocks.replica.tolist(), blocks.dtau.tolist(), blocks.ds.tolist()), h)
    summary: dict[str, Any] = {"n_blocks": len(blocks), "insufficient": notes, "tau1": tau1,
                               "final_S": [t.state.s for t in trajs],
                               "final_level": [t.state.level for t in trajs]}
    if len(blocks):
        st = block_stats(blocks)
        write_csv(odir / "tail.csv", ["t", "survival_prob"], zip(st.tail_t.tolist(),
                                                                 st.tail_survival.tolist()), h)
        summary["block_moments"] = {"mean_dtau": st.mean_dtau, "mean_ds": st.mean_ds,
                                    "mean_ds2": st.mean_ds2, "moment2_dtau": st.moment2_dtau,
                                    "moment4_dtau": st.moment4_dtau}
    try:
        summary["speed"] = es.speed_from_blocks(blocks, g=law.ess_sup).to_dict()
        if cfg.beta == 0:
            summary["sigma2_blocks"] = es.sigma2_from_blocks(blocks).to_dict()
    except InsufficientRegenerations as exc:
        summary["speed"] = None
        notes.append({"replica": None, "note": str(exc)})
    write_json(odir / "summary.json", summary, h)
    write_json(odir / "metadata.json", _metadata(cfg, "simulate"), h)
    print(f"{cfg.n_replicas} replicas, {len(blocks)} blocks -> {odir}", file=out)
    if summary["speed"] is not None:
        sp = summary["speed"]
        print(f"speed = {sp['value']:.6g} +- {sp['stderr']:.3g}", file=out)
    for n in notes:
        print(f"note: replica {n['replica']}: {n['note']}", file=out)
    return EXIT_OK


# --- einstein -------------------------------------------------------------


def cmd_einstein(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    law = cfg.edge_law()
    params = cfg.params(law)
    es_cfg = cfg.einstein
    source = es.synthetic_blocks(es_cfg.synthetic_sigma2) if es_cfg.synthetic else None
    try:
        rep = es.einstein_report(params, cfg.beta_grid, es_cfg.budget(cfg.buffer_W), cfg.schedule(),
                                 cfg.threads, block_source=source)
    except ValueError as exc:
        print(f"error: {exc}", file=out)
        return EXIT_FAIL
    h = cfg.sha256
    odir = _outdir(cfg)
    write_csv(odir / "einstein.csv", ["beta", "v_hat", "stderr", "n_blocks"],
              ((p.beta, p.estimate.value, p.estimate.stderr, p.n_blocks) for p in rep.grid
               if p.estimate is not None), h)
    half = rep.sigma2_hat.value / 2
    write_csv(odir / "einstein_plot.csv", ["beta", "v_hat", "stderr", "beta_sigma2_half"],
              ((b, e.value, e.stderr, b * half) for b, e in rep.beta_grid), h)
    within = rep.ratio_within(es_cfg.ratio_lo, es_cfg.ratio_hi)
    shrink = rep.residuals_shrink()
    write_json(odir / "einstein_report.json", {
        "sigma2_hat": rep.sigma2_hat, "slope": rep.slope_hat, "ratio": rep.ratio,
        "ratio_stderr": rep.ratio_stderr, "sigma2_blocks": rep.sigma2_blocks,
        "failures": [{"beta": b, "reason": r} for b, r in rep.failures],
        "residuals": {repr(b): r for b, r in rep.residuals().items()},
        "ratio_within_tolerance": within, "residuals_shrink": shrink,
        "synthetic": es_cfg.synthetic}, h)
    write_json(odir / "metadata.json", _metadata(cfg, "einstein"), h)
    print(f"sigma2 = {rep.sigma2_hat.value:.6g} +- {rep.sigma2_hat.stderr:.3g}", file=out)
    print(f"slope  = {rep.slope_hat.value:.6g} +- {rep.slope_hat.stderr:.3g}", file=out)
    print(f"ratio  = {rep.ratio:.6g} +- {rep.ratio_stderr:.3g} "
          f"(tolerance [{es_cfg.ratio_lo}, {es_cfg.ratio_hi}])", file=out)
    for b, r in rep.failures:
        print(f"grid point {b}: {r}", file=out)
    ok = within and shrink and not rep.failures
    print("PASS" if ok else "FAIL", file=out)
    return EXIT_OK if ok else EXIT_FAIL


# --- diagnostics ----------------------------------------------------------


def cmd_diagnostics(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    law = cfg.edge_law()
    params = cfg.params(law)
    ds = cfg.diagnostics
    h = cfg.sha256
    odir = _outdir(cfg)
    sched = cfg.schedule()
    checks: dict[str, Any] = {}

    # exact recursion against the dense harmonic solve
    worst = 0.0
    for i in range(ds.n_trees):
        env = Environment(sched.replica_seeds(i)[0], law, cfg.d)
        net = dg.conductances(env, params, ds.depth)
        v = Vertex((int(i % env.arity),))
        worst = max(worst, abs(dg.hitting_probability(net, v, ds.depth)
                               - dg.dense_hitting_probability(env, params, v, ds.depth)))
    checks["hitting_recursion_vs_dense"] = {"max_abs_error": worst, "pass": worst <= 1e-10}

    env = Environment(sched.replica_seeds(0)[0], law, cfg.d)
    net = dg.conductances(env, params, ds.depth)
    v = Vertex((0,))
    exact = dg.hitting_probability(net, v, ds.depth)
    mc = dg.mc_hitting_probability(env, params, v, ds.depth, ds.mc_walks, sched.child(1))
    checks["hitting_monte_carlo"] = {"exact": exact, "estimate": mc,
                                     "pass": abs(mc.value - exact) <= 3 * math.sqrt(
                                         exact * (1 - exact) / ds.mc_walks)}

    rnet = dg.conductances(env, params, ds.ratio_depth, n_row_checks=16)
    rc = dg.check_conductance_ratios(rnet, ds.ratio_pairs, seed=cfg.seed & 0xFFFFFFFF)
    checks["conductance_ratio"] = {"max_rel_error": rc.max_identity_error, "sandwich": rc.sandwich_holds,
                                   "c": rc.c, "pass": rc.max_identity_error <= 1e-10 and rc.sandwich_holds}

    esc = dg.escape_probability(params, Vertex((0,)), ds.escape_depths, ds.escape_samples, sched.child(2))
    write_csv(odir / "escape.csv", ["D", "estimate", "stderr"],
              ((D, e.value, e.stderr) for D, e in esc), h)
    mono = all(b.value <= a.value + 3 * math.hypot(a.stderr, b.stderr)
               for (_, a), (_, b) in zip(esc, esc[1:]))
    checks["escape"] = {"monotone": mono, "deepest": esc[-1][1], "pass": mono and esc[-1][1].value > 0}

    if cfg.beta == 0:
        rev = dg.reversibility_test(params, ds.reversibility_samples, seed=cfg.seed & 0xFFFFFFFF)
        checks["reversibility"] = {"pass": rev.passed, "functionals": [
            {"name": r.name, "mean_diff": r.mean_diff, "stderr": r.stderr} for r in rev.results]}

    seeds = [sched.child(3).replica_seeds(i)[0] for i in range(ds.brw_seeds)]
    brw = dg.compare_brw_speed(law, cfg.d, ds.brw_n, seeds)
    n1 = abs(dg.expected_level1_extreme(law, cfg.d) - dg.enumerate_level1_extreme(law, cfg.d))
    checks["brw_speed"] = {"n": ds.brw_n, "empirical": brw.empirical, "predicted": brw.predicted,
                           "relative_gap": brw.relative_gap, "n1_oracle_error": n1,
                           "pass": brw.relative_gap <= ds.brw_tolerance and n1 <= 1e-12}

    write_json(odir / "diagnostics.json", checks, h)
    write_json(odir / "metadata.json", _metadata(cfg, "diagnostics"), h)
    for name, c in checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'} {name}", file=out)
    return EXIT_OK if all(c["pass"] for c in checks.values()) else EXIT_FAIL


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "einstein": cmd_einstein,
            "diagnostics": cmd_diagnostics}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metrotree", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML or JSON experiment config")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--threads", type=int, help="worker threads")
        s.add_argument("--out", help="output directory")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "threads": args.threads, "out": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        return COMMANDS[args.command](cfg)
    except LawError as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
