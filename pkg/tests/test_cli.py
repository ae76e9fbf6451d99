import json

import pytest
import yaml

from metrotree.cli import ConfigError, ExperimentConfig, load_config, main


def write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg) if name.endswith(".yaml") else json.dumps(cfg))
    return str(p)


SMALL = {"law": {"type": "two_point", "p": 0.25}, "d": 3, "n_steps": 20000, "n_replicas": 4,
         "seed": 11, "subsample_stride": 1000}


def test_validate_pass(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, SMALL)]) == 0
    out = capsys.readouterr().out
    assert "beta0 = 1.09861228867" in out and "PASS" in out


def test_validate_xm_fail(tmp_path, capsys):
    cfg = dict(SMALL, law={"type": "two_point", "p": 0.05})
    assert main(["validate", "--config", write(tmp_path, cfg)]) == 1
    assert "FAIL: (XM)" in capsys.readouterr().out


def test_validate_xr_fail(tmp_path, capsys):
    cfg = dict(SMALL, law={"type": "atoms", "atoms": [[-1, 0.4], [2, 0.6]]})
    assert main(["validate", "--config", write(tmp_path, cfg, "c.json")]) == 1


@pytest.mark.parametrize("law", [{"type": "two_pt", "p": 0.25}, {"type": "two_point"},
                                 {"type": "two_point", "p": "abc"}, "two_point",
                                 {"type": "atoms", "atoms": [[1, 2, 3]]}])
def test_malformed_law_exit_2(tmp_path, law):
    assert main(["validate", "--config", write(tmp_path, dict(SMALL, law=law))]) == 2


def test_unparseable_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("law: [unclosed")
    assert main(["validate", "--config", str(p)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2


def test_config_hash_ignores_threads_and_out():
    a = ExperimentConfig.from_dict(dict(SMALL, threads=1, out="x"))
    b = ExperimentConfig.from_dict(dict(SMALL, threads=4, out="y"))
    c = ExperimentConfig.from_dict(dict(SMALL, seed=12))
    assert a.sha256 == b.sha256 != c.sha256
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(SMALL, bogus=1))


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, SMALL), {"seed": 99, "threads": None})
    assert cfg.seed == 99 and cfg.threads == 1


def test_simulate_deterministic_across_threads(tmp_path):
    path = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", path, "--out", str(a), "--threads", "1"]) == 0
    assert main(["simulate", "--config", path, "--out", str(b), "--threads", "3"]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) >= 4 + SMALL["n_replicas"]
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    blocks = (a / "blocks.csv").read_text().splitlines()
    assert blocks[0].startswith("# config_sha256: ") and blocks[1] == "replica,dtau,ds"
    assert (a / "trajectories" / "replica_00000.csv").read_text().splitlines()[1] == "step,level,S"
    assert (a / "tail.csv").read_text().splitlines()[1] == "t,survival_prob"
    summary = json.loads((a / "summary.json").read_text())
    sp = summary["speed"]
    assert abs(sp["value"]) < 3 * sp["stderr"]


def test_simulate_insufficient_is_graceful(tmp_path, capsys):
    cfg = dict(SMALL, n_steps=5, n_replicas=1)
    assert main(["simulate", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    assert "insufficient regenerations" in capsys.readouterr().out
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["insufficient"]


def test_einstein_synthetic(tmp_path):
    cfg = dict(SMALL, einstein={"synthetic": True, "synthetic_sigma2": 0.37})
    out = tmp_path / "e"
    assert main(["einstein", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "einstein_report.json").read_text())
    assert rep["ratio"] == pytest.approx(1.0, abs=1e-12)
    lines = (out / "einstein.csv").read_text().splitlines()
    assert lines[1] == "beta,v_hat,stderr,n_blocks" and len(lines) == 2 + 6
    assert (out / "einstein_plot.csv").read_text().splitlines()[1] == "beta,v_hat,stderr,beta_sigma2_half"


def test_einstein_without_baseline(tmp_path, capsys):
    cfg = dict(SMALL, beta_grid=[0.1, -0.1], einstein={"synthetic": True})
    assert main(["einstein", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "e")]) == 1
    assert "sigma2 baseline required" in capsys.readouterr().out


def test_diagnostics_small(tmp_path):
    cfg = dict(SMALL, diagnostics={"n_trees": 3, "mc_walks": 20000, "ratio_depth": 6, "ratio_pairs": 100,
                                   "escape_depths": [1, 5, 20], "escape_samples": 2000,
                                   "reversibility_samples": 50000, "brw_n": 8, "brw_seeds": 5,
                                   "brw_tolerance": 1.0})
    out = tmp_path / "d"
    code = main(["diagnostics", "--config", write(tmp_path, cfg), "--out", str(out)])
    rep = json.loads((out / "diagnostics.json").read_text())
    assert code == (0 if all(c["pass"] for k, c in rep.items() if k != "config_sha256") else 1)
    assert rep["hitting_recursion_vs_dense"]["pass"]
    assert rep["conductance_ratio"]["pass"]
    assert (out / "escape.csv").read_text().splitlines()[1] == "D,estimate,stderr"
