import json
import math
import os

import numpy as np
import pytest

from panelmix import cli
from panelmix.association import read_trajectory_csv
from panelmix.diagnostics import autocorrelations, batch_means_se, diagnose, read_trace
from panelmix.simgen import read_oracle_csv, read_score_csv

FIT_CONFIG = """\
H: 4
Q: 2
Q_mu: 2
Q_eta: 2
kappa_grid_size: 5
burnin: 10
iterations: 20
thin: 10
"""


def run(argv):
    assert cli.main(argv) == 0


def simulate(tmp_path, name="sim", case=1, n=30, seed=7, oracle_m=300):
    out = tmp_path / name
    run(["simulate", "--case", str(case), "--n", str(n), "--seed", str(seed),
         "--out", str(out), "--oracle-m", str(oracle_m)])
    return out


def test_simulate_outputs_and_manifest(tmp_path):
    out = simulate(tmp_path)
    names = sorted(p.name for p in out.iterdir())
    assert names == ["dgp.json", "manifest.json", "observations.csv", "oracle.csv",
                     "schema.yaml", "subjects.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 7
    oracle = read_oracle_csv(out / "oracle.csv")
    assert {r["subpop"] for r in oracle} == {"all", "x=0", "x=1"}


def test_simulate_is_deterministic(tmp_path):
    out1 = simulate(tmp_path, "a")
    out2 = simulate(tmp_path, "b")
    for name in ("subjects.csv", "observations.csv", "schema.yaml", "oracle.csv",
                 "dgp.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_simulate_requires_seed(tmp_path, monkeypatch):
    monkeypatch.delenv("MSD_SEED", raising=False)
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--case", "1", "--n", "10", "--out", str(tmp_path / "x")])


def test_simulate_rejects_invalid_case(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--case", "4", "--n", "10", "--seed", "1",
                  "--out", str(tmp_path / "x")])


def test_fit_parallel_jobs_match_serial(tmp_path):
    data = simulate(tmp_path, "data")
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(FIT_CONFIG)
    serial = tmp_path / "serial"
    par = tmp_path / "par"
    run(["fit", "--data", str(data), "--config", str(cfg), "--seed", "11",
         "--chains", "2", "--out", str(serial)])
    run(["fit", "--data", str(data), "--config", str(cfg), "--seed", "11",
         "--chains", "2", "--jobs", "2", "--out", str(par)])
    for name in ("draws_chain1.bin", "draws_chain2.bin", "trace_chain1.csv",
                 "trace_chain2.csv"):
        assert (serial / name).read_bytes() == (par / name).read_bytes()


def test_env_seed_fallback_and_flag_priority(tmp_path, monkeypatch):
    monkeypatch.setenv("MSD_SEED", "7")
    out_env = simulate_without_seed(tmp_path, "env")
    out_flag = simulate(tmp_path, "flag", seed=7)
    assert (out_env / "subjects.csv").read_bytes() == (out_flag / "subjects.csv").read_bytes()


def simulate_without_seed(tmp_path, name, case=1, n=30, oracle_m=300):
    out = tmp_path / name
    run(["simulate", "--case", str(case), "--n", str(n), "--out", str(out),
         "--oracle-m", str(oracle_m)])
    return out


def test_manifest_collision_refused(tmp_path):
    out = simulate(tmp_path, "x")
    with pytest.raises(SystemExit):
        cli.main(["simulate", "--case", "1", "--n", "30", "--seed", "7",
                  "--out", str(out), "--oracle-m", "300"])
    run(["simulate", "--case", "1", "--n", "30", "--seed", "7",
         "--out", str(out), "--oracle-m", "300", "--force"])


def fit(tmp_path, data_dir, name="fit", seed=11, chains=1):
    out = tmp_path / name
    cfg = tmp_path / f"{name}-config.yaml"
    cfg.write_text(FIT_CONFIG)
    run(["fit", "--data", str(data_dir), "--config", str(cfg), "--seed", str(seed),
         "--chains", str(chains), "--out", str(out)])
    return out


def test_fit_gamma_score_diagnose_pipeline(tmp_path):
    data = simulate(tmp_path, "data")
    out = fit(tmp_path, data, chains=2)
    assert (out / "draws_chain1.bin").exists()
    assert (out / "draws_chain2.bin").exists()
    assert (out / "draws_chain1.bin").read_bytes() != (out / "draws_chain2.bin").read_bytes()

    gamma_dir = tmp_path / "gamma"
    run(["gamma", "--draws", str(out / "draws_chain1.bin"), "--R", "60",
         "--seed", "3", "--subpop", "x=1", "--out", str(gamma_dir)])
    rows = read_trajectory_csv(gamma_dir / "gamma.csv")
    assert rows and all(r["subpop"] == "x=1" for r in rows)
    assert len(rows) == 12 * 9

    score_dir = tmp_path / "score"
    run(["score", "--estimate", str(gamma_dir / "gamma.csv"),
         "--oracle", str(data / "oracle.csv"), "--out", str(score_dir)])
    score = read_score_csv(score_dir / "mae.csv")
    times = [r["time"] for r in score]
    assert "average" in times

    diag_dir = tmp_path / "diag"
    run(["diagnose", "--trace", str(out / "trace_chain1.csv"), "--out", str(diag_dir)])
    report = json.loads((diag_dir / "diagnostics.json").read_text())
    assert set(report["params"]) == {"alpha", "kappa_mu", "kappa_xi", "n_occupied", "loglik"}
    entry = report["params"]["alpha"]
    assert set(entry) == {"n_draws", "mean", "running_means", "autocorrelations"}
    assert entry["n_draws"] == 30
    assert len(entry["autocorrelations"]) == 50


def test_refit_reproduces_outputs_byte_for_byte(tmp_path):
    data = simulate(tmp_path, "data")
    out1 = fit(tmp_path, data, "fit1")
    out2 = fit(tmp_path, data, "fit2")
    assert (out1 / "draws_chain1.bin").read_bytes() == (out2 / "draws_chain1.bin").read_bytes()
    assert (out1 / "trace_chain1.csv").read_bytes() == (out2 / "trace_chain1.csv").read_bytes()


def test_gamma_determinism_and_weight_modes(tmp_path):
    data = simulate(tmp_path, "data", case=3, n=30, oracle_m=200)
    out = fit(tmp_path, data)
    g1 = tmp_path / "g1"
    g2 = tmp_path / "g2"
    gu = tmp_path / "gu"
    base = ["gamma", "--draws", str(out / "draws_chain1.bin"), "--R", "50", "--seed", "5"]
    run(base + ["--out", str(g1)])
    run(base + ["--out", str(g2)])
    assert (g1 / "gamma.csv").read_bytes() == (g2 / "gamma.csv").read_bytes()
    run(base + ["--out", str(gu), "--weights", "unadjusted"])
    assert (g1 / "gamma.csv").read_bytes() != (gu / "gamma.csv").read_bytes()


def test_gamma_rejects_bad_subpop(tmp_path):
    data = simulate(tmp_path, "data")
    out = fit(tmp_path, data)
    with pytest.raises(SystemExit):
        cli.main(["gamma", "--draws", str(out / "draws_chain1.bin"), "--R", "50",
                  "--seed", "5", "--subpop", "x=9", "--out", str(tmp_path / "bad")])


def test_score_requires_overlapping_keys(tmp_path):
    data1 = simulate(tmp_path, "d1", case=1)
    out = fit(tmp_path, data1)
    gamma_dir = tmp_path / "g"
    run(["gamma", "--draws", str(out / "draws_chain1.bin"), "--R", "50",
         "--seed", "5", "--subpop", "x=1", "--out", str(gamma_dir)])
    # oracle restricted to a different subpopulation label
    oracle = read_oracle_csv(data1 / "oracle.csv")
    import csv

    with open(tmp_path / "oracle_x0.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "time", "subpop", "gamma"])
        for r in oracle:
            if r["subpop"] == "x=0" and not math.isnan(r["gamma"]):
                w.writerow([r["pair"], repr(r["time"]), r["subpop"], repr(r["gamma"])])
    with pytest.raises(SystemExit):
        cli.main(["score", "--estimate", str(gamma_dir / "gamma.csv"),
                  "--oracle", str(tmp_path / "oracle_x0.csv"),
                  "--out", str(tmp_path / "s")])


def test_diagnose_iid_and_ar1_traces(tmp_path):
    rng = np.random.default_rng(0)
    n = 10_000
    iid = rng.standard_normal(n)
    rho = 0.9
    ar = np.empty(n)
    ar[0] = 0.0
    for i in range(1, n):
        ar[i] = rho * ar[i - 1] + math.sqrt(1 - rho**2) * rng.standard_normal()
    path = tmp_path / "trace.csv"
    with open(path, "w") as fh:
        fh.write("iter,param,value\n")
        for i in range(n):
            fh.write(f"{i+1},iid,{float(iid[i])!r}\n")
            fh.write(f"{i+1},ar1,{float(ar[i])!r}\n")
    series = read_trace(path)
    acf_iid = autocorrelations(series["iid"], 5)
    assert abs(acf_iid[0]) < 3 / math.sqrt(n)
    acf_ar = autocorrelations(series["ar1"], 5)
    assert abs(acf_ar[0] - rho) < 0.05
    report = diagnose(series)
    assert report["params"]["ar1"]["n_draws"] == n


def test_diagnose_golden_schema(tmp_path):
    path = tmp_path / "trace.csv"
    with open(path, "w") as fh:
        fh.write("iter,param,value\n")
        for i in range(40):
            fh.write(f"{i+1},alpha,{float(i % 5)!r}\n")
    out1 = tmp_path / "d1"
    out2 = tmp_path / "d2"
    run(["diagnose", "--trace", str(path), "--out", str(out1)])
    run(["diagnose", "--trace", str(path), "--out", str(out2)])
    assert (out1 / "diagnostics.json").read_bytes() == (out2 / "diagnostics.json").read_bytes()
    report = json.loads((out1 / "diagnostics.json").read_text())
    assert list(report) == ["params"]


def test_diagnose_rejects_empty_trace(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("iter,param,value\n")
    with pytest.raises(SystemExit):
        cli.main(["diagnose", "--trace", str(path), "--out", str(tmp_path / "d")])


def test_batch_means_se_reasonable():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(30_000)
    se = batch_means_se(x)
    assert 0.5 / math.sqrt(x.size) < se < 2.0 / math.sqrt(x.size)
