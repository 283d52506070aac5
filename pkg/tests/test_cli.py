import json

import numpy as np
import pytest

from rssgh.cli import main

CONFIG = """seed = 11
[model]
family = "LN"
submodel = "RS-SGH"
structure = "ICAR"
hazard_covariates = ["age_std", "dep2", "dep3", "dep4", "dep5", "sex"]
time_covariates = ["age_std"]
[sampler]
chains = 2
iterations = 200
warmup = 100
[output]
max_draws = 200
[paths]
patients = "sim/patients.csv"
[simulate]
n = 200
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "c.toml").write_text(CONFIG)
    assert main(["simulate", "--config", str(d / "c.toml"), "--out", str(d / "sim")]) == 0
    assert main(["fit", "--config", str(d / "c.toml"), "--out", str(d / "run")]) == 0
    return d


def test_simulate_and_fit_outputs(workdir):
    assert (workdir / "sim" / "patients.csv").exists()
    truth = json.loads((workdir / "sim" / "truth.json").read_text())
    assert len(truth["u"]) == 9
    run = workdir / "run"
    for name in ("draws_chain1.csv", "draws_chain2.csv", "diagnostics.json", "run.json", "summary.csv",
                 "hyperparameters.csv", "loo.json", "trace.png"):
        assert (run / name).exists(), name
    header = (run / "draws_chain1.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["mu", "sigma"] and "lp__" in header
    assert len((run / "draws_chain1.csv").read_text().splitlines()) == 101


def test_diagnose_exit_code(workdir, capsys):
    code = main(["diagnose", str(workdir / "run")])
    out = capsys.readouterr().out
    assert "divergences per chain" in out
    assert code in (0, 4)


def test_report_commands(workdir):
    run = workdir / "run"
    assert main(["netsurv", str(run), "--level", "region", "--t", "1,3"]) == 0
    rows = (run / "netsurv_region_at.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 9
    assert (run / "netsurv_region.png").exists()
    assert main(["netsurv", str(run), "--level", "stratified", "--by", "sex"]) == 0
    assert (run / "netsurv_stratified_sex.csv").exists()
    assert main(["netsurv", str(run), "--level", "stratified"]) == 2
    assert main(["exceed", str(run), "--threshold", "0"]) == 0
    probs = [float(r.split(",")[3]) for r in (run / "exceedance_u.csv").read_text().splitlines()[1:]]
    assert len(probs) == 9 and all(0 <= p <= 1 for p in probs)


def test_compare_single_and_duplicate(workdir):
    run = str(workdir / "run")
    assert main(["compare", run, "--out", str(workdir / "cmp1")]) == 0
    d = json.loads((workdir / "cmp1" / "comparison.json").read_text())
    assert d["models"][0]["elpd_diff"] == 0.0
    assert main(["compare", run, run, "--out", str(workdir / "cmp2")]) == 0
    d = json.loads((workdir / "cmp2" / "comparison.json").read_text())
    assert [m["elpd_diff"] for m in d["models"]] == [0.0, 0.0]
    assert (workdir / "cmp2" / "comparison.png").exists()


def test_same_seed_same_outputs(workdir, tmp_path):
    (tmp_path / "c.toml").write_text(CONFIG.replace('"sim/patients.csv"', f'"{workdir}/sim/patients.csv"'))
    assert main(["simulate", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "patients.csv").read_bytes() == (workdir / "sim" / "patients.csv").read_bytes()
    assert main(["fit", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path / "run")]) == 0
    for name in ("draws_chain1.csv", "draws_chain2.csv", "unconstrained_chain1.csv", "summary.csv"):
        assert (tmp_path / "run" / name).read_bytes() == (workdir / "run" / name).read_bytes(), name


def test_error_exit_codes(tmp_path, capsys):
    (tmp_path / "bad.toml").write_text("[model]\nfamily = 'LN'\nnope = 1\n")
    assert main(["fit", "--config", str(tmp_path / "bad.toml")]) == 2
    assert "nope" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "o")]) == 2
    assert main(["netsurv", str(tmp_path)]) == 2
    assert not (tmp_path / "o").exists()


def test_nonconverged_run_returns_four(workdir, tmp_path):
    import shutil

    run = tmp_path / "run"
    shutil.copytree(workdir / "run", run)
    lines = (run / "draws_chain2.csv").read_text().splitlines()
    header = lines[0].split(",")
    j = header.index("mu")
    shifted = [lines[0]]
    for line in lines[1:]:
        cells = line.split(",")
        cells[j] = repr(float(cells[j]) + 5.0)
        shifted.append(",".join(cells))
    (run / "draws_chain2.csv").write_text("\n".join(shifted) + "\n")
    assert main(["diagnose", str(run)]) == 4
    assert np.isfinite(float(lines[1].split(",")[j]))
