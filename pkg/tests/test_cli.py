import json

import pytest

from fibrewalk.cli import main
from fibrewalk.pipeline import RunConfig, analyse, run


def _report(tmp_path, *args):
    out = tmp_path / "report.json"
    assert main([*args, "--out", str(out)]) == 0
    return json.loads(out.read_text())


def test_enumerate_tiny(tmp_path, capsys):
    rep = _report(tmp_path, "enumerate", "--data", "tiny3x3")
    assert rep["fiber_size"] == 35 and not rep["overflow"]
    assert 0 < rep["p_values"]["G2"]["exact_p"] <= 1
    assert "|T| = 35" in capsys.readouterr().out


def test_bounds_report(tmp_path):
    rep = _report(tmp_path, "bounds", "--data", "tiny3x3")
    assert rep["free_cells"] == 4 and rep["df"] == 4
    assert all(c["lower"] <= c["observed"] <= c["upper"] for c in rep["cells_detail"])


def test_gfit_then_mcmc_is_deterministic(tmp_path):
    g = tmp_path / "g.json"
    assert main(["gfit", "--data", "tiny3x3", "--imax", "200", "--out", str(g)]) == 0
    args = ["mcmc", "--data", "tiny3x3", "--chains", "3", "--iters", "3000", "--burnin", "300",
            "--g", str(g), "--seed", "5", "--workers", "1"]
    a = _report(tmp_path, *args)
    b = _report(tmp_path, *args)
    a.pop("wall_seconds"), b.pop("wall_seconds")
    assert a == b
    assert a["counters"]["accepted"] + a["counters"]["rejected"] + a["counters"]["failed"] == 9000
    assert a["invariant_failures"] == 0
    exact = _report(tmp_path, "enumerate", "--data", "tiny3x3")["p_values"]["X2"]["exact_p"]
    assert abs(a["p_values"]["X2"]["exact_p"] - exact) < 0.08


def test_parallel_workers_match_serial(tmp_path, monkeypatch):
    args = ["mcmc", "--data", "tiny3x3", "--chains", "2", "--iters", "600", "--burnin", "100", "--imax", "50"]
    serial = _report(tmp_path, *args, "--workers", "1")
    monkeypatch.setenv("FIBREWALK_WORKERS", "2")
    pooled = _report(tmp_path, *args)
    assert serial["p_values"] == pooled["p_values"]
    assert serial["per_chain_p"] == pooled["per_chain_p"]


def test_chain_order_does_not_change_merge():
    from fibrewalk.inference import batch_means_se
    import numpy as np

    rng = np.random.default_rng(0)
    traces = [rng.random(500) < 0.4 for _ in range(4)]
    a = batch_means_se(traces)
    b = batch_means_se(traces[::-1])
    assert a.estimate == pytest.approx(b.estimate) and a.se == pytest.approx(b.se)


def test_sis_report(tmp_path):
    rep = _report(tmp_path, "sis", "--data", "tiny3x3", "--samples", "500", "--target", "uniform")
    assert rep["fiber_size_estimate"]["estimate"] == pytest.approx(35, rel=0.25)


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["bounds", "--data", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  nope")
    assert main(["bounds", "--data", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["mcmc", "--data", "tiny3x3", "--iters", "10", "--burnin", "20"]) == 1


def test_run_config_and_analysis():
    with pytest.raises(ValueError):
        RunConfig("tiny3x3", mode="plot")
    an = analyse("tiny3x3")
    assert an.df == 4 and an.exceeds(an.dataset.table.counts) == {"X2": True, "G2": True}
    assert run(RunConfig("tiny3x3", mode="bounds"))["rank"] == 5
