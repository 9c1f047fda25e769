import json
import os
import subprocess
import sys

import numpy as np
import pytest

from tbsbm.cli import main as cli_main
from tbsbm.driver import (ExperimentConfig, Thresholds, classify_phase,
                          config_header, load_config, run_point,
                          run_phase_diagram, run_sweep)
from tbsbm.observables import ObservableReport


TINY = dict(solver="ed", s=0.5, alpha_z=0.05, alpha_x=0.03, l_z=1, l_x=1,
            n_ph=4, bias=1e-3, compute_zeta=True)


def tiny_config(**kw):
    merged = {**TINY, **kw}
    return ExperimentConfig(**merged)


def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "solver = \"ed\"\n"
        "s = 0.25\n"
        "alpha_z = 0.02\n"
        "l_z = 2\n"
        "sweep_param = \"alpha_x\"\n"
        "s_values = [0.5, 0.6]\n")
    cfg = load_config(path)
    assert cfg.solver == "ed"
    assert cfg.s == 0.25
    assert cfg.l_z == 2
    assert cfg.s_values == [0.5, 0.6]


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("nonsense = 1\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        load_config(path)


def test_sweep_values_validation():
    cfg = tiny_config(sweep_start=0.1, sweep_stop=0.05, sweep_step=0.01)
    with pytest.raises(ValueError):
        run_sweep(cfg)
    cfg2 = tiny_config(sweep_start=0.0, sweep_stop=0.1, sweep_step=0.0)
    with pytest.raises(ValueError):
        run_sweep(cfg2)


def test_empty_sweep_range_gives_header_only():
    cfg = tiny_config(sweep_param="alpha_x", sweep_start=0.03,
                      sweep_stop=0.03, sweep_step=0.01)
    result = run_sweep(cfg)
    assert len(result.rows) == 1   # single value: start == stop
    table = result.table(cfg)
    assert ObservableReport.csv_header() in table


def test_three_point_ed_sweep_matches_direct_calls():
    cfg = tiny_config(sweep_param="alpha_x", sweep_start=0.02,
                      sweep_stop=0.04, sweep_step=0.01, compute_zeta=False)
    result = run_sweep(cfg)
    assert len(result.rows) == 3
    assert result.ok
    import dataclasses
    for i, value in enumerate(result.values):
        point = dataclasses.replace(cfg, alpha_x=float(value), seed=cfg.seed + i)
        direct = run_point(point)
        assert result.rows[i] == direct.csv_row(param_value=value)


def test_sweep_continues_after_point_failure():
    cfg = tiny_config(sweep_param="bias", sweep_start=-1e-3, sweep_stop=1e-3,
                      sweep_step=1e-3, n_ph=40000)   # dimension cap error
    result = run_sweep(cfg)
    assert not result.ok
    assert all("error" in row for row in result.rows)


def test_classifier_contract():
    thr = Thresholds()
    loc = ObservableReport(energy=-1.0, sigma_z=0.8, sigma_x=0.0, zeta=1.0)
    assert classify_phase(loc, thr, symmetric_line=False) == "Localized"
    del_ = ObservableReport(energy=-1.0, sigma_z=0.0, sigma_x=0.8, zeta=1.0)
    assert classify_phase(del_, thr, symmetric_line=False) == "Delocalized"
    crit = ObservableReport(energy=-1.0, sigma_z=0.0, sigma_x=0.0, zeta=1.0)
    assert classify_phase(crit, thr, symmetric_line=True) == "Critical"
    ambiguous = ObservableReport(energy=-1.0, sigma_z=0.0, sigma_x=0.0, zeta=0.4)
    assert classify_phase(ambiguous, thr, symmetric_line=True) == "Unknown"


def test_single_point_phase_diagram():
    cfg = tiny_config(s_values=[0.5], alpha_values=[0.05],
                      l_z=1, l_x=1, n_ph=4, bias=0.0)
    result = run_phase_diagram(cfg)
    assert len(result.rows) == 1
    row = result.rows[0]
    assert row["label"] in {"Localized", "Delocalized", "Critical", "Unknown"}
    table = result.table(cfg)
    assert "s,alpha,zeta" in table


def test_config_header_embeds_version_and_config():
    cfg = tiny_config(seed=7)
    header = config_header(cfg)
    assert header.startswith("# tbsbm")
    assert "# seed = 7" in header
    assert "# solver = \"ed\"" in header


def run_cli(args, cwd):
    return cli_main(args)


def test_cli_chain_coeffs(tmp_path):
    rc = cli_main(["chain-coeffs", "--out", str(tmp_path),
                   "--set", "l_z=4", "--set", "s=0.5"])
    assert rc == 0
    text = (tmp_path / "chain_coeffs.csv").read_text()
    assert "index,omega,t" in text
    data_lines = [l for l in text.splitlines() if l and not l.startswith("#")][1:]
    assert len(data_lines) == 4


def test_cli_ed_point(tmp_path):
    rc = cli_main(["ed", "--out", str(tmp_path), "--seed", "3",
                   "--set", "l_z=1", "--set", "l_x=1", "--set", "n_ph=4",
                   "--set", "bias=0.001"])
    assert rc == 0
    text = (tmp_path / "ed_point.csv").read_text()
    assert "# seed = 3" in text
    assert ObservableReport.csv_header() in text


def test_cli_sweep_deterministic_bytes(tmp_path):
    args = ["sweep", "--seed", "11",
            "--set", "solver=\"ed\"", "--set", "l_z=1", "--set", "l_x=1",
            "--set", "n_ph=4", "--set", "bias=0.001",
            "--set", "sweep_param=\"alpha_x\"", "--set", "sweep_start=0.02",
            "--set", "sweep_stop=0.04", "--set", "sweep_step=0.01"]
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert cli_main(args + ["--out", str(out1)]) == 0
    assert cli_main(args + ["--out", str(out2)]) == 0
    assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()


def test_cli_sweep_workers_do_not_change_output(tmp_path):
    base = ["sweep", "--seed", "5",
            "--set", "solver=\"ed\"", "--set", "l_z=1", "--set", "l_x=1",
            "--set", "n_ph=3", "--set", "bias=0.001",
            "--set", "sweep_param=\"alpha_x\"", "--set", "sweep_start=0.02",
            "--set", "sweep_stop=0.05", "--set", "sweep_step=0.01"]
    out1 = tmp_path / "serial"
    out2 = tmp_path / "fanout"
    assert cli_main(base + ["--out", str(out1), "--workers", "1"]) == 0
    assert cli_main(base + ["--out", str(out2), "--workers", "3"]) == 0
    t1 = (out1 / "sweep.csv").read_text()
    t2 = (out2 / "sweep.csv").read_text()
    # identical apart from the recorded workers count
    strip = lambda t: [l for l in t.splitlines() if not l.startswith("# workers")]
    assert strip(t1) == strip(t2)


def test_cli_exit_code_on_failed_point(tmp_path):
    rc = cli_main(["sweep", "--out", str(tmp_path),
                   "--set", "solver=\"ed\"", "--set", "n_ph=40000",
                   "--set", "sweep_param=\"alpha_x\"", "--set", "sweep_start=0.01",
                   "--set", "sweep_stop=0.02", "--set", "sweep_step=0.01"])
    assert rc == 1


def test_cli_entry_point_subprocess(tmp_path):
    # the console entry works end to end
    proc = subprocess.run(
        [sys.executable, "-m", "tbsbm.cli", "chain-coeffs", "--out", str(tmp_path),
         "--set", "l_z=2"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "chain_coeffs.csv").exists()


def test_cli_rejects_unknown_override(tmp_path):
    with pytest.raises(SystemExit):
        cli_main(["ed", "--out", str(tmp_path), "--set", "bogus=1"])
