import json
import subprocess
import sys
from dataclasses import replace

import pytest

from wncs.cli import main
from wncs.config import default_scenario, save_scenario


def test_run_writes_csv_and_summary(tmp_path):
    assert main(["run", "--seed", "0", "--steps", "20", "--trials", "3", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "run.csv").read_text().splitlines()
    assert len(rows) == 21
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["optimization"]["feasible"] is True
    assert summary["trials"] == 3 and summary["seed"] == 0


def test_run_byte_identical_for_same_seed(tmp_path):
    args = ["run", "--seed", "4", "--steps", "30", "--trials", "5", "--out"]
    assert main(args + [str(tmp_path / "a")]) == 0
    assert main(args + [str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "run.csv").read_bytes() == (tmp_path / "b" / "run.csv").read_bytes()


def test_optimize_report(tmp_path):
    out = tmp_path / "opt.json"
    assert main(["optimize", "--seed", "0", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert {"best", "j_best", "feasible", "iterations"} <= set(report)
    # the report is accepted back as a fixed candidate
    assert main(["run", "--candidate", str(out), "--steps", "5", "--trials", "2",
                 "--out", str(tmp_path / "run")]) == 0
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["candidate"] == report["best"]
    assert "optimization" not in summary


def test_invalid_inputs_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"r": 0}))
    assert main(["optimize", "--config", str(bad)]) == 2
    assert main(["sweep", "--param", "r", "--values", "4.5", "--steps", "5",
                 "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--param", "rho", "--values", "x", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as info:
        main(["run", "--steps", "0", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_infeasible_exit_3(tmp_path):
    cfg = tmp_path / "tight.json"
    sc = default_scenario(rho=0.9)
    save_scenario(cfg, sc.params, sc.plant, replace(sc.de, n_m=20))
    assert main(["run", "--config", str(cfg), "--steps", "5", "--trials", "2",
                 "--out", str(tmp_path / "strict")]) == 3
    assert not (tmp_path / "strict" / "run.csv").exists()
    assert main(["run", "--config", str(cfg), "--steps", "5", "--trials", "2",
                 "--out", str(tmp_path / "forced"), "--allow-infeasible"]) == 0
    assert (tmp_path / "forced" / "run.csv").exists()


def test_sweep_cli(tmp_path):
    code = main(["sweep", "--param", "d_c_max", "--values", "0.1,0.2", "--steps", "10",
                 "--trials", "2", "--seed", "0", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "d_c_max_0.1.csv").exists() and (tmp_path / "d_c_max_0.2.csv").exists()


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "wncs.cli", "run", "--steps", "5", "--trials", "2",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
