import json
import subprocess
import sys

import pytest

import gridofo
from gridofo.cli import main
from gridofo.sim import TraceWriter, run_scenario


@pytest.fixture
def fixtures_dir(tmp_path):
    assert main(["fixtures", "--out", str(tmp_path / "fx")]) == 0
    return tmp_path / "fx"


def test_run_writes_trace_and_summary(fixtures_dir, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(fixtures_dir / "two_bus.json"), "--out", str(out)]) == 0
    rows = (out / "trace.csv").read_text().strip().split("\n")
    assert len(rows) == 1 + 100
    summary = json.loads((out / "summary.json").read_text())
    assert summary["controller"] == "qp"
    assert "two_bus" in capsys.readouterr().out


def test_controller_override(fixtures_dir, tmp_path):
    out = tmp_path / "pg"
    assert main(["run", "--scenario", str(fixtures_dir / "two_bus.json"), "--out", str(out),
                 "--controller", "pg", "--horizon", "5"]) == 0
    assert json.loads((out / "summary.json").read_text())["controller"] == "pg"


def test_missing_scenario_exit_2(tmp_path, capsys):
    assert main(["run", "--scenario", "missing.json", "--out", str(tmp_path)]) == 2
    assert "missing.json" in capsys.readouterr().err


def test_bad_override_type_exit_2(fixtures_dir):
    with pytest.raises(SystemExit) as info:
        main(["run", "--scenario", str(fixtures_dir / "two_bus.json"), "--horizon", "ten"])
    assert info.value.code == 2


def test_compare_rejects_controller_override(fixtures_dir):
    with pytest.raises(SystemExit) as info:
        main(["compare", "--scenario", str(fixtures_dir / "two_bus.json"), "--controller", "qp"])
    assert info.value.code == 2


def test_compare_horizon_one(fixtures_dir, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--scenario", str(fixtures_dir / "reference.json"), "--out", str(out),
                 "--horizon", "1"]) == 0
    result = json.loads((out / "comparison.json").read_text())
    assert result["reason"] == "insufficient horizon"
    assert result["ratios"]["steps_to_1e-03"] is None
    assert (out / "trace_qp.csv").exists() and (out / "trace_pg.csv").exists()


def test_validate_ok(fixtures_dir, capsys):
    assert main(["validate", "--scenario", str(fixtures_dir / "two_bus.json")]) == 0
    assert capsys.readouterr().out.strip().endswith("OK")


def test_validate_duplicate_channel(fixtures_dir, tmp_path, capsys):
    data = json.loads((fixtures_dir / "two_bus.json").read_text())
    data["network"]["inputs"].append({"bus": 1, "kind": "P", "name": "P1b"})
    data["network"]["bounds"]["inputs"] = {"lower": [0, -0.5, 0.95, 0], "upper": [1, 0.5, 1.05, 1]}
    p = tmp_path / "dup.json"
    p.write_text(json.dumps(data))
    assert main(["validate", "--scenario", str(p)]) == 2
    assert "channel completeness" in capsys.readouterr().err


def test_validate_short_profile(fixtures_dir, tmp_path, capsys):
    (tmp_path / "loads.csv").write_text("load_P1,load_Q1\n-0.1,-0.05\n")
    data = json.loads((fixtures_dir / "two_bus.json").read_text())
    data["disturbances"] = "loads.csv"
    p = tmp_path / "short.json"
    p.write_text(json.dumps(data))
    assert main(["validate", "--scenario", str(p)]) == 2
    assert "profile length" in capsys.readouterr().err


def test_numerical_failure_exit_3(fixtures_dir, tmp_path, capsys):
    data = json.loads((fixtures_dir / "two_bus.json").read_text())
    data["horizon"] = 10
    data["network"]["bounds"]["disturbances"] = {"lower": [-100, -100], "upper": [0, 0]}
    data["disturbances"] = {"load_P1": {"kind": "step", "before": -0.1, "after": -50.0, "at": 4},
                            "load_Q1": -0.05}
    data["estimator"] = {"pseudo_forecast": [-0.1, -0.05]}
    p = tmp_path / "boom.json"
    p.write_text(json.dumps(data))
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "step 3" in err
    # the rows before the failure were streamed out
    assert len((tmp_path / "o" / "trace.csv").read_text().strip().split("\n")) == 1 + 4


def test_opf_command(fixtures_dir, capsys):
    assert main(["opf", "--scenario", str(fixtures_dir / "feeder15.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["kkt_residual"] < 1e-6
    assert "vmax@14" in report["active_set"]


def test_cli_and_library_traces_identical(fixtures_dir, tmp_path):
    out = tmp_path / "cli"
    scen = fixtures_dir / "reference.json"
    assert main(["run", "--scenario", str(scen), "--out", str(out), "--horizon", "60", "--seed", "5"]) == 0
    sc = gridofo.load_scenario(scen, horizon=60, seed=5)
    lib = tmp_path / "lib.csv"
    with open(lib, "w", newline="") as fh:
        run_scenario(sc, writer=TraceWriter(fh, sc))
    assert (out / "trace.csv").read_bytes() == lib.read_bytes()


def test_module_entry_point(fixtures_dir):
    res = subprocess.run([sys.executable, "-m", "gridofo", "validate", "--scenario", str(fixtures_dir / "two_bus.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "OK" in res.stdout
