import json

import numpy as np
import pytest

from fairisac import artifacts
from fairisac.cli import main
from fairisac.config import load_preset
from fairisac.metrics import BeamformingState


@pytest.fixture
def small_config(tmp_path):
    doc = load_preset("desk")
    doc["optimizer"]["max_iter"] = 150
    p = tmp_path / "small.json"
    p.write_text(json.dumps(doc))
    return p


def write_doc(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_run_writes_artifacts(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small_config), "--out", str(out)]) == 0
    for name in ("trace.csv", "result.json", "beams.csv"):
        assert (out / name).is_file()
    trace = artifacts.read_trace(out / "trace.csv")
    assert np.all(np.diff(trace["objective"]) <= 0)
    res = artifacts.read_result(out / "result.json")
    assert res["seed"] == 7
    assert len(res["crlbs"]) == 3 and len(res["rates_bps"]) == 3
    assert res["config"]["optimizer"]["max_iter"] == 150
    beams = artifacts.read_beams(out / "beams.csv")
    assert beams.power == pytest.approx(1.0, rel=1e-9)


def test_run_both_modes(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small_config), "--out", str(out), "--mode", "both"]) == 0
    multi = artifacts.read_result(out / "multistatic" / "result.json")
    mono = artifacts.read_result(out / "monostatic" / "result.json")
    assert multi["mode"] == "multistatic" and mono["mode"] == "monostatic"


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert main(["run", "--config", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_invalid_config_lists_fields(tmp_path, capsys):
    doc = load_preset("desk")
    doc["scenario"]["n_sc"] = 0
    doc["optimizer"]["rho"] = "heavy"
    code = main(["run", "--config", str(write_doc(tmp_path, doc))])
    err = capsys.readouterr().err
    assert code == 2
    assert "scenario.n_sc" in err and "optimizer.rho" in err


def test_power_echo_in_watts(tmp_path):
    doc = load_preset("desk")
    doc["scenario"]["p_total"] = "30 dBm"
    doc["optimizer"]["max_iter"] = 3
    out = tmp_path / "run"
    assert main(["run", "--config", str(write_doc(tmp_path, doc)), "--out", str(out)]) == 0
    assert artifacts.read_result(out / "result.json")["p_total_watts"] == 1.0


def test_seed_flag_overrides(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small_config), "--out", str(out), "--seed", "3"]) == 0
    res = artifacts.read_result(out / "result.json")
    assert res["seed"] == 3 and res["config"]["scenario"]["seed"] == 3


def test_run_is_deterministic(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(small_config), "--out", str(a)]) == 0
    assert main(["run", "--config", str(small_config), "--out", str(b)]) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert (a / "beams.csv").read_bytes() == (b / "beams.csv").read_bytes()
    ra = artifacts.read_result(a / "result.json")
    rb = artifacts.read_result(b / "result.json")
    ra.pop("wall_time"), rb.pop("wall_time")
    assert json.dumps(ra, sort_keys=True) == json.dumps(rb, sort_keys=True)


def _sweep_doc(parameter, values, max_iter=60, modes=None):
    doc = load_preset("desk")
    doc["optimizer"]["max_iter"] = max_iter
    doc["sweep"] = {"parameter": parameter, "values": values}
    if modes:
        doc["sweep"]["modes"] = modes
    return doc


def test_alpha_sweep_rows(tmp_path):
    cfg = write_doc(tmp_path, _sweep_doc("alpha", [0, 1, 2]))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = artifacts.read_sweep(out / "sweep.csv")
    assert [r["value"] for r in rows] == [0.0, 1.0, 2.0]
    header = (out / "sweep.csv").read_text().splitlines()[0].split(",")
    for col in ("value", "sum_crlb", "max_crlb", "min_crlb", "crlb_0", "crlb_2", "min_rate",
                "mean_rate", "iterations", "wall_time"):
        assert col in header
    assert (out / "runs" / "multistatic" / "alpha=1" / "trace.csv").is_file()


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = write_doc(tmp_path, _sweep_doc("alpha", [0, 2], max_iter=20))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    s = artifacts.read_sweep(tmp_path / "s" / "sweep.csv")
    p = artifacts.read_sweep(tmp_path / "p" / "sweep.csv")
    for a, b in zip(s, p):
        assert a["sum_crlb"] == b["sum_crlb"] and a["min_rate"] == b["min_rate"]


def test_n_users_sweep_deterministic(tmp_path):
    cfg = write_doc(tmp_path, _sweep_doc("n_users", [2, 4], max_iter=5))
    for name in ("a", "b"):
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for k in (2, 4):
        ra = artifacts.read_result(tmp_path / "a" / "runs" / "multistatic" / f"n_users={k}" / "result.json")
        rb = artifacts.read_result(tmp_path / "b" / "runs" / "multistatic" / f"n_users={k}" / "result.json")
        assert ra["system"]["n_users"] == k
        assert ra["config"]["scenario"]["n_users"] == k and "users" not in ra["config"]["scenario"]
        assert ra["rates_bps"] == rb["rates_bps"]
        assert ra["config"] == rb["config"]


def test_sweep_requires_section(tmp_path, small_config, capsys):
    assert main(["sweep", "--config", str(small_config)]) == 2
    assert "sweep" in capsys.readouterr().err


def test_sweep_monostatic_comparison(tmp_path):
    cfg = write_doc(tmp_path, _sweep_doc("alpha", [1], modes=["multistatic", "monostatic"]))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = artifacts.read_sweep(out / "sweep.csv")
    assert [r["mode"] for r in rows] == ["multistatic", "monostatic"]


def test_check_grad_passes(capsys):
    assert main(["check-grad", "--config", "desk", "--n-states", "2"]) == 0
    out = capsys.readouterr().out
    assert "objective" in out and "FAIL" not in out


def test_check_grad_catches_perturbation(capsys):
    assert main(["check-grad", "--config", "desk", "--n-states", "1",
                 "--perturb-block", "objective"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_check_grad_zero_states(capsys):
    assert main(["check-grad", "--config", "desk", "--n-states", "0"]) == 2
    assert "n-states" in capsys.readouterr().err


def test_report_run(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    main(["run", "--config", str(small_config), "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.count("user ") == 3
    assert text.count("target ") == 3
    assert "delay RMSE" in text
    conv = artifacts.read_rows(out / "plotdata" / "convergence.csv")
    assert len(conv) == len(artifacts.read_trace(out / "trace.csv")["iter"])


def test_report_feasible_residual_zero(tmp_path, capsys):
    doc = load_preset("desk")
    doc["optimizer"].update(max_iter=20, r_min=0)
    out = tmp_path / "run"
    main(["run", "--config", str(write_doc(tmp_path, doc)), "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    assert "max_k[R_min - R_k]_+: 0 Mbps" in capsys.readouterr().out


def test_report_sweep_series(tmp_path, capsys):
    cfg = write_doc(tmp_path, _sweep_doc("alpha", [0, 0.5, 2], max_iter=10))
    out = tmp_path / "sw"
    main(["sweep", "--config", str(cfg), "--out", str(out)])
    assert main(["report", str(out)]) == 0
    series = sorted(p.name for p in (out / "plotdata").glob("convergence_*.csv"))
    assert series == ["convergence_multistatic_alpha=0.5.csv", "convergence_multistatic_alpha=0.csv",
                      "convergence_multistatic_alpha=2.csv"]
    assert len(artifacts.read_rows(out / "plotdata" / "sweep_multistatic.csv")) == 3


def test_report_missing_artifacts(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    assert "result.json" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nope")]) == 1


def test_beams_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    b = BeamformingState(rng.standard_normal((3, 3, 2)) + 1j * rng.standard_normal((3, 3, 2)))
    artifacts.write_beams(tmp_path / "b.csv", b)
    assert np.array_equal(artifacts.read_beams(tmp_path / "b.csv").blocks, b.blocks)


def test_trace_round_trip_exact(tmp_path, small_config):
    out = tmp_path / "run"
    main(["run", "--config", str(small_config), "--out", str(out)])
    trace = artifacts.read_trace(out / "trace.csv")
    res = artifacts.read_result(out / "result.json")
    assert trace["iter"][-1] == res["iterations"]
    assert trace["objective"][-1] == res["objective"]
    np.testing.assert_array_equal([trace[f"crlb_{q}"][-1] for q in range(3)], res["crlbs"])


def test_module_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "fairisac", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "check-grad" in proc.stdout


def test_r_min_sweep_trades_sensing_for_rate(tmp_path):
    doc = _sweep_doc("r_min", ["0 Mbps", "100 Mbps", "200 Mbps"], max_iter=2000)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(write_doc(tmp_path, doc)), "--out", str(out)]) == 0
    rows = artifacts.read_sweep(out / "sweep.csv")
    assert [r["value"] for r in rows] == [0.0, 100e6, 200e6]
    max_crlb = [r["max_crlb"] for r in rows]
    assert all(b >= a for a, b in zip(max_crlb, max_crlb[1:]))
    assert rows[-1]["min_rate"] >= 0.98 * 200e6
