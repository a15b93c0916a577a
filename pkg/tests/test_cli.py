import json
import math
import subprocess
import sys

import pytest

from levkit.cli import main


def run_json(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip().startswith("{") else out)


def test_equilibrium_example(capsys):
    code, doc = run_json(capsys, "equilibrium", "--material", "hopg_supp", "--L-tilde", "0.75")
    assert code == 0
    assert doc["phi"] == pytest.approx(math.pi / 4, abs=1e-2)


def test_filter_design_example(capsys, tmp_path):
    code, doc = run_json(capsys, "filter-design", "--n", "1001", "--fs", "1250", "--band", "18:23",
                         "--report-delay-at", "19", "--out", str(tmp_path / "fir.csv"))
    assert code == 0 and doc["delay_periods"] == 7.6
    assert (tmp_path / "fir.csv").exists() and (tmp_path / "fir.json").exists()


def test_simulate_blow_up_exit_code(capsys):
    code, doc = run_json(capsys, "simulate", "--gamma-tilde", "0.01", "--gammav-tilde", "0.5",
                         "--tau-tilde", "0.5", "--periods", "3000")
    assert code == 2 and doc["status"] == "blew_up"


def test_validation_and_usage_exit_codes(capsys):
    assert main(["equilibrium", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    capsys.readouterr()
    assert main(["temperature", "--area-fb", "0", "--area-ref", "1"]) == 1
    assert "ValidationError" in capsys.readouterr().err
    assert main(["filter-design", "--band", "23:18"]) == 1


def test_temperature_formats(capsys):
    code, doc = run_json(capsys, "temperature", "--area-fb", "2.94e-16", "--area-ref", "2.76e-13")
    assert code == 0 and doc["T_eff"] == pytest.approx(0.320, abs=0.005)
    assert main(["temperature", "--area-fb", "1", "--area-ref", "2", "--format", "csv"]) == 0
    head, row = capsys.readouterr().out.splitlines()
    assert head.split(",")[:3] == ["area_fb", "area_ref", "T_ref"]
    assert float(row.split(",")[3]) == 150.0


def test_print_config_roundtrip(capsys, tmp_path):
    argv = ["simulate", "--gamma-tilde", "0.02", "--tau-tilde", "1.0", "--seed", "7", "--periods", "10"]
    assert main(argv + ["--print-config"]) == 0
    first = json.loads(capsys.readouterr().out)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(first))
    assert main(["simulate", "--config", str(cfg), "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out) == first
    # explicit flags win over --config values
    assert main(["simulate", "--config", str(cfg), "--seed", "9", "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 9


def test_config_rejects_unknown_keys(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_simulate_psd_fit_chain(capsys, tmp_path):
    traj = tmp_path / "traj.csv"
    code, doc = run_json(capsys, "simulate", "--gamma-tilde", "0.05", "--periods", "4000", "--seed", "3",
                         "--record-every", "25", "--out", str(traj))
    assert code == 0 and doc["status"] == "completed"
    assert traj.read_text().splitlines()[0] == "t,x,v"
    spec = tmp_path / "psd.csv"
    code, doc = run_json(capsys, "psd", "--input", str(traj), "--nperseg", "4096", "--out", str(spec))
    assert code == 0 and spec.read_text().splitlines()[0] == "f_hz,psd"
    code, doc = run_json(capsys, "fit", "--input", str(spec), "--band", "13.9:23.9",
                         "--out-csv", str(tmp_path / "fit.csv"))
    assert code == 0
    assert doc["f0_hz"] == pytest.approx(18.9, rel=1e-2)
    assert doc["tau_s"] is None
    assert (tmp_path / "fit.csv").read_text().startswith("scale,S_err,gamma_hz")


def test_filter_apply_chain(capsys, tmp_path):
    traj = tmp_path / "traj.csv"
    main(["simulate", "--periods", "200", "--dt", str(1 / 12500), "--record-every", "10",
          "--out", str(traj)])
    main(["filter-design", "--n", "101", "--out", str(tmp_path / "fir.csv")])
    capsys.readouterr()
    code, doc = run_json(capsys, "filter-apply", "--filter", str(tmp_path / "fir.csv"), "--input", str(traj),
                         "--extra-delay", "2.5", "--gain", "2", "--out", str(tmp_path / "y.csv"))
    assert code == 0 and doc["fs"] == pytest.approx(1250.0) and doc["warmup"] >= 103


def test_filter_apply_rate_mismatch(capsys, tmp_path):
    traj = tmp_path / "traj.csv"
    main(["simulate", "--periods", "50", "--out", str(traj)])
    main(["filter-design", "--n", "101", "--out", str(tmp_path / "fir.csv")])
    capsys.readouterr()
    assert main(["filter-apply", "--filter", str(tmp_path / "fir.csv"), "--input", str(traj),
                 "--out", str(tmp_path / "y.csv")]) == 1
    assert "RateMismatch" in capsys.readouterr().err


def test_ringdown_and_field(capsys, tmp_path):
    code, doc = run_json(capsys, "ringdown", "--kappa", "3.7e-4")
    assert code == 0 and doc["Q"] == pytest.approx(1.58e5, rel=0.03)
    out = tmp_path / "field.csv"
    code, doc = run_json(capsys, "field", "--x", "-0.5:0.5:3", "--z", "0.3", "--out", str(out))
    assert code == 0 and doc["points"] == 3
    assert out.read_text().splitlines()[0].startswith("x,y,z")


def test_sweep_pipeline(capsys, tmp_path):
    cfg = tmp_path / "over.json"
    cfg.write_text(json.dumps(dict(markers=[1.0], tau_grid=dict(start=0, stop=1, step=0.5),
                                   simulation=dict(duration_periods=2000), analysis=dict(nperseg=1024))))
    code, doc = run_json(capsys, "sweep-delay", "--config", str(cfg), "--output-dir", str(tmp_path),
                         "--jobs", "1")
    assert code == 0
    assert (tmp_path / "delay_sweep" / "t_ratio.csv").exists()
    assert len(doc["config_sha256"]) == 64


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "levkit", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("levkit ")
