import json

import numpy as np
import pytest

from levkit.errors import ValidationError
from levkit.orchestration import ExperimentConfig, run

SMALL_ORIENT = dict(materials=["hopg_supp", "composite", "composite_dense"], L_tilde=[0.75], quad_order=16,
                    search=dict(n_z=20, n_phi=12),
                    landscape=dict(n_z=5, n_phi=4))
SMALL_SWEEP = dict(markers=[1.0, 1.5], tau_grid=dict(start=0.0, stop=3.0, step=0.5),
                   simulation=dict(duration_periods=6000), analysis=dict(nperseg=2048))
SMALL_COOL = dict(scenarios=[dict(label="off"), dict(label="tau8.0", tau_tilde=8.0)],
                  simulation=dict(segments=8))


def hash_lines(directory):
    out = {}
    for p in sorted(directory.iterdir()):
        text = p.read_text()
        if p.suffix == ".csv":
            out[p.name] = text.splitlines()[0]
        else:
            out[p.name] = json.loads(text)["config_sha256"]
    return out


@pytest.fixture(scope="module")
def cooling(tmp_path_factory):
    cfg = ExperimentConfig.load("cooling", output_dir=tmp_path_factory.mktemp("cool"))
    return cfg, run(cfg)


def test_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentConfig.load("orientation", dict(materials=["unobtainium"]), tmp_path)
    with pytest.raises(ValidationError):
        ExperimentConfig.load("cooling", dict(analysis=dict(band_hz=40.0)), tmp_path)
    with pytest.raises(ValidationError):
        ExperimentConfig("x", "nonsense", {})
    a = ExperimentConfig.load("cooling", output_dir=tmp_path)
    b = ExperimentConfig.load("cooling", output_dir=tmp_path / "elsewhere")
    c = ExperimentConfig.load("cooling", dict(simulation=dict(seed=1)), tmp_path)
    assert a.config_hash == b.config_hash != c.config_hash
    assert ExperimentConfig.load("cooling", high_q=True).config_hash != a.config_hash


def test_manifest_by_path(tmp_path):
    path = tmp_path / "mine.json"
    path.write_text(json.dumps(dict(name="mine", kind="orientation", materials=["hopg_supp"],
                                    L_tilde=[0.75])))
    cfg = ExperimentConfig.load(path, output_dir=tmp_path)
    assert cfg.name == "mine" and cfg.kind == "orientation"


def test_orientation_study(tmp_path):
    cfg = ExperimentConfig.load("orientation", SMALL_ORIENT, tmp_path)
    summary = run(cfg, jobs=1)
    rows = {r["material"]: r for r in summary["cases"]}
    assert rows["hopg_supp"]["phi_class"] == "pi/4"
    assert rows["composite"]["phi_class"] == "0"
    assert rows["composite_dense"]["z_tilde"] < rows["composite"]["z_tilde"]
    files = hash_lines(cfg.directory)
    assert set(files) == {"summary.json", "landscape_hopg_supp_L0.75.csv",
                          "landscape_composite_L0.75.csv", "landscape_composite_dense_L0.75.csv"}
    for v in files.values():
        assert cfg.config_hash in v


def test_cooling_reference_and_ordering(cooling):
    cfg, summary = cooling
    rows = {r["label"]: r for r in summary["rows"]}
    assert rows["off"]["T_eff"] == 300.0
    assert all(r["status"] == "completed" for r in rows.values())
    # integer delays cool best at the shortest one tested
    assert rows["tau8.0"]["T_eff"] < rows["tau10"]["T_eff"] < rows["tau12"]["T_eff"]
    # off-integer delays are hotter than the integer one
    assert rows["tau7.9"]["T_eff"] > rows["tau8.0"]["T_eff"] < rows["tau8.1"]["T_eff"]
    for r in rows.values():
        assert r["T_eff"] == pytest.approx(r["T_eff_theory"], rel=0.1)


def test_cooling_off_integer_delays_shift(cooling):
    # the band centroid of the fitted line moves with the sign of the delay error
    cfg, _ = cooling

    def centroid(label):
        lines = (cfg.directory / f"psd_model_{label}.csv").read_text().splitlines()[2:]
        f, p = np.array([list(map(float, ln.split(","))) for ln in lines]).T
        m = np.abs(f - 18.9) <= 5
        return np.trapezoid(f[m] * p[m], f[m]) / np.trapezoid(p[m], f[m])

    assert centroid("tau7.9") < centroid("tau8.0") - 0.05
    assert centroid("tau8.1") > centroid("tau8.0") + 0.05


def test_cooling_files(cooling):
    cfg, summary = cooling
    files = hash_lines(cfg.directory)
    for label in ("off", "tau7.9", "tau8.0", "tau8.1", "tau10", "tau12"):
        assert f"psd_{label}.csv" in files and f"psd_model_{label}.csv" in files
    for name in ("fit_table.csv", "fit_table.json", "temperature_report.json"):
        assert name in files
    assert all(cfg.config_hash in v for v in files.values())
    table = (cfg.directory / "fit_table.csv").read_text().splitlines()
    assert table[1].startswith("scale,S_err,gamma_hz")
    assert table[2].split(",")[6] == ""


def test_cooling_determinism(tmp_path):
    outs = []
    for k in range(2):
        cfg = ExperimentConfig.load("cooling", SMALL_COOL, tmp_path / str(k))
        run(cfg, jobs=2 if k else 1)
        outs.append({p.name: p.read_bytes() for p in sorted(cfg.directory.iterdir())})
    assert outs[0] == outs[1]


def test_delay_sweep(tmp_path):
    cfg = ExperimentConfig.load("delay_sweep", SMALL_SWEEP, tmp_path)
    summary = run(cfg)
    rows = {r["tau_tilde"]: r for r in summary["markers"]}
    assert rows[0.0]["t_ratio_sim"] == 0.0 and rows[0.0]["t_ratio_theory"] == 0.0
    assert rows[1.5]["status"] == "blew_up" and rows[1.5]["t_ratio_sim"] is None
    assert summary["unstable"] == [1.5]
    assert rows[1.0]["t_ratio_sim"] == pytest.approx(rows[1.0]["t_ratio_theory"], abs=0.05)
    markers = (cfg.directory / "markers.csv").read_text().splitlines()
    assert markers[1] == "tau_tilde,t_ratio_sim,status"
    assert "1.5,,blew_up" in markers
    curve = (cfg.directory / "t_ratio.csv").read_text().splitlines()
    assert curve[1] == "tau_tilde,t_ratio" and len(curve) == 2 + 7
    assert all(cfg.config_hash in v for v in hash_lines(cfg.directory).values())


def test_delay_sweep_integer_delays_are_local_minima(tmp_path):
    cfg = ExperimentConfig.load("delay_sweep", dict(markers=[], simulation=dict(duration_periods=3000),
                                                    analysis=dict(nperseg=1024)), tmp_path)
    run(cfg, jobs=1)
    lines = (cfg.directory / "t_ratio.csv").read_text().splitlines()[2:]
    tau, tr = np.array([list(map(float, ln.split(","))) for ln in lines]).T
    assert tr[0] == 0.0
    for n in (1, 2, 3):
        near = np.abs(tau - n) <= 0.1 + 1e-9
        assert tau[near][np.argmin(tr[near])] == pytest.approx(n)
