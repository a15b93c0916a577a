"""End-to-end pipelines driven by JSON scenario manifests.

Every file written by a pipeline carries the SHA-256 of the canonical
configuration: CSV files in a leading ``# config_sha256=...`` comment line,
JSON files in a ``config_sha256`` field.  Output contains no timestamps, so a
rerun with the same configuration reproduces the files byte for byte.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import presets
from .dynamics import FeedbackParams, OscillatorParams, simulate
from .errors import LevkitError, NoMinimumInBox, ValidationError
from .fitting import FitConstraints, fit_delayed, fit_report, fit_thermal
from .levitation import HALF_PI, NondimensionalScales, angle_class_distance, equilibrium, landscape
from .signal import welch_psd
from .spectra import (
    TemperatureReport, effective_temperature, model_band_area, t_ratio,
    write_psd_model_csv, write_t_ratio_csv,
)

KINDS = ("orientation", "cooling", "delay_sweep")


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """A named scenario: the manifest body plus where to write results."""

    name: str
    kind: str
    body: dict
    output_dir: Path = Path("out")
    high_q: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        self.output_dir = Path(self.output_dir)
        self.validate()

    @classmethod
    def load(cls, name_or_path, overrides=None, output_dir=None, high_q=False):
        """Load a packaged scenario by name or a manifest by path, then apply overrides."""
        p = Path(str(name_or_path))
        if p.suffix == ".json" and p.is_file():
            body = json.loads(p.read_text(encoding="utf-8"))
        else:
            body = presets.load_json(f"scenarios/{name_or_path}.json")
        if overrides:
            body = _merge(body, overrides)
        out = output_dir or body.get("output_dir", "out")
        return cls(body.get("name", p.stem), body.get("kind", ""), body, Path(out), high_q)

    def validate(self):
        b = self.body
        if self.kind == "orientation":
            names = presets.material_names()
            for m in b.get("materials", []):
                if m not in names:
                    raise ValidationError(f"unknown material preset {m!r}")
            if not b.get("L_tilde"):
                raise ValidationError("orientation scenario needs L_tilde values")
        else:
            osc = b.get("oscillator", {})
            for key in ("f0", "gamma_tilde", "mass", "temperature"):
                if key not in osc:
                    raise ValidationError(f"oscillator.{key} missing")
            f0 = osc["f0"]
            sim = b.get("simulation", {})
            spp = sim.get("steps_per_period", 500)
            fs = spp * f0 / sim.get("record_every", 1)
            band = b.get("analysis", {}).get("band_hz", 5.0)
            if f0 + band >= 0.5 * fs or f0 - band <= 0:
                raise ValidationError("analysis band outside (0, Nyquist) of the recorded signal")
            if spp < 50:
                raise ValidationError("steps_per_period must be >= 50")

    @property
    def resolved(self):
        d = dict(self.body)
        d.pop("output_dir", None)
        d["high_q"] = self.high_q
        return d

    @property
    def config_hash(self):
        return hashlib.sha256(canonical_json(self.resolved).encode("ascii")).hexdigest()

    @property
    def directory(self):
        return self.output_dir / self.name

    def header(self):
        return f"config_sha256={self.config_hash}"

    def write_json(self, fname, doc):
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / fname
        doc = dict(doc, config_sha256=self.config_hash)
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def path(self, fname):
        self.directory.mkdir(parents=True, exist_ok=True)
        return self.directory / fname


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else None
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, Path):
        return str(o)
    return o


def _pool_map(fn, items, jobs):
    jobs = (os.cpu_count() or 1) if jobs is None else int(jobs)
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- orientation

def _orientation_case(args):
    material, L, quad, search, grid = args
    plate = presets.plate_from_preset(material, L_tilde=L)
    scales = NondimensionalScales.from_plate(plate)
    row = dict(material=material, L_tilde=L, c_tilde=scales.c_tilde,
               chi_xy_tilde=scales.chi_xy_tilde, g_tilde=scales.g_tilde)
    try:
        eq = equilibrium(scales, L, tuple(search["z_range"]), n_z=search["n_z"],
                         n_phi=search["n_phi"], quad_order=quad)
        row.update(z_tilde=eq.z_tilde, phi=eq.phi, U_tilde=eq.U_tilde, status="ok",
                   phi_class="pi/4" if angle_class_distance(eq.phi, math.pi / 4) < math.pi / 8 else "0")
    except NoMinimumInBox as exc:
        row.update(z_tilde=None, phi=None, U_tilde=None, status=f"NoMinimumInBox: {exc}", phi_class=None)
    zs = np.linspace(*grid["z_range"], grid["n_z"])
    ps = np.linspace(*grid["phi_range"], grid["n_phi"])
    land = landscape(scales, L, zs, ps, quad, material)
    return row, land


def run_orientation_study(config: ExperimentConfig, jobs=None):
    """Landscapes and equilibria for every material and plate size in the manifest."""
    b = config.body
    quad = int(b.get("quad_order", 32))
    search = dict(dict(z_range=[0.01, 0.6], n_z=40, n_phi=24), **b.get("search", {}))
    grid = dict(dict(z_range=[0.02, 0.3], n_z=57, phi_range=[0.0, HALF_PI], n_phi=25),
                **b.get("landscape", {}))
    cases = [(m, float(L), quad, search, grid) for m in b["materials"] for L in b["L_tilde"]]
    results = _pool_map(_orientation_case, cases, jobs)
    rows = []
    for (row, land), (m, L, *_) in zip(results, cases):
        fname = f"landscape_{m}_L{L:g}.csv"
        land.to_csv(config.path(fname), config.header())
        row["landscape_file"] = fname
        row["landscape_errors"] = len(land.errors)
        rows.append(row)
    summary = dict(scenario=config.name, quad_order=quad, cases=rows)
    config.write_json("summary.json", summary)
    return summary


# ---------------------------------------------------------------- cooling

def _cooling_setup(config: ExperimentConfig):
    b = config.body
    o = b["oscillator"]
    f0 = float(o["f0"])
    sim = dict(dict(steps_per_period=500, record_every=25, segments=64, seed=0), **b.get("simulation", {}))
    ana = dict(dict(band_hz=5.0, bin_fraction=0.2, overlap=0.5, window="hann", residuals="log"),
               **b.get("analysis", {}))
    if config.high_q:
        hq = b.get("high_q", {})
        gamma = float(hq.get("gamma", 7e-4))
        sim["segments"] = int(hq.get("segments", sim["segments"]))
    else:
        gamma = float(o["gamma_tilde"]) * f0
    osc = OscillatorParams(f0, gamma, float(o["mass"]), float(o["temperature"]))
    fs = sim["steps_per_period"] * f0 / sim["record_every"]
    # Welch bin no wider than a fraction of the feedback-off line width
    width_hz = gamma / (2 * math.pi)
    nperseg = 1 << int(math.ceil(math.log2(fs / (ana["bin_fraction"] * width_hz))))
    seg_time = nperseg / fs
    burn = min(20.0 / osc.gamma_tilde, 1e7) / f0
    duration = burn + (1 + (sim["segments"] - 1) * (1 - ana["overlap"])) * seg_time
    return osc, sim, ana, fs, nperseg, burn, duration


def _cooling_case(args):
    osc, fb, sim, ana, nperseg, burn, duration, seed = args
    out = simulate(osc, fb, duration, dt=1.0 / (sim["steps_per_period"] * osc.f0), seed=seed,
                   record_every=sim["record_every"], record_velocity=False, burn_in=burn)
    if not out.completed:
        return out.status, out.blew_up_at, None
    spec = welch_psd(out.trajectory, nperseg, ana["overlap"], ana["window"])
    return out.status, None, spec


def run_cooling_study(config: ExperimentConfig, jobs=None):
    """Simulate, estimate, fit and convert to temperatures for every scenario.

    The feedback-off scenario is fitted first; its damping is then held fixed
    for every feedback fit and its band area is the temperature reference.
    """
    b = config.body
    osc, sim, ana, fs, nperseg, burn, duration = _cooling_setup(config)
    f0 = osc.f0
    band = (f0 - ana["band_hz"], f0 + ana["band_hz"])
    gv_t = float(b["feedback"].get("gamma_v_tilde", 0.0))
    gx_t = float(b["feedback"].get("gamma_x_tilde", 0.0))
    scen = b["scenarios"]
    if not any("tau_tilde" not in s for s in scen):
        raise ValidationError("cooling study needs a feedback-off scenario")
    tasks = []
    for k, s in enumerate(scen):
        if "tau_tilde" in s:
            fb = FeedbackParams.from_tilde(f0, gx_t, s.get("gamma_v_tilde", gv_t), s["tau_tilde"])
        else:
            fb = FeedbackParams()
        tasks.append((osc, fb, sim, ana, nperseg, burn, duration, int(sim["seed"]) + k))
    sims = _pool_map(_cooling_case, tasks, jobs)

    ref_idx = next(i for i, s in enumerate(scen) if "tau_tilde" not in s)
    status, _, ref_spec = sims[ref_idx]
    if ref_spec is None:
        raise LevkitError("feedback-off reference scenario did not complete")
    ref_fit = fit_thermal(ref_spec, band, init=dict(gamma=osc.gamma, f0=f0),
                          residuals=ana["residuals"], label=scen[ref_idx]["label"])
    gamma_fit = ref_fit.estimates["gamma"]
    rows, fits = [], []
    for i, (s, task, (status, blew_at, spec)) in enumerate(zip(scen, tasks, sims)):
        label = s["label"]
        fb = task[1]
        row = dict(label=label, tau_tilde=s.get("tau_tilde"), gamma_v_hz=fb.gamma_v, status=status,
                   blew_up_at=blew_at)
        if spec is None:
            rows.append(row)
            continue
        spec.to_csv(config.path(f"psd_{label}.csv"), config.header())
        if i == ref_idx:
            fit = ref_fit
        else:
            fit = fit_delayed(spec, band, FitConstraints(fixed=dict(gamma=gamma_fit)),
                              init=dict(gamma_v=fb.gamma_v, f0=ref_fit.estimates["f0"],
                                        S=ref_fit.estimates["S"]),
                              nominal_tau=fb.tau,
                              residuals=ana["residuals"], label=label)
        fits.append(fit)
        model = fit.model_psd(spec.f)
        write_psd_model_csv(config.path(f"psd_model_{label}.csv"), spec.f, model, config.header())
        rep = TemperatureReport.from_areas(fit.area, ref_fit.area, osc.temperature, band)
        theory_area = model_band_area(band[0], band[1], osc, fb)
        theory_ref = model_band_area(band[0], band[1], osc, FeedbackParams())
        row.update(
            T_eff=rep.T_eff, t_ratio_vs_off=rep.t_ratio, area=fit.area, area_err=fit.area_err,
            welch_band_power=spec.integrate(*band),
            T_eff_theory=effective_temperature(theory_area, theory_ref, osc.temperature),
            peak_hz=float(spec.f[np.argmax(model)]),
        )
        rows.append(row)
    fit_report(fits, config.path("fit_table.csv"), None)
    _prepend_comment(config.path("fit_table.csv"), config.header())
    _, doc = fit_report(fits)
    config.write_json("fit_table.json", doc)
    summary = dict(scenario=config.name, high_q=config.high_q, f0=f0, gamma=osc.gamma,
                   gamma_fit=gamma_fit, fs=fs, nperseg=nperseg, duration_s=duration,
                   burn_in_s=burn, band_hz=list(band), rows=rows)
    config.write_json("temperature_report.json", summary)
    return summary


def _prepend_comment(path, comment):
    text = Path(path).read_text(encoding="utf-8")
    Path(path).write_text(f"# {comment}\n" + text, encoding="utf-8")


# ---------------------------------------------------------------- delay sweep

def _sweep_marker(args):
    osc, fb, sim, ana, seed = args
    duration = sim["duration_periods"] / osc.f0
    out = simulate(osc, fb, duration, dt=1.0 / (sim["steps_per_period"] * osc.f0), seed=seed,
                   record_every=sim["record_every"], record_velocity=False)
    if not out.completed:
        return out.status, out.blew_up_at, None
    spec = welch_psd(out.trajectory, ana["nperseg"], ana["overlap"], ana["window"])
    lo, hi = osc.f0 - ana["band_hz"], osc.f0 + ana["band_hz"]
    return out.status, None, spec.integrate(lo, hi)


def run_delay_sweep(config: ExperimentConfig, jobs=None):
    """Analytic T_ratio curve plus simulation markers at selected delays.

    A marker is ``log10`` of the simulated band power at ``tau~`` over that at
    ``tau~ = 0``; delays whose simulation blows up are reported without a
    marker value.
    """
    b = config.body
    o = b["oscillator"]
    f0 = float(o["f0"])
    osc = OscillatorParams.from_tilde(float(o["gamma_tilde"]), f0, float(o["mass"]), float(o["temperature"]))
    gv_t = float(b["feedback"]["gamma_v_tilde"])
    gx_t = float(b["feedback"].get("gamma_x_tilde", 0.0))
    sim = dict(dict(steps_per_period=500, record_every=25, duration_periods=40000, seed=0),
               **b.get("simulation", {}))
    ana = dict(dict(band_hz=5.0, nperseg=8192, overlap=0.5, window="hann"), **b.get("analysis", {}))
    band = (f0 - ana["band_hz"], f0 + ana["band_hz"])
    g = b["tau_grid"]
    taus = np.round(np.arange(g["start"], g["stop"] + 0.5 * g["step"], g["step"]), 10)
    curve = np.array([t_ratio(osc.gamma_tilde, gv_t, float(t), band, f0, "tau0", gx_t) for t in taus])
    write_t_ratio_csv(config.path("t_ratio.csv"), taus, curve, config.header())

    markers = sorted(set(float(t) for t in b.get("markers", [])) | {0.0})
    tasks = [(osc, FeedbackParams.from_tilde(f0, gx_t, gv_t, t), sim, ana, int(sim["seed"]) + k)
             for k, t in enumerate(markers)]
    res = _pool_map(_sweep_marker, tasks, jobs)
    p0 = res[markers.index(0.0)][2]
    rows = []
    for t, (status, blew_at, power) in zip(markers, res):
        theory = t_ratio(osc.gamma_tilde, gv_t, t, band, f0, "tau0", gx_t)
        row = dict(tau_tilde=t, status=status, blew_up_at=blew_at, t_ratio_theory=theory,
                   t_ratio_sim=None, band_power=power)
        if power is not None and p0:
            row["t_ratio_sim"] = math.log10(power / p0)
            fb = FeedbackParams.from_tilde(f0, gx_t, gv_t, t)
            row["band_power_theory"] = 2.0 * model_band_area(band[0], band[1], osc, fb)
        rows.append(row)
    with config.path("markers.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {config.header()}\n")
        fh.write("tau_tilde,t_ratio_sim,status\n")
        for r in rows:
            v = "" if r["t_ratio_sim"] is None else repr(float(r["t_ratio_sim"]))
            fh.write(f"{r['tau_tilde']!r},{v},{r['status']}\n")
    summary = dict(scenario=config.name, gamma_tilde=osc.gamma_tilde, gamma_v_tilde=gv_t,
                   band_hz=list(band), markers=rows,
                   unstable=[r["tau_tilde"] for r in rows if r["status"] != "completed"])
    config.write_json("sweep_summary.json", summary)
    return summary


RUNNERS = dict(orientation=run_orientation_study, cooling=run_cooling_study,
               delay_sweep=run_delay_sweep)


def run(config: ExperimentConfig, jobs=None):
    return RUNNERS[config.kind](config, jobs)
