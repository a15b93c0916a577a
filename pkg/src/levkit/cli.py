"""Command-line interface: ``levkit <subcommand> [flags]``.

Exit status is 0 on success, 1 for invalid input (including usage errors),
and 2 for numerical failures such as a blown-up simulation.

``--config FILE`` supplies flag values as a JSON object keyed by flag name
(``"L_tilde"`` or ``"L-tilde"``); flags given on the command line win.  For
the pipeline commands (``cool-study``, ``sweep-delay``, ``orientation-study``)
the file is instead merged into the scenario manifest.  ``--print-config``
prints the resolved flag values in the same format and exits.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, presets
from .dynamics import (
    FeedbackParams, OscillatorParams, Trajectory, fit_ringdown, ringdown, simulate,
)
from .errors import LevkitError, NumericalError, ValidationError
from .fitting import FitConstraints, fit_delayed, fit_report, fit_thermal
from .levitation import (
    NondimensionalScales, angle_class_distance, equilibrium, landscape,
)
from .magnetostatics import MagnetArraySpec, field_map, write_field_map_csv
from .orchestration import ExperimentConfig, run
from .signal import (
    FirFilter, Spectrum, apply_filter, decimate, design_bandpass, gain_db, group_delay_periods,
    measure_delay_periods, resample, welch_psd,
)
from .spectra import effective_temperature

PIPELINES = {"cool-study": "cooling", "sweep-delay": "delay_sweep", "orientation-study": "orientation"}


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let values such as -0.5:0.5:3 or -1e-3 through as arguments, not options
        self._negative_number_matcher = re.compile(r"^-\.?\d")

    def error(self, message):
        self.print_help(sys.stderr)
        sys.stderr.write(f"\n{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _range(text, default_n=None):
    """``lo:hi`` or ``lo:hi:n`` (``n`` points, inclusive) or a single value."""
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}") from None
    if len(vals) == 1:
        return np.array(vals)
    if len(vals) == 2:
        if default_n is None:
            return tuple(vals)
        return np.linspace(vals[0], vals[1], default_n)
    if len(vals) == 3 and vals[2] >= 1 and vals[2] == int(vals[2]):
        return np.linspace(vals[0], vals[1], int(vals[2]))
    raise argparse.ArgumentTypeError(f"bad range {text!r}")


def _pair(text):
    r = _range(text)
    if not isinstance(r, tuple):
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    return r


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _emit(doc, fmt, out=None):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        flat = {k: v for k, v in doc.items() if not isinstance(v, (dict, list))}
        w.writerow(list(flat))
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                    for v in flat.values()])
        text = buf.getvalue()
    else:
        text = json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _clean(o):
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return float(o) if math.isfinite(o) else None
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    return o


# ------------------------------------------------------------------ commands

def cmd_field(a):
    spec = MagnetArraySpec(a.magnet_side, a.magnetization)
    xs, ys, zs = (_range(t, 1) for t in (a.x, a.y, a.z))
    scale = spec.magnet_side if a.grid_units == "dimensionless" else 1.0
    grid = np.stack(np.meshgrid(xs * scale, ys * scale, zs * scale, indexing="ij"), axis=-1)
    samples = field_map(spec, grid, a.units)
    if a.out or a.format == "csv":
        if a.out:
            write_field_map_csv(samples, a.out)
        else:
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(["x", "y", "z", "Bx", "By", "Bz", "units"])
            for s in samples:
                w.writerow([repr(float(v)) for v in (*s.position, *s.B)] + [s.units])
        if a.out:
            _emit(dict(points=len(samples), errors=sum(s.error is not None for s in samples),
                       out=str(a.out)), "json")
    else:
        _emit(dict(units=a.units, samples=[dict(position=s.position, B=s.B, error=s.error)
                                           for s in samples]), "json")
    return 0


def _scales(a):
    a.material = a.material or presets.material_table()[0]
    plate = presets.plate_from_preset(a.material, L_tilde=a.L_tilde)
    return plate, NondimensionalScales.from_plate(plate, MagnetArraySpec())


def cmd_landscape(a):
    _, sc = _scales(a)
    zs = np.linspace(a.z_range[0], a.z_range[1], a.n_z)
    ps = np.linspace(a.phi_range[0], a.phi_range[1], a.n_phi)
    land = landscape(sc, a.L_tilde, zs, ps, a.quad_order, a.material)
    z, p, u = land.argmin()
    if a.out:
        land.to_csv(a.out)
    elif a.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["z_tilde", "phi", "U_tilde"])
        for i, zz in enumerate(zs):
            for j, pp in enumerate(ps):
                w.writerow([repr(float(zz)), repr(float(pp)), repr(float(land.values[i, j]))])
        return 0
    _emit(dict(material=a.material, L_tilde=a.L_tilde, grid_min_z_tilde=z, grid_min_phi=p,
               grid_min_U_tilde=u, failed_cells=len(land.errors), out=a.out), a.format if a.out else "json")
    return 0


def cmd_equilibrium(a):
    _, sc = _scales(a)
    eq = equilibrium(sc, a.L_tilde, a.z_range, quad_order=a.quad_order)
    cls = "pi/4" if angle_class_distance(eq.phi, math.pi / 4) < math.pi / 8 else "0"
    _emit(dict(material=a.material, L_tilde=a.L_tilde, z_tilde=eq.z_tilde, phi=eq.phi,
               U_tilde=eq.U_tilde, phi_class=cls, height_m=eq.z_tilde * MagnetArraySpec().magnet_side,
               g_tilde=sc.g_tilde, c_tilde=sc.c_tilde, chi_xy_tilde=sc.chi_xy_tilde), a.format)
    return 0


def _oscillator(a):
    if a.gamma_tilde is not None:
        return OscillatorParams.from_tilde(a.gamma_tilde, a.f0, a.mass, a.temperature)
    return OscillatorParams(a.f0, a.gamma, a.mass, a.temperature)


def _feedback(a):
    if any(v is not None for v in (a.gammav_tilde, a.gammax_tilde, a.tau_tilde)):
        return FeedbackParams.from_tilde(a.f0, a.gammax_tilde or 0.0, a.gammav_tilde or 0.0,
                                         a.tau_tilde or 0.0)
    return FeedbackParams(a.gamma_x, a.gamma_v, a.tau)


def cmd_simulate(a):
    osc, fb = _oscillator(a), _feedback(a)
    duration = a.duration if a.duration is not None else a.periods / osc.f0
    out = simulate(osc, fb, duration, a.dt, a.seed, a.x0, a.v0, a.record_every,
                   not a.no_velocity, a.blow_bound)
    tr = out.trajectory
    if a.out:
        tr.to_csv(a.out)
    st = tr.stationary() if out.completed else tr
    _emit(dict(status=out.status, blew_up_at=out.blew_up_at, max_abs_x_tilde=out.max_abs_x_tilde,
               steps=out.steps, fs=tr.fs, samples=len(tr), seed=a.seed,
               variance=float(np.var(st.x)) if out.completed else None,
               thermal_variance=osc.thermal_variance, gamma_tilde=osc.gamma_tilde,
               tau_tilde=fb.tau_tilde(osc.f0), out=a.out), a.format)
    return 0 if out.completed else 2


def cmd_ringdown(a):
    if a.kappa is not None:
        osc = OscillatorParams.from_kappa(a.kappa, a.f0, a.mass, 0.0)
    else:
        osc = OscillatorParams(a.f0, a.gamma, a.mass, 0.0)
    tr = ringdown(osc, a.x0, a.duration, a.dt, a.record_every)
    if a.out:
        tr.to_csv(a.out)
    fit = fit_ringdown(tr)
    _emit(dict(amplitude=fit.amplitude, kappa=fit.kappa, kappa_err=fit.kappa_err, f0=fit.f0,
               Q=None if math.isinf(fit.Q) else fit.Q, undamped=fit.undamped,
               n_extrema=fit.n_extrema, out=a.out), a.format)
    return 0


def cmd_psd(a):
    tr = Trajectory.from_csv(a.input)
    if a.resample:
        tr = resample(tr, a.resample)
    if a.decimate and a.decimate > 1:
        tr = decimate(tr, a.decimate)
    spec = welch_psd(tr, a.nperseg, a.overlap, a.window, not a.keep_warmup)
    if a.out:
        spec.to_csv(a.out)
        _emit(dict(bins=len(spec.f), df=spec.df, fs=spec.fs, nperseg=spec.nperseg,
                   variance=spec.integrate(), out=a.out), "json")
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["f_hz", "psd"])
        for f, p in zip(spec.f, spec.psd):
            w.writerow([repr(float(f)), repr(float(p))])
    return 0


def cmd_filter_design(a):
    filt = design_bandpass(a.n, a.fs, a.band[0], a.band[1], a.window)
    doc = dict(n=filt.n, fs=filt.fs, band=list(filt.band), window=filt.window,
               dc_gain=filt.dc_gain, center_gain_db=float(gain_db(filt, 0.5 * sum(filt.band))[0]))
    if a.report_delay_at is not None:
        doc["delay_periods"] = group_delay_periods(filt, a.report_delay_at)
        doc["measured_delay_periods"] = measure_delay_periods(filt, a.report_delay_at)
        doc["delay_at_hz"] = a.report_delay_at
    if a.out:
        filt.to_files(a.out)
        doc["out"] = a.out
    _emit(doc, a.format)
    return 0


def cmd_filter_apply(a):
    filt = FirFilter.from_files(a.filter)
    tr = Trajectory.from_csv(a.input)
    y = apply_filter(filt, tr, a.extra_delay, a.gain, a.dc_shift)
    y.to_csv(a.out)
    _emit(dict(samples=len(y), warmup=y.warmup, fs=y.fs, out=a.out), a.format)
    return 0


def _num(v):
    return float(v)


def cmd_fit(a):
    spec = Spectrum.from_csv(a.input)
    init = {k: _num(v) for k, v in (a.init or [])}
    fixed = {k: _num(v) for k, v in (a.fix or [])}
    bounds = {}
    for k, v in a.bound or []:
        lo, hi = _pair(v)
        bounds[k] = (lo, hi)
    if a.model == "thermal":
        res = fit_thermal(spec, a.band, init, fixed, a.residuals, label=a.label)
    else:
        res = fit_delayed(spec, a.band, FitConstraints(fixed, bounds), init, a.nominal_tau,
                          a.residuals, label=a.label)
    text, doc = fit_report([res], a.out_csv, a.out_json)
    if a.format == "csv":
        sys.stdout.write(text)
    else:
        _emit(dict(doc["rows"][0], n_iter=res.n_iter), "json")
    return 0


def cmd_temperature(a):
    T = effective_temperature(a.area_fb, a.area_ref, a.T_ref)
    _emit(dict(area_fb=a.area_fb, area_ref=a.area_ref, T_ref=a.T_ref, T_eff=T,
               t_ratio=math.log10(a.area_fb / a.area_ref)), a.format)
    return 0


def cmd_pipeline(a):
    overrides = dict(a.config_doc or {})
    if a.seed is not None:
        overrides.setdefault("simulation", {})["seed"] = a.seed
    if getattr(a, "gamma_tilde", None) is not None:
        overrides.setdefault("oscillator", {})["gamma_tilde"] = a.gamma_tilde
    if getattr(a, "gammav_tilde", None) is not None:
        overrides.setdefault("feedback", {})["gamma_v_tilde"] = a.gammav_tilde
    cfg = ExperimentConfig.load(a.scenario or PIPELINES[a.command], overrides, a.output_dir,
                                getattr(a, "high_q", False))
    summary = run(cfg, a.jobs)
    _emit(dict(summary, output_dir=str(cfg.directory), config_sha256=cfg.config_hash), a.format)
    return 0


# ------------------------------------------------------------------ parser

def _add_common(p):
    p.add_argument("--format", choices=("json", "csv"), default="json", help="stdout format")
    p.add_argument("--config", help="JSON file with flag values (or scenario overrides)")
    p.add_argument("--print-config", action="store_true", help="print resolved flags as JSON and exit")


def _add_oscillator(p, thermal=True):
    p.add_argument("--f0", type=float, default=18.9, help="natural frequency [Hz]")
    p.add_argument("--gamma", type=float, default=0.189, help="EOM damping rate [1/s]")
    p.add_argument("--gamma-tilde", type=float, default=None, help="damping in natural units (overrides --gamma)")
    p.add_argument("--mass", type=float, default=5e-5, help="[kg]")
    if thermal:
        p.add_argument("--temperature", type=float, default=300.0, help="[K]")


def build_parser():
    top = _Parser(prog="levkit", description="Diamagnetic levitation and feedback-cooling toolkit")
    top.add_argument("--version", action="version", version=f"levkit {__version__}")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("field", help="field map of the checkerboard array")
    p.add_argument("--x", default="0", help="value or lo:hi:n")
    p.add_argument("--y", default="0")
    p.add_argument("--z", default="0.5", help="height above the top faces")
    p.add_argument("--grid-units", choices=("dimensionless", "SI"), default="dimensionless",
                   help="grid given in magnet sides or metres")
    p.add_argument("--units", choices=("SI", "dimensionless"), default="SI", help="output units")
    p.add_argument("--magnet-side", type=float, default=12.7e-3)
    p.add_argument("--magnetization", type=float, default=1.1e6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_field)

    for name, fn in (("landscape", cmd_landscape), ("equilibrium", cmd_equilibrium)):
        p = sub.add_parser(name, help=f"plate energy {name}")
        p.add_argument("--material", default=None, help="preset name")
        p.add_argument("--L-tilde", dest="L_tilde", type=float, default=0.75)
        p.add_argument("--quad-order", type=int, default=32)
        if name == "landscape":
            p.add_argument("--z-range", type=_pair, default=(0.02, 0.3))
            p.add_argument("--n-z", type=int, default=57)
            p.add_argument("--phi-range", type=_pair, default=(0.0, math.pi / 2))
            p.add_argument("--n-phi", type=int, default=25)
            p.add_argument("--out")
        else:
            p.add_argument("--z-range", type=_pair, default=(0.01, 0.6))
        p.set_defaults(func=fn)

    p = sub.add_parser("simulate", help="delayed-feedback Langevin simulation")
    _add_oscillator(p)
    p.add_argument("--gamma-v", type=float, default=0.0, help="velocity gain [1/s]")
    p.add_argument("--gamma-x", type=float, default=0.0, help="position gain [1/s]")
    p.add_argument("--tau", type=float, default=0.0, help="delay [s]")
    p.add_argument("--gammav-tilde", type=float, default=None)
    p.add_argument("--gammax-tilde", type=float, default=None)
    p.add_argument("--tau-tilde", type=float, default=None)
    p.add_argument("--duration", type=float, default=None, help="[s]")
    p.add_argument("--periods", type=float, default=4000.0, help="duration in periods if --duration absent")
    p.add_argument("--dt", type=float, default=None, help="step [s], default 1/(500 f0)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--v0", type=float, default=0.0)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--no-velocity", action="store_true")
    p.add_argument("--blow-bound", type=float, default=1e6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ringdown", help="free decay and Q extraction")
    p.add_argument("--f0", type=float, default=18.961)
    p.add_argument("--kappa", type=float, default=None, help="amplitude decay constant [1/s]")
    p.add_argument("--gamma", type=float, default=7.4e-4, help="EOM damping [1/s] if --kappa absent")
    p.add_argument("--mass", type=float, default=5e-5)
    p.add_argument("--x0", type=float, default=1e-6)
    p.add_argument("--duration", type=float, default=1000.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ringdown)

    p = sub.add_parser("psd", help="Welch PSD of a trajectory CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--nperseg", type=int, default=None)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--window", default="hann")
    p.add_argument("--decimate", type=int, default=None)
    p.add_argument("--resample", type=float, default=None, help="target rate [Hz]")
    p.add_argument("--keep-warmup", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("filter-design", help="Hamming windowed-sinc band-pass")
    p.add_argument("--n", type=int, default=1001)
    p.add_argument("--fs", type=float, default=1250.0)
    p.add_argument("--band", type=_pair, default=(18.0, 23.0))
    p.add_argument("--window", default="hamming")
    p.add_argument("--report-delay-at", type=float, default=None)
    p.add_argument("--out", help="coefficient CSV (metadata JSON alongside)")
    p.set_defaults(func=cmd_filter_design)

    p = sub.add_parser("filter-apply", help="filter a trajectory")
    p.add_argument("--filter", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--extra-delay", type=float, default=0.0, help="[samples]")
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--dc-shift", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_apply)

    p = sub.add_parser("fit", help="fit a spectrum CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--model", choices=("thermal", "delayed"), default="thermal")
    p.add_argument("--band", type=_pair, required=True)
    p.add_argument("--init", type=_kv, action="append", help="name=value")
    p.add_argument("--fix", type=_kv, action="append", help="name=value")
    p.add_argument("--bound", type=_kv, action="append", help="name=lo:hi")
    p.add_argument("--nominal-tau", type=float, default=None, help="[s]")
    p.add_argument("--residuals", choices=("log", "linear"), default="log")
    p.add_argument("--label", default="")
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_fit)

    for name in PIPELINES:
        p = sub.add_parser(name, help=f"{PIPELINES[name]} pipeline")
        p.add_argument("--scenario", default=None, help="manifest name or path")
        p.add_argument("--output-dir", default="out")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
        p.add_argument("--seed", type=int, default=None)
        if name == "cool-study":
            p.add_argument("--high-q", action="store_true", help="low-pressure damping; long runtime")
        if name == "sweep-delay":
            p.add_argument("--gamma-tilde", type=float, default=None)
            p.add_argument("--gammav-tilde", type=float, default=None)
        p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("temperature", help="effective temperature from PSD areas")
    p.add_argument("--area-fb", type=float, required=True)
    p.add_argument("--area-ref", type=float, required=True)
    p.add_argument("--T-ref", dest="T_ref", type=float, default=300.0)
    p.set_defaults(func=cmd_temperature)

    for sp in sub.choices.values():
        _add_common(sp)
    return top


_SKIP = {"func", "command", "config", "print_config", "config_doc", "format"}


def _subparser(parser, command):
    for act in parser._subparsers._group_actions:
        if command in act.choices:
            return act.choices[command]
    raise KeyError(command)


def resolved_config(args):
    return {k: _clean(v) for k, v in sorted(vars(args).items()) if k not in _SKIP}


def parse(argv, parser=None):
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    args.config_doc = None
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read --config: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("--config must hold a JSON object")
        if args.command in PIPELINES:
            args.config_doc = doc
        else:
            sp = _subparser(parser, args.command)
            dests = {a.dest: a for a in sp._actions}
            defaults = {}
            for k, v in doc.items():
                d = k.replace("-", "_")
                if d not in dests or d in _SKIP:
                    raise ValidationError(f"unknown config key {k!r} for {args.command}")
                act = dests[d]
                if v is not None and act.type is not None and not isinstance(v, (list, dict)):
                    try:
                        v = act.type(str(v)) if act.type in (_pair, _kv) else act.type(v)
                    except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                        raise ValidationError(f"config key {k!r}: {exc}") from None
                elif isinstance(v, list) and act.type is _pair:
                    v = tuple(float(x) for x in v)
                defaults[d] = v
            sp.set_defaults(**defaults)
            args = parser.parse_args(argv)
            args.config_doc = None
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
        if args.print_config:
            sys.stdout.write(json.dumps(resolved_config(args), indent=2, sort_keys=True) + "\n")
            return 0
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except NumericalError as exc:
        sys.stderr.write(f"levkit: {type(exc).__name__}: {exc}\n")
        return 2
    except (LevkitError, ValueError, OSError) as exc:
        sys.stderr.write(f"levkit: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
