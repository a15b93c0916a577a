"""Least-squares fits of Welch spectra to the thermal and delayed-feedback PSDs.

The model compared with a one-sided spectrum per Hz is ``2 S gamma / D(w)``
(see :mod:`levkit.spectra`), so the fitted scale ``S`` estimates
``2 kB T / m`` in the units of the data.  Parameters and their units:

``S`` data units x s^-3, ``gamma`` and ``gamma_v`` in s^-1 (quoted as Hz),
``f0`` in Hz, ``tau`` in s.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import FeedbackParams, OscillatorParams
from .errors import BadBand, ConstraintViolation, NoConvergence, ValidationError
from .signal import Spectrum
from .spectra import TWO_PI, model_band_area, psd_delayed

PARAMS = ("S", "gamma", "f0", "tau", "gamma_v")
REPORT_COLUMNS = [
    "scale", "S_err", "gamma_hz", "gamma_err", "f0_hz", "f0_err", "tau_s", "tau_err",
    "tau_periods", "gamma_v_hz", "gamma_v_err", "area", "area_err",
]
_DEFAULT_BOUNDS = {
    "S": (0.0, math.inf),
    "gamma": (0.0, math.inf),
    "f0": (0.0, math.inf),
    "tau": (0.0, math.inf),
    "gamma_v": (0.0, math.inf),
}


@dataclass
class FitConstraints:
    """Fixed values and ``(lo, hi)`` bounds keyed by parameter name."""

    fixed: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in list(self.fixed) + list(self.bounds):
            if name not in PARAMS:
                raise ConstraintViolation(f"unknown parameter {name!r}; expected one of {PARAMS}")
        both = set(self.fixed) & set(self.bounds)
        if both:
            raise ConstraintViolation(f"parameters both fixed and bounded: {sorted(both)}")
        for name, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise ConstraintViolation(f"bounds for {name} need lo < hi, got ({lo}, {hi})")
        self.fixed = {k: float(v) for k, v in self.fixed.items()}
        self.bounds = {k: (float(lo), float(hi)) for k, (lo, hi) in self.bounds.items()}

    def bound(self, name):
        return self.bounds.get(name, _DEFAULT_BOUNDS[name])


@dataclass
class FitResult:
    model: str
    estimates: dict
    errors: dict
    free: tuple
    band: tuple
    area: float
    area_err: float
    cost: float
    residual_norm: float
    n_points: int
    n_iter: int
    status: str
    history: list = field(default_factory=list)
    residuals: str = "log"
    label: str = ""

    @property
    def tau_periods(self):
        if self.model == "thermal":
            return None
        return self.estimates["f0"] * self.estimates["tau"]

    def oscillator(self, mass=1.0, temperature=0.0):
        return OscillatorParams(self.estimates["f0"], self.estimates["gamma"], mass, temperature)

    def feedback(self):
        return FeedbackParams(0.0, self.estimates.get("gamma_v", 0.0), self.estimates.get("tau", 0.0))

    def model_psd(self, f):
        """Fitted one-sided model per Hz."""
        return _model(np.asarray(f, dtype=float), self.estimates)

    def to_row(self):
        e, s = self.estimates, self.errors
        delayed = self.model != "thermal"

        def opt(v):
            return v if delayed else None

        return {
            "scale": e["S"], "S_err": s.get("S", 0.0),
            "gamma_hz": e["gamma"], "gamma_err": s.get("gamma", 0.0),
            "f0_hz": e["f0"], "f0_err": s.get("f0", 0.0),
            "tau_s": opt(e.get("tau")), "tau_err": opt(s.get("tau", 0.0)),
            "tau_periods": opt(self.tau_periods),
            "gamma_v_hz": opt(e.get("gamma_v")), "gamma_v_err": opt(s.get("gamma_v", 0.0)),
            "area": self.area, "area_err": self.area_err,
        }


def _model(f, p):
    osc = OscillatorParams(p["f0"], p["gamma"], 1.0, 0.0)
    fb = FeedbackParams(0.0, p.get("gamma_v", 0.0), p.get("tau", 0.0))
    return 2.0 * psd_delayed(TWO_PI * f, osc, fb, p["S"])


def _residual_fn(f, data, kind, names, fixed, scale):
    if kind == "log":
        target = np.log10(data)
    elif kind == "linear":
        norm = float(np.max(data))
        target = data / norm
    else:
        raise ValidationError(f"unknown residual kind {kind!r}")

    def res(u):
        p = dict(fixed)
        p.update({n: ui * si for n, ui, si in zip(names, u, scale)})
        m = _model(f, p)
        if kind == "log":
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.log10(m) - target
        else:
            r = m / norm - target
        return np.where(np.isfinite(r), r, 1e6)

    return res


def _jacobian(res, u, r0, lo, hi, rel=1e-7):
    J = np.empty((len(r0), len(u)))
    for k in range(len(u)):
        h = rel * max(abs(u[k]), 1.0)
        up, dn = u.copy(), u.copy()
        up[k] = min(u[k] + h, hi[k])
        dn[k] = max(u[k] - h, lo[k])
        J[:, k] = (res(up) - res(dn)) / (up[k] - dn[k])
    return J


def levenberg_marquardt(res, u0, lo, hi, max_iter=200, ftol=1e-12, xtol=1e-12, lam0=1e-3):
    """Bounded Levenberg-Marquardt on ``0.5 * |res(u)|^2``.

    Parameters sitting on a bound whose descent direction points outward are
    held for that step (active set).  Trial steps are projected onto the box
    and only accepted when the objective decreases, so the recorded history
    is non-increasing.

    Returns ``(u, cost, J, history, n_iter)``.
    """
    u = np.clip(np.asarray(u0, dtype=float), lo, hi)
    r = res(u)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = lam0
    J = _jacobian(res, u, r, lo, hi)
    for it in range(1, max_iter + 1):
        g = J.T @ r
        held = ((u <= lo) & (g > 0)) | ((u >= hi) & (g < 0))
        free = ~held
        if not free.any() or np.max(np.abs(g[free])) <= 1e-15 * max(cost, 1e-300) or cost < 1e-28:
            return u, cost, J, history, it
        Jf = J[:, free]
        A = Jf.T @ Jf
        d = np.diag(A).copy()
        d[d == 0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.zeros_like(u)
                step[free] = np.linalg.solve(A + lam * np.diag(d), -g[free])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            un = np.clip(u + step, lo, hi)
            rn = res(un)
            cn = 0.5 * float(rn @ rn)
            if cn < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            return u, cost, J, history, it
        dx = np.max(np.abs(un - u) / np.maximum(np.abs(u), 1e-12))
        df = (cost - cn) / max(cost, 1e-300)
        u, r, cost = un, rn, cn
        history.append(cost)
        lam = max(lam / 5.0, 1e-12)
        J = _jacobian(res, u, r, lo, hi)
        if df < ftol or dx < xtol:
            return u, cost, J, history, it
    raise NoConvergence(f"no convergence after {max_iter} iterations (cost {cost:.6g})")


def _band_data(spectrum: Spectrum, band, min_bins=20):
    f_lo, f_hi = map(float, band)
    if not f_lo < f_hi:
        raise BadBand("band must satisfy f_lo < f_hi")
    m = spectrum.band_mask(f_lo, f_hi) & (spectrum.psd > 0)
    if m.sum() < min_bins:
        raise BadBand(f"only {int(m.sum())} usable bins in band, need {min_bins}")
    f, p = spectrum.f[m], spectrum.psd[m]
    k = int(np.argmax(p))
    if k == 0 or k == len(p) - 1:
        raise BadBand("spectral maximum lies on the band edge; band must contain the resonance")
    return f, p


def initial_guess(f, p):
    """``(S, gamma, f0)`` from peak position, half-power width and peak height."""
    k = int(np.argmax(p))
    f0 = float(f[k])
    half = p >= 0.5 * p[k]
    i, j = k, k
    while i > 0 and half[i - 1]:
        i -= 1
    while j < len(p) - 1 and half[j + 1]:
        j += 1
    df = f[1] - f[0]
    width = max(float(f[j] - f[i]), df)
    gamma = TWO_PI * width
    S = float(p[k]) * gamma * (TWO_PI * f0) ** 2 / 2.0
    return S, gamma, f0


def _fit(model, spectrum, band, start, constraints, residuals, max_iter, label):
    f, p = _band_data(spectrum, band)
    names_all = ("S", "gamma", "f0") if model == "thermal" else PARAMS
    fixed = {k: v for k, v in constraints.fixed.items() if k in names_all}
    if model == "thermal":
        fixed.update(tau=0.0, gamma_v=0.0)
    names = tuple(n for n in names_all if n not in constraints.fixed)
    if not names:
        raise ConstraintViolation("every parameter is fixed")
    scale = np.array([abs(start[n]) if start[n] != 0 else 1.0 for n in names])
    u0 = np.array([start[n] for n in names]) / scale
    lo = np.array([constraints.bound(n)[0] for n in names]) / scale
    hi = np.array([constraints.bound(n)[1] for n in names]) / scale
    for n, a, b, u in zip(names, lo, hi, u0):
        if not a <= u <= b:
            raise ConstraintViolation(f"initial {n} = {u * scale[names.index(n)]:.6g} outside its bounds")
    res = _residual_fn(f, p, residuals, names, fixed, scale)
    u, cost, J, history, n_iter = levenberg_marquardt(res, u0, lo, hi, max_iter=max_iter)

    est = dict(fixed)
    est.update({n: float(ui * si) for n, ui, si in zip(names, u, scale)})
    dof = max(len(f) - len(names), 1)
    s2 = 2.0 * cost / dof
    try:
        cov_u = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov_u = np.full((len(names), len(names)), np.nan)
    cov = cov_u * np.outer(scale, scale)
    errs = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)}
    errs.update({n: 0.0 for n in fixed if n in names_all})
    for n in names:
        a, b = constraints.bound(n)
        if not a <= est[n] <= b:
            raise ConstraintViolation(f"estimate {n} = {est[n]} left its bounds")

    band_t = (float(band[0]), float(band[1]))

    def area_of(q):
        osc = OscillatorParams(q["f0"], q["gamma"], 1.0, 0.0)
        fb = FeedbackParams(0.0, q.get("gamma_v", 0.0), q.get("tau", 0.0))
        return model_band_area(band_t[0], band_t[1], osc, fb, q["S"])

    area = area_of(est)
    grad = np.empty(len(names))
    for i, n in enumerate(names):
        h = 1e-6 * max(abs(est[n]), 1e-30)
        qp, qm = dict(est), dict(est)
        qp[n] += h
        qm[n] -= h
        grad[i] = (area_of(qp) - area_of(qm)) / (2 * h)
    area_err = float(math.sqrt(max(grad @ cov @ grad, 0.0))) if np.all(np.isfinite(cov)) else float("nan")
    rn = math.sqrt(2.0 * cost)
    return FitResult(model, est, errs, names, band_t, float(area), area_err, float(cost), rn,
                     len(f), n_iter, "converged", history, residuals, label)


def fit_thermal(spectrum: Spectrum, band, init=None, fixed=None, residuals="log",
                max_iter=200, label=""):
    """Fit the feedback-off model ``2 S gamma / ((w0^2 - w^2)^2 + (w gamma)^2)``.

    ``init`` may give any of ``S``, ``gamma``, ``f0``; missing values come from
    the spectrum (peak position, half-power width, peak height).
    """
    f, p = _band_data(spectrum, band)
    S0, g0, f00 = initial_guess(f, p)
    start = dict(S=S0, gamma=g0, f0=f00, tau=0.0, gamma_v=0.0)
    start.update(init or {})
    cons = FitConstraints(fixed=dict(fixed or {}))
    start.update(cons.fixed)
    return _fit("thermal", spectrum, band, start, cons, residuals, max_iter, label)


def fit_delayed(spectrum: Spectrum, band, constraints: FitConstraints | None = None, init=None,
                nominal_tau=None, residuals="log", max_iter=300, label=""):
    """Constrained fit of the delayed-feedback model.

    ``gamma`` is normally fixed from a feedback-off fit.  Unless bounded or
    fixed explicitly, ``tau`` is confined to ``nominal_tau +- 1/f0``.
    """
    constraints = constraints or FitConstraints()
    f, p = _band_data(spectrum, band)
    S0, w0, f00 = initial_guess(f, p)
    init = dict(init or {})
    start = dict(S=S0, f0=f00, gamma=init.get("gamma", constraints.fixed.get("gamma", 0.1 * w0)))
    start["gamma_v"] = max(w0 - start["gamma"], 1e-3 * w0)
    # peak height of the delayed model is about 2 S gamma / (w0^2 width^2)
    if start["gamma"] > 0:
        start["S"] = S0 * w0 / start["gamma"]
    if nominal_tau is None:
        nominal_tau = init.get("tau", constraints.fixed.get("tau"))
    if nominal_tau is None:
        raise ValidationError("fit_delayed needs nominal_tau (or an initial/fixed tau)")
    start["tau"] = float(nominal_tau)
    start.update(init)
    start.update(constraints.fixed)
    if "tau" not in constraints.fixed and "tau" not in constraints.bounds:
        period = 1.0 / start["f0"]
        constraints = FitConstraints(
            dict(constraints.fixed),
            dict(constraints.bounds, tau=(max(nominal_tau - period, 0.0), nominal_tau + period)),
        )
    # delayed-feedback peaks are usually shifted; a bounded S would be too, so start inside
    for n in PARAMS:
        a, b = constraints.bound(n)
        if n not in constraints.fixed and not a <= start[n] <= b:
            start[n] = min(max(start[n], a), b)
    return _fit("delayed", spectrum, band, start, constraints, residuals, max_iter, label)


def _fmt(v):
    return "" if v is None else repr(float(v))


def fit_report(results, csv_path=None, json_path=None, extra=None):
    """Tabulate fits with the fixed column roster; returns ``(csv_text, json_doc)``.

    Absent delay fields (feedback-off rows) are empty in CSV and ``null`` in
    JSON.  Labels and convergence data go to the JSON document only.
    """
    results = list(results)
    if not results:
        raise ValidationError("no fit results to report")
    rows = [r.to_row() for r in results]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    text = buf.getvalue()
    doc = dict(columns=REPORT_COLUMNS, rows=[
        dict(row, label=r.label, model=r.model, status=r.status, residuals=r.residuals,
             residual_norm=r.residual_norm, band=list(r.band), free=list(r.free))
        for row, r in zip(rows, results)
    ])
    if extra:
        doc.update(extra)
    if csv_path:
        Path(csv_path).write_text(text, encoding="utf-8", newline="")
    if json_path:
        Path(json_path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return text, doc


def read_report_csv(path_or_text):
    """Parse a report CSV back into a list of dicts (empty cells become ``None``)."""
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != REPORT_COLUMNS:
        raise ValidationError(f"unexpected report header {reader.fieldnames}")
    return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in reader]
