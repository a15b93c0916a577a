"""Closed-form PSDs of the thermally driven oscillator with delayed feedback.

Convention: ``S_xx(w)`` is two-sided in angular frequency, so the variance is
``int_0^inf S_xx dw / pi``.  A one-sided Welch estimate per Hz of the same
process is ``2 S_xx(2 pi f)``.  Band areas follow the fit-table convention
``A = int S_xx(2 pi f) df`` [m^2].
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .constants import K_B
from .dynamics import FeedbackParams, OscillatorParams
from .errors import NoConvergence, NoPeak, ValidationError

TWO_PI = 2.0 * math.pi
W0_TILDE_SQ = TWO_PI ** 2


def psd_thermal(omega, params: OscillatorParams):
    """``(2 gamma kB T / m) / ((w0^2 - w^2)^2 + (w gamma)^2)`` [m^2 s]."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValidationError("omega must be non-negative")
    s = 2.0 * K_B * params.temperature / params.mass
    w0 = params.omega0
    return s * params.gamma / ((w0 * w0 - w * w) ** 2 + (w * params.gamma) ** 2)


def delay_is_physical(tau_tilde, half_width=0.25):
    """True when ``tau~`` lies within ``half_width`` of an integer number of periods."""
    return abs(tau_tilde - round(tau_tilde)) <= half_width


def _delayed_core(w, w0sq, gamma, gx, gv, tau):
    c, s = np.cos(w * tau), np.sin(w * tau)
    re = w0sq - w * w + w * gv * s + gx * c
    im = w * gamma + w * gv * c - gx * s
    return gamma / (re * re + im * im)


def psd_delayed(omega, params: OscillatorParams, fb: FeedbackParams, scale=None,
                return_flag=False):
    """Delayed-feedback PSD ``S gamma / (Re^2 + Im^2)`` [m^2 s].

    ``Re = w0^2 - w^2 + w Gv sin(w tau) + Gx f0 cos(w tau)`` and
    ``Im = w gamma + w Gv cos(w tau) - Gx f0 sin(w tau)``.  ``scale`` defaults
    to ``2 kB T / m``.  With ``return_flag=True`` a second value reports
    whether the delay lies in a window where the closed form is physical
    (stationary motion); the values are computed either way.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValidationError("omega must be non-negative")
    s = params.psd_scale if scale is None else float(scale)
    vals = s * _delayed_core(w, params.omega0 ** 2, params.gamma, fb.gamma_x * params.f0,
                             fb.gamma_v, fb.tau)
    if return_flag:
        return vals, delay_is_physical(fb.tau * params.f0)
    return vals


def psd_tilde(w_tilde, gamma_tilde, gamma_v_tilde=0.0, tau_tilde=0.0, gamma_x_tilde=0.0):
    """Dimensionless delayed PSD in natural units (``S~ = 1``)."""
    w = np.asarray(w_tilde, dtype=float)
    return _delayed_core(w, W0_TILDE_SQ, gamma_tilde, gamma_x_tilde, gamma_v_tilde, tau_tilde)


def psd_model_hz(f, params: OscillatorParams, fb: FeedbackParams | None = None, scale=None):
    """One-sided model per Hz, ``2 S_xx(2 pi f)``, comparable to a Welch estimate [m^2/Hz]."""
    fb = fb or FeedbackParams()
    return 2.0 * psd_delayed(TWO_PI * np.asarray(f, dtype=float), params, fb, scale)


def normalization_factor(gamma_tilde, gamma_v_tilde):
    return W0_TILDE_SQ * (gamma_tilde + gamma_v_tilde) / gamma_tilde / (0.5 * math.pi)


def normalized_psd(w_tilde, gamma_tilde, gamma_v_tilde, tau_tilde, gamma_x_tilde=0.0):
    """``S~`` scaled so that its integral over ``[0, inf)`` is one at ``tau~ = 0``."""
    if not gamma_tilde > 0:
        raise ValidationError("gamma_tilde must be positive")
    return (psd_tilde(w_tilde, gamma_tilde, gamma_v_tilde, tau_tilde, gamma_x_tilde)
            * normalization_factor(gamma_tilde, gamma_v_tilde))


def integrate_band(fn, lo, hi, rtol=1e-8, n0=4097, max_points=1 << 22, breakpoints=()):
    """Adaptive trapezoid of ``fn`` over ``[lo, hi]`` with a Richardson check.

    The grid is doubled until the Richardson error estimate ``|T_2n - T_n| / 3``
    falls below ``rtol`` times the integral; at least two doublings are made.
    Optional ``breakpoints`` inside the interval split it into pieces
    integrated independently.
    """
    if not hi > lo:
        raise ValidationError("need hi > lo")
    edges = [lo] + sorted(b for b in breakpoints if lo < b < hi) + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        x = np.linspace(a, b, n0)
        y = fn(x)
        # exact step; x[1] - x[0] loses digits when the interval sits far from zero
        h = (b - a) / (n0 - 1)
        prev = float(h * (np.sum(y) - 0.5 * (y[0] + y[-1])))
        level = 0
        while True:
            xm = 0.5 * (x[:-1] + x[1:])
            ym = fn(xm)
            cur = 0.5 * prev + 0.5 * float(np.sum(ym)) * h
            h *= 0.5
            level += 1
            xx = np.empty(2 * len(x) - 1)
            xx[0::2], xx[1::2] = x, xm
            yy = np.empty_like(xx)
            yy[0::2], yy[1::2] = y, ym
            x, y = xx, yy
            if level >= 2 and abs(cur - prev) / 3.0 <= rtol * abs(cur):
                break
            if len(x) > max_points:
                raise NoConvergence(f"trapezoid did not reach rtol={rtol} on [{a}, {b}]")
            prev = cur
        total += cur
    return total


def resonance_breakpoints(center, half_width, lo, hi, ratio=4.0):
    """Points ``center +- half_width * ratio**k`` inside ``(lo, hi)``.

    Splitting a band there keeps the relative curvature of a resonance bounded
    on every piece, so the trapezoid converges at the same rate however
    narrow the peak is.
    """
    if not half_width > 0:
        return (center,)
    pts = [center]
    d = half_width
    while center - d > lo or center + d < hi:
        pts += [center - d, center + d]
        d *= ratio
    return tuple(sorted(x for x in pts if lo < x < hi))


def normalized_area(gamma_tilde, gamma_v_tilde, tau_tilde, w_lo=0.0, w_hi=math.inf,
                    gamma_x_tilde=0.0, rtol=1e-8):
    """Integral of :func:`normalized_psd` over ``[w_lo, w_hi]`` (``w_hi`` may be infinite).

    An infinite upper limit is handled by integrating to a finite cut and
    adding the asymptotic ``w^-4`` tail analytically.
    """
    cut = w_hi
    tail = 0.0
    if math.isinf(w_hi):
        cut = max(200.0, 4.0 * (w_lo + 1.0))
        tail = gamma_tilde / (3.0 * cut ** 3) * normalization_factor(gamma_tilde, gamma_v_tilde)
    bps = resonance_breakpoints(TWO_PI, 0.5 * (gamma_tilde + abs(gamma_v_tilde)), w_lo, cut)

    def fn(w):
        return normalized_psd(w, gamma_tilde, gamma_v_tilde, tau_tilde, gamma_x_tilde)

    return integrate_band(fn, w_lo, cut, rtol=rtol, n0=257, breakpoints=bps) + tail


def band_tilde(f0, band_hz=5.0):
    """Default band ``f0 +- 5 Hz`` in units of ``w~ = 2 pi f / f0``."""
    return TWO_PI * (f0 - band_hz) / f0, TWO_PI * (f0 + band_hz) / f0


def t_ratio(gamma_tilde, gamma_v_tilde, tau_tilde, band=None, f0=18.9, reference="tau0",
            gamma_x_tilde=0.0, rtol=1e-8):
    """``log10`` of the band area of the normalised PSD.

    Parameters
    ----------
    band : (float, float), optional
        Integration band in Hz; default ``f0 +- 5 Hz``.
    reference : {"tau0", "unit"}
        ``"tau0"`` divides by the band area at ``tau~ = 0`` (same gains), so the
        truncation of the band cancels; ``"unit"`` uses the normalised area as is.
    """
    lo, hi = band_tilde(f0) if band is None else (TWO_PI * band[0] / f0, TWO_PI * band[1] / f0)
    if not 0 <= lo < hi:
        raise ValidationError("invalid band")
    a = normalized_area(gamma_tilde, gamma_v_tilde, tau_tilde, lo, hi, gamma_x_tilde, rtol)
    if reference == "unit":
        return math.log10(a)
    if reference != "tau0":
        raise ValidationError(f"unknown reference {reference!r}")
    a0 = normalized_area(gamma_tilde, gamma_v_tilde, 0.0, lo, hi, gamma_x_tilde, rtol)
    return math.log10(a / a0)


def peak_frequency_tilde(gamma_tilde, gamma_v_tilde, tau_tilde):
    """Small-delay peak ``w~_p = sqrt(8 pi^2 a^2 - (g~ + Gv~)^2) / (sqrt(2) a^2)``, ``a = 1 - Gv~ tau~``."""
    a = 1.0 - gamma_v_tilde * tau_tilde
    rad = 8.0 * math.pi ** 2 * a * a - (gamma_tilde + gamma_v_tilde) ** 2
    if a == 0 or rad <= 0:
        raise NoPeak(f"no real peak: radicand {rad:.3g}")
    return math.sqrt(rad) / (math.sqrt(2.0) * a * a)


def peak_frequency(params: OscillatorParams, fb: FeedbackParams):
    """Peak angular frequency [rad/s] in the small-delay approximation."""
    _, gv, tau_t = fb.tilde(params.f0)
    return peak_frequency_tilde(params.gamma_tilde, gv, tau_t) * params.f0


def effective_temperature(area_fb, area_ref, T_ref=300.0):
    """``T_ref * area_fb / area_ref``."""
    if not (area_fb > 0 and area_ref > 0):
        raise ValidationError("areas must be positive")
    if not T_ref >= 0:
        raise ValidationError("T_ref must be non-negative")
    return T_ref * area_fb / area_ref


def effective_temperature_theory(gamma_tilde, gamma_v_tilde, T_ref=300.0, t_ratio_value=0.0):
    """Closed-form path ``T_ref * g~ / (g~ + Gv~) * 10**T_ratio``.

    At ``tau = 0`` (``T_ratio = 0``) this equals the area-ratio temperature
    against the feedback-off spectrum.
    """
    return T_ref * gamma_tilde / (gamma_tilde + gamma_v_tilde) * 10.0 ** t_ratio_value


@dataclass(frozen=True)
class TemperatureReport:
    f_min: float
    f_max: float
    area: float
    area_ref: float
    T_ref: float
    T_eff: float
    t_ratio: float

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise ValidationError("f_min must be below f_max")
        if not (self.area > 0 and self.area_ref > 0):
            raise ValidationError("areas must be positive")

    @classmethod
    def from_areas(cls, area, area_ref, T_ref=300.0, band=(float("nan"), float("nan"))):
        f_min, f_max = band
        if math.isnan(f_min):
            f_min, f_max = 0.0, math.inf
        return cls(float(f_min), float(f_max), float(area), float(area_ref), float(T_ref),
                   effective_temperature(area, area_ref, T_ref), math.log10(area / area_ref))

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["f_max"]):
            d["f_max"] = None
        return d

    def to_json(self, path, extra=None):
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def model_band_area(f_lo, f_hi, params: OscillatorParams, fb: FeedbackParams | None = None,
                    scale=None, rtol=1e-9):
    """``int S_xx(2 pi f) df`` over ``[f_lo, f_hi]`` [m^2]."""
    fb = fb or FeedbackParams()
    kap = params.gamma + abs(fb.gamma_v)
    bps = resonance_breakpoints(params.f0, kap / (2 * TWO_PI), f_lo, f_hi)
    return integrate_band(lambda f: psd_delayed(TWO_PI * f, params, fb, scale),
                          f_lo, f_hi, rtol=rtol, n0=257, breakpoints=bps)


def _write_columns(path, header, cols, header_comment=None):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(c)) for c in row])
    return path


def write_t_ratio_csv(path, tau_tilde, values, header_comment=None):
    return _write_columns(path, ["tau_tilde", "t_ratio"], [tau_tilde, values], header_comment)


def write_psd_model_csv(path, f_hz, psd, header_comment=None):
    return _write_columns(path, ["f_hz", "psd_model"], [f_hz, psd], header_comment)
