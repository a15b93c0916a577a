import csv
import json
import math

import numpy as np
import pytest
from scipy import integrate, optimize

from levkit.constants import K_B
from levkit.dynamics import FeedbackParams, OscillatorParams
from levkit.errors import NoPeak, ValidationError
from levkit.spectra import (
    TemperatureReport, TWO_PI, delay_is_physical, effective_temperature,
    effective_temperature_theory, model_band_area, normalized_area, normalized_psd,
    peak_frequency, peak_frequency_tilde, psd_delayed, psd_model_hz, psd_thermal, psd_tilde,
    t_ratio, write_psd_model_csv, write_t_ratio_csv,
)

F0 = 18.9
MASS = 50e-6


def osc(gt=0.01):
    return OscillatorParams.from_tilde(gt, F0, MASS)


def test_thermal_substitutions():
    p = osc()
    g, w0, s = p.gamma, p.omega0, 2 * K_B * 300 / MASS
    assert psd_thermal(0.0, p) == pytest.approx(s * g / w0 ** 4, rel=1e-14)
    assert psd_thermal(w0, p) == pytest.approx(s / (g * w0 ** 2), rel=1e-14)
    with pytest.raises(ValidationError):
        psd_thermal(-1.0, p)


def test_thermal_equipartition_integral():
    p = osc(0.05)
    w0, g = p.omega0, p.gamma
    pts = [w0 - 50 * g, w0, w0 + 50 * g]
    v = sum(integrate.quad(lambda w: psd_thermal(w, p), a, b, limit=500, epsabs=0, epsrel=1e-12)[0]
            for a, b in zip([0.0] + pts, pts + [np.inf])) / math.pi
    assert v == pytest.approx(K_B * 300 / (MASS * w0 ** 2), rel=1e-3)


def test_delayed_reductions():
    p = osc()
    w = np.linspace(0, 3 * p.omega0, 2001)
    assert np.allclose(psd_delayed(w, p, FeedbackParams()), psd_thermal(w, p), rtol=1e-14, atol=0)
    gv = 0.5 * F0
    boosted = OscillatorParams(F0, p.gamma + gv, MASS)
    lhs = psd_delayed(w, p, FeedbackParams(0.0, gv, 0.0))
    # scale carries gamma; boosted form carries gamma + Gv in the numerator
    rhs = psd_thermal(w, boosted) * p.gamma / (p.gamma + gv)
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=0)


def test_delayed_flag_and_model_hz():
    p = osc()
    _, ok = psd_delayed(1.0, p, FeedbackParams.from_tilde(F0, 0, 0.5, 2.1), return_flag=True)
    _, bad = psd_delayed(1.0, p, FeedbackParams.from_tilde(F0, 0, 0.5, 1.5), return_flag=True)
    assert ok and not bad
    assert delay_is_physical(3.25) and not delay_is_physical(3.3)
    f = np.array([10.0, 18.9])
    assert np.allclose(psd_model_hz(f, p), 2 * psd_thermal(TWO_PI * f, p), rtol=1e-14, atol=0)


def test_side_peaks_grow_with_delay():
    # weight moves off resonance and the centre dips below the flanking maxima
    w = np.linspace(0.05, 4 * TWO_PI, 400001)
    off, dip = [], []
    for tau in (1.0, 2.0, 3.0):
        s = psd_tilde(w, 0.01, 0.5, tau)
        m = np.abs(w - TWO_PI) < 0.3
        off.append(1 - np.trapezoid(s[m], w[m]) / np.trapezoid(s, w))
        dip.append(psd_tilde(TWO_PI, 0.01, 0.5, tau) / s.max())
    assert off[0] < off[1] < off[2]
    assert dip[0] > dip[1] > dip[2]


@pytest.mark.parametrize("g,G", [(0.01, 0.5), (0.05, 0.2), (1e-3, 1e-2), (0.1, 1.0), (1e-3, 1.0)])
def test_unit_area_at_zero_delay(g, G):
    assert normalized_area(g, G, 0.0) == pytest.approx(1.0, abs=1e-3)


def test_lorentzian_area_against_quad():
    g = 0.05
    fn = lambda w: float(normalized_psd(w, g, 0.0, 0.0))
    q = sum(
        integrate.quad(fn, a, b, limit=1000, epsrel=1e-11, epsabs=0)[0]
        for a, b in [(0, TWO_PI - 1), (TWO_PI - 1, TWO_PI + 1), (TWO_PI + 1, 1e3)])
    q += integrate.quad(fn, 1e3, np.inf, epsabs=0, epsrel=1e-8)[0]
    assert normalized_area(g, 0.0, 0.0) == pytest.approx(q, rel=1e-6)


def test_peak_frequency_limits_and_shift():
    assert peak_frequency_tilde(0.0, 0.0, 0.0) == pytest.approx(TWO_PI, rel=1e-15)
    ws = [peak_frequency_tilde(0.01, 0.1, t) for t in (0.0, 0.01, 0.05)]
    assert ws[0] < ws[1] < ws[2]
    with pytest.raises(NoPeak):
        peak_frequency_tilde(0.01, 0.5, 2.0)
    p = osc()
    fb = FeedbackParams.from_tilde(F0, 0, 0.1, 0.01)
    assert peak_frequency(p, fb) == pytest.approx(peak_frequency_tilde(0.01, 0.1, 0.01) * F0)


def test_peak_frequency_matches_golden_section_argmax():
    g, G, tau = 0.01, 0.1, 0.01
    res = optimize.minimize_scalar(lambda w: -psd_tilde(w, g, G, tau), bracket=(5.8, 6.2, 6.8),
                                   method="golden", tol=1e-12)
    assert peak_frequency_tilde(g, G, tau) == pytest.approx(res.x, rel=1e-3)


def test_t_ratio_values():
    assert t_ratio(0.01, 0.5, 0.0) == 0.0
    # the unit reference only reaches zero once the band holds the Lorentzian tails
    assert abs(t_ratio(0.01, 0.5, 0.0, band=(0.0, 50 * F0), reference="unit")) < 1e-2
    lo, hi = TWO_PI * (F0 - 5) / F0, TWO_PI * (F0 + 5) / F0
    q = integrate.quad(lambda w: float(normalized_psd(w, 0.01, 0.5, 0.0)), lo, hi,
                       points=[TWO_PI], limit=500, epsrel=1e-12)[0]
    assert t_ratio(0.01, 0.5, 0.0, reference="unit") == pytest.approx(math.log10(q), abs=1e-6)
    cool = t_ratio(0.01, 0.5, 1.0)
    hot = t_ratio(0.01, 0.5, 3.0)
    assert cool < hot
    assert t_ratio(0.01, 0.5, 0.5) < 0.1 < t_ratio(0.01, 0.5, 2.0)
    with pytest.raises(ValidationError):
        t_ratio(0.01, 0.5, 1.0, reference="bogus")


def test_t_ratio_cooling_pockets_near_integers():
    vals = [t_ratio(0.01, 0.15, tau) for tau in (7.9, 8.0, 8.1)]
    assert vals[1] < vals[0] and vals[1] < vals[2]


def test_effective_temperature_examples():
    assert effective_temperature(2.94e-16, 2.76e-13) == pytest.approx(0.320, abs=0.005)
    assert effective_temperature(5.0, 5.0, 300.0) == 300.0
    assert effective_temperature(4.89e-16, 2.76e-13) == pytest.approx(0.53, abs=0.005)
    with pytest.raises(ValidationError):
        effective_temperature(0.0, 1.0)


def test_temperature_paths_agree_at_zero_delay():
    g, G = 0.01, 0.5
    p = osc(g)
    lo, hi = 0.0, 10 * F0
    a_ref = model_band_area(lo, hi, p)
    a_fb = model_band_area(lo, hi, p, FeedbackParams.from_tilde(F0, 0, G, 0.0))
    assert effective_temperature(a_fb, a_ref) == pytest.approx(
        effective_temperature_theory(g, G), rel=1e-3)


def test_model_band_area_is_equipartition_share():
    p = osc(0.05)
    a = model_band_area(0.0, 50 * F0, p)
    assert a == pytest.approx(p.thermal_variance / 2, rel=1e-3)


def test_temperature_report(tmp_path):
    r = TemperatureReport.from_areas(2.94e-16, 2.76e-13, band=(13.9, 23.9))
    assert r.T_eff == pytest.approx(0.3196, rel=1e-3)
    assert r.t_ratio == pytest.approx(math.log10(2.94e-16 / 2.76e-13))
    d = json.loads(open(r.to_json(tmp_path / "t.json")).read())
    assert d["f_min"] == 13.9
    with pytest.raises(ValidationError):
        TemperatureReport(2.0, 1.0, 1.0, 1.0, 300.0, 300.0, 0.0)


def test_csv_exports(tmp_path):
    write_t_ratio_csv(tmp_path / "t.csv", [0.0, 1.0], [0.0, 0.1], "h=1")
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["# h=1"] and rows[1] == ["tau_tilde", "t_ratio"]
    write_psd_model_csv(tmp_path / "p.csv", [1.0], [2.0])
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "f_hz,psd_model"
