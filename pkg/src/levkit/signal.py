"""FIR band-pass design, filtering with extra delay, resampling and Welch PSDs."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .dynamics import Trajectory
from .errors import InvalidBand, RateMismatch, TooShort, ValidationError


@dataclass(frozen=True)
class FirFilter:
    """Linear-phase FIR filter.

    Attributes
    ----------
    coefficients : ndarray
        Odd-length, symmetric taps.
    fs : float
        Sample rate [Hz] the taps were designed for.
    band : tuple of float
        Passband ``(f_lo, f_hi)`` [Hz]; ``None`` for hand-made filters.
    window : str
    """

    coefficients: np.ndarray
    fs: float
    band: tuple | None = None
    window: str = "hamming"

    def __post_init__(self):
        h = np.asarray(self.coefficients, dtype=float)
        if h.ndim != 1 or len(h) % 2 != 1:
            raise ValidationError("FIR filters here have an odd number of taps")
        if not np.array_equal(h, h[::-1]):
            raise ValidationError("coefficients must be symmetric (linear phase)")
        if not self.fs > 0:
            raise ValidationError("fs must be positive")
        h.setflags(write=False)
        object.__setattr__(self, "coefficients", h)

    @property
    def n(self):
        return len(self.coefficients)

    @property
    def delay_samples(self):
        return (self.n - 1) // 2

    @property
    def dc_gain(self):
        return float(np.sum(self.coefficients))

    def metadata(self):
        return dict(n=self.n, fs=self.fs, band=None if self.band is None else list(self.band),
                    window=self.window, delay_samples=self.delay_samples)

    def to_files(self, csv_path, json_path=None, header_comment=None):
        """Coefficients as one-column CSV plus JSON metadata."""
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("coefficient\n")
            for c in self.coefficients:
                fh.write(repr(float(c)) + "\n")
        json_path.write_text(json.dumps(self.metadata(), indent=2) + "\n", encoding="utf-8")
        return csv_path, json_path

    @classmethod
    def from_files(cls, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text(encoding="utf-8"))
        with csv_path.open(encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        if lines[0].strip() != "coefficient":
            raise ValidationError(f"unexpected header {lines[0].strip()!r}")
        h = np.loadtxt(lines[1:], ndmin=1)
        band = tuple(meta["band"]) if meta.get("band") else None
        return cls(h, meta["fs"], band, meta.get("window", "hamming"))


def design_bandpass(n, fs, f_lo, f_hi, window="hamming"):
    """Windowed-sinc band-pass.

    The ideal band-pass impulse response is tapered by the window, shifted
    along the window shape so that the taps sum to zero (exact DC null), then
    scaled to unit gain at the band centre.
    """
    n = int(n)
    if n < 3 or n % 2 != 1:
        raise ValidationError("filter length must be an odd integer >= 3")
    if not 0 < f_lo < f_hi < 0.5 * fs:
        raise InvalidBand(f"need 0 < f_lo < f_hi < fs/2, got ({f_lo}, {f_hi}) at fs={fs}")
    m = np.arange(n) - (n - 1) / 2
    lo, hi = 2.0 * f_lo / fs, 2.0 * f_hi / fs
    ideal = hi * np.sinc(hi * m) - lo * np.sinc(lo * m)
    w = sps.get_window(window, n, fftbins=False)
    h = ideal * w
    h = h - (h.sum() / w.sum()) * w
    fc = 0.5 * (f_lo + f_hi)
    g = abs(np.sum(h * np.exp(-2j * np.pi * fc / fs * np.arange(n))))
    h = h / g
    h = 0.5 * (h + h[::-1])
    return FirFilter(h, float(fs), (float(f_lo), float(f_hi)), window)


def frequency_response(filt: FirFilter, freqs):
    """Complex response at ``freqs`` [Hz]."""
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    _, h = sps.freqz(filt.coefficients, worN=f, fs=filt.fs)
    return h


def gain_db(filt: FirFilter, freqs):
    return 20.0 * np.log10(np.abs(frequency_response(filt, freqs)))


def group_delay_periods(filt: FirFilter, f0):
    """Intrinsic delay ``((N - 1) / 2) / fs`` expressed in periods of ``f0``."""
    return (filt.n - 1) / 2 * f0 / filt.fs


def measure_delay_periods(filt: FirFilter, f0, envelope_periods=40.0):
    """Delay of a Gaussian tone burst at ``f0`` through the filter, in periods.

    The burst envelope has a standard deviation of ``envelope_periods``
    periods; the delay is the shift of the envelope centroid (analytic-signal
    magnitude) between input and output.
    """
    fs = filt.fs
    sigma = envelope_periods / f0
    span = 12 * sigma + 2 * filt.n / fs
    t = np.arange(int(math.ceil(span * fs))) / fs
    tc = 6 * sigma
    x = np.exp(-0.5 * ((t - tc) / sigma) ** 2) * np.sin(2 * np.pi * f0 * t)
    y = sps.lfilter(filt.coefficients, 1.0, x)

    def centroid(s):
        e = np.abs(sps.hilbert(s)) ** 2
        return np.sum(t * e) / np.sum(e)

    return (centroid(y) - centroid(x)) * f0


def _shift(y, delay):
    # delay by a possibly fractional number of samples, zero-filled, linear interpolation
    k = int(math.floor(delay))
    frac = delay - k
    out = np.zeros_like(y)
    if k < len(y):
        out[k:] = y[: len(y) - k]
    if frac > 0:
        prev = np.zeros_like(y)
        if k + 1 < len(y):
            prev[k + 1:] = y[: len(y) - k - 1]
        out = (1.0 - frac) * out + frac * prev
    return out


def apply_filter(filt: FirFilter, traj: Trajectory, extra_delay=0.0, gain=1.0, dc_shift=0.0):
    """Causal convolution, optional extra delay [samples], then ``gain * y + dc_shift``.

    The output has the input length; the first ``N - 1 + ceil(extra_delay)``
    samples are filter warm-up and are marked as such.
    """
    if not math.isclose(traj.fs, filt.fs, rel_tol=1e-9):
        raise RateMismatch(f"trajectory at {traj.fs} Hz, filter designed for {filt.fs} Hz")
    if extra_delay < 0:
        raise ValidationError("extra_delay must be non-negative")
    x = traj.x if traj.truncated_at is None else traj.x[: traj.truncated_at]
    y = sps.lfilter(filt.coefficients, 1.0, x)
    if extra_delay:
        y = _shift(y, float(extra_delay))
    y = gain * y + dc_shift
    warm = min(max(traj.warmup, filt.n - 1 + int(math.ceil(extra_delay))), len(y) - 1)
    meta = dict(traj.meta)
    meta["filter"] = dict(filt.metadata(), extra_delay=float(extra_delay), gain=float(gain),
                          dc_shift=float(dc_shift))
    return Trajectory(traj.fs, y, None, traj.t0, traj.seed, None, warm, meta)


def decimate(traj: Trajectory, factor):
    """Anti-aliased integer-factor downsampling (zero-phase FIR)."""
    factor = int(factor)
    if factor < 1:
        raise ValidationError("factor must be >= 1")
    if factor == 1:
        return traj
    if len(traj.x) < 8 * factor:
        raise TooShort("trajectory too short to decimate")

    def dec(a):
        return None if a is None else sps.decimate(a, factor, ftype="fir", zero_phase=True)

    meta = dict(traj.meta, decimated_by=factor)
    return Trajectory(traj.fs / factor, dec(traj.x), dec(traj.v), traj.t0, traj.seed, None,
                      traj.warmup // factor, meta)


def resample(traj: Trajectory, fs_new, max_denominator=1000):
    """Rational polyphase resampling to ``fs_new`` (e.g. 2440 -> 1250 Hz is 125/244)."""
    ratio = Fraction(fs_new / traj.fs).limit_denominator(max_denominator)
    up, down = ratio.numerator, ratio.denominator
    if up == down:
        return traj

    def rs(a):
        return None if a is None else sps.resample_poly(a, up, down)

    fs = traj.fs * up / down
    x = rs(traj.x)
    meta = dict(traj.meta, resampled=f"{up}/{down}")
    return Trajectory(fs, x, rs(traj.v), traj.t0, traj.seed, None,
                      min(int(traj.warmup * up / down), len(x) - 1), meta)


@dataclass
class Spectrum:
    """One-sided PSD [m^2/Hz] on a strictly increasing frequency grid [Hz]."""

    f: np.ndarray
    psd: np.ndarray
    nperseg: int | None = None
    overlap: float | None = None
    window: str | None = None
    fs: float | None = None
    units: str = "m^2/Hz"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.psd = np.asarray(self.psd, dtype=float)
        if self.f.shape != self.psd.shape or self.f.ndim != 1 or len(self.f) < 2:
            raise ValidationError("f and psd must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(self.f) <= 0) or self.f[0] < 0:
            raise ValidationError("frequencies must be non-negative and strictly increasing")
        if np.any(self.psd < 0) or not np.all(np.isfinite(self.psd)):
            raise ValidationError("PSD values must be finite and non-negative")

    @property
    def df(self):
        return float(self.f[1] - self.f[0])

    def band_mask(self, f_lo, f_hi):
        return (self.f >= f_lo) & (self.f <= f_hi)

    def band(self, f_lo, f_hi):
        m = self.band_mask(f_lo, f_hi)
        return Spectrum(self.f[m], self.psd[m], self.nperseg, self.overlap, self.window, self.fs,
                        self.units, dict(self.meta))

    def integrate(self, f_lo=None, f_hi=None):
        """Trapezoid integral over ``[f_lo, f_hi]`` (inclusive bins)."""
        f_lo = self.f[0] if f_lo is None else f_lo
        f_hi = self.f[-1] if f_hi is None else f_hi
        m = self.band_mask(f_lo, f_hi)
        if m.sum() < 2:
            raise ValidationError("fewer than two bins in the integration band")
        return float(np.trapezoid(self.psd[m], self.f[m]))

    def to_csv(self, path, header_comment=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["f_hz", "psd"])
            for a, b in zip(self.f, self.psd):
                w.writerow([repr(float(a)), repr(float(b))])
        return path

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        if lines[0].strip() != "f_hz,psd":
            raise ValidationError(f"expected header f_hz,psd, got {lines[0].strip()}")
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        return cls(data[:, 0], data[:, 1])


def default_nperseg(n):
    """Largest power of two giving at least 8 segments, at least 256 samples when possible."""
    p = 1 << max(int(math.log2(max(n // 8, 1))), 0)
    return int(min(n, max(p, min(256, n))))


def welch_psd(traj: Trajectory, nperseg=None, overlap_fraction=0.5, window="hann",
              drop_warmup=True):
    """Welch estimate, one-sided, density scaled so that ``sum(psd) * df`` is the variance."""
    tr = traj.stationary() if drop_warmup else traj
    x = tr.x if tr.truncated_at is None else tr.x[: tr.truncated_at]
    n = len(x)
    nperseg = default_nperseg(n) if nperseg is None else int(nperseg)
    if nperseg < 2:
        raise ValidationError("nperseg must be >= 2")
    if nperseg > n:
        raise TooShort(f"nperseg={nperseg} exceeds the {n} available samples")
    if not 0 <= overlap_fraction < 1:
        raise ValidationError("overlap_fraction must be in [0, 1)")
    noverlap = int(round(overlap_fraction * nperseg))
    f, p = sps.welch(x, fs=tr.fs, window=window, nperseg=nperseg, noverlap=noverlap,
                     detrend="constant", return_onesided=True, scaling="density")
    return Spectrum(f, p, nperseg, float(overlap_fraction), window, tr.fs,
                    meta=dict(n_samples=n, seed=tr.seed))
