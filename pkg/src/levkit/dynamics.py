"""Thermally driven oscillator with delayed position/velocity feedback.

The equation of motion::

    x'' + gamma x' + w0^2 x + Gx f0 x(t - tau) + Gv x'(t - tau) = sqrt(2 gamma kB T / m) xi(t)

is integrated in natural units (time in 1/f0, length in
``l = sqrt(2 kB T / (m f0^2))``) where it reads::

    x~'' + g~ x~' + (2 pi)^2 x~ + Gx~ x~_tau + Gv~ x~'_tau = sqrt(g~) xi~

Damping convention: ``gamma`` is the coefficient of the velocity in the
equation of motion.  The amplitude of a free ringdown decays as
``exp(-kappa t)`` with ``kappa = gamma / 2`` and ``Q = pi f0 / kappa``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import signal as sps

from .constants import K_B
from .errors import BlowUp, InsufficientPeaks, ValidationError

TWO_PI = 2.0 * math.pi
DEFAULT_STEPS_PER_PERIOD = 500
MAX_DT_PERIODS = 1.0 / 50.0
DEFAULT_BLOW_BOUND = 1e6
_CHUNK = 1 << 20


@dataclass(frozen=True)
class OscillatorParams:
    """Natural frequency ``f0`` [Hz], damping ``gamma`` [Hz, EOM convention], mass [kg], bath temperature [K].

    ``temperature = 0`` is accepted and switches the thermal force off.
    """

    f0: float
    gamma: float
    mass: float
    temperature: float = 300.0

    def __post_init__(self):
        if not self.f0 > 0 or not self.mass > 0:
            raise ValidationError("f0 and mass must be positive")
        if not self.gamma >= 0:
            raise ValidationError("gamma must be non-negative")
        if not self.temperature >= 0:
            raise ValidationError("temperature must be non-negative")

    @property
    def omega0(self):
        return TWO_PI * self.f0

    @property
    def gamma_tilde(self):
        return self.gamma / self.f0

    @property
    def kappa(self):
        """Amplitude decay constant of a free ringdown, ``gamma / 2``."""
        return 0.5 * self.gamma

    @property
    def quality_factor(self):
        return math.inf if self.gamma == 0 else self.omega0 / self.gamma

    @property
    def length_scale(self):
        """``sqrt(2 kB T / (m f0^2))``; zero at zero temperature."""
        return math.sqrt(2.0 * K_B * self.temperature / (self.mass * self.f0 ** 2))

    @property
    def thermal_variance(self):
        """Equipartition variance ``kB T / (m w0^2)`` in m^2."""
        return K_B * self.temperature / (self.mass * self.omega0 ** 2)

    @property
    def psd_scale(self):
        """Fit scale ``S = 2 kB T / m``."""
        return 2.0 * K_B * self.temperature / self.mass

    @classmethod
    def from_tilde(cls, gamma_tilde, f0, mass, temperature=300.0):
        return cls(f0, gamma_tilde * f0, mass, temperature)

    @classmethod
    def from_kappa(cls, kappa, f0, mass, temperature=300.0):
        return cls(f0, 2.0 * kappa, mass, temperature)


@dataclass(frozen=True)
class FeedbackParams:
    """Position gain ``gamma_x`` [Hz], velocity gain ``gamma_v`` [Hz], delay ``tau`` [s]."""

    gamma_x: float = 0.0
    gamma_v: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValidationError("tau must be non-negative")

    def tilde(self, f0):
        """``(Gx~, Gv~, tau~)`` for an oscillator at ``f0``."""
        return self.gamma_x / f0, self.gamma_v / f0, self.tau * f0

    def tau_tilde(self, f0):
        return self.tau * f0

    @classmethod
    def from_tilde(cls, f0, gamma_x_tilde=0.0, gamma_v_tilde=0.0, tau_tilde=0.0):
        return cls(gamma_x_tilde * f0, gamma_v_tilde * f0, tau_tilde / f0)

    @property
    def active(self):
        return self.gamma_x != 0 or self.gamma_v != 0


@dataclass
class Trajectory:
    """Uniformly sampled position (and optionally velocity) in SI units."""

    fs: float
    x: np.ndarray
    v: np.ndarray | None = None
    t0: float = 0.0
    seed: int | None = None
    truncated_at: int | None = None
    warmup: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float)
            if self.v.shape != self.x.shape:
                raise ValidationError("x and v must have equal length")
        if not self.fs > 0:
            raise ValidationError("fs must be positive")
        if self.x.ndim != 1 or len(self.x) < 2:
            raise ValidationError("a trajectory needs at least two samples")
        if self.truncated_at is None and not np.all(np.isfinite(self.x)):
            raise ValidationError("non-finite samples in an untruncated trajectory")
        if not 0 <= self.warmup < len(self.x):
            raise ValidationError("warmup must be smaller than the sample count")

    def __len__(self):
        return len(self.x)

    @property
    def dt(self):
        return 1.0 / self.fs

    @property
    def t(self):
        return self.t0 + np.arange(len(self.x)) / self.fs

    @property
    def duration(self):
        return len(self.x) / self.fs

    def stationary(self):
        """Copy with the warm-up samples dropped."""
        if self.warmup == 0:
            return self
        v = None if self.v is None else self.v[self.warmup:]
        return Trajectory(self.fs, self.x[self.warmup:], v, self.t0 + self.warmup / self.fs,
                          self.seed, None if self.truncated_at is None else self.truncated_at - self.warmup,
                          0, dict(self.meta))

    def replace(self, **changes):
        d = dict(fs=self.fs, x=self.x, v=self.v, t0=self.t0, seed=self.seed,
                 truncated_at=self.truncated_at, warmup=self.warmup, meta=dict(self.meta))
        d.update(changes)
        return Trajectory(**d)

    def sidecar(self):
        return dict(fs=self.fs, t0=self.t0, seed=self.seed, n=len(self.x),
                    truncated_at=self.truncated_at, warmup=self.warmup, meta=self.meta)

    def to_csv(self, path, header_comment=None):
        """Write ``t,x[,v]`` to ``path`` and metadata to ``path`` with a ``.json`` suffix."""
        path = Path(path)
        cols = [self.t, self.x] + ([self.v] if self.v is not None else [])
        with path.open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x"] + (["v"] if self.v is not None else []))
            for row in zip(*cols):
                w.writerow([repr(float(c)) for c in row])
        side = path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        header = lines[0].strip().split(",")
        if header[:2] != ["t", "x"]:
            raise ValidationError(f"expected header t,x[,v], got {header}")
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        side = path.with_suffix(".json")
        if side.is_file():
            meta = json.loads(side.read_text(encoding="utf-8"))
            fs = meta["fs"]
        else:
            meta = {}
            fs = 1.0 / float(np.mean(np.diff(data[:, 0])))
        v = data[:, 2] if len(header) > 2 else None
        return cls(fs, data[:, 1], v, float(data[0, 0]), meta.get("seed"), meta.get("truncated_at"),
                   meta.get("warmup", 0), meta.get("meta", {}))


@dataclass
class SimOutcome:
    trajectory: Trajectory
    status: str
    blew_up_at: float | None = None
    max_abs_x_tilde: float = 0.0
    energy: np.ndarray | None = None
    steps: int = 0

    @property
    def completed(self):
        return self.status == "completed"

    def raise_for_status(self):
        if self.status != "completed":
            raise BlowUp(f"trajectory blew up at t = {self.blew_up_at:.6g} s", outcome=self)
        return self


@numba.njit(cache=True)
def _integrate(xh, vh, head, noise, sigma_sqdt, dt, gam, gx, gv, dsteps, frac, interp,
               bound, out, k, step0, stride):
    # semi-implicit Euler-Maruyama: velocity first, then position with the new velocity;
    # xh/vh are ring buffers whose slot `head` holds the current state
    n = xh.shape[0]
    x = xh[head]
    v = vh[head]
    w2 = 4.0 * np.pi * np.pi
    vmax = 0.0
    for i in range(noise.shape[0]):
        j0 = head - dsteps
        if j0 < 0:
            j0 += n
        if interp:
            j1 = j0 - 1
            if j1 < 0:
                j1 += n
            xd = (1.0 - frac) * xh[j0] + frac * xh[j1]
            vd = (1.0 - frac) * vh[j0] + frac * vh[j1]
        else:
            xd = xh[j0]
            vd = vh[j0]
        v = v + (-gam * v - w2 * x - gx * xd - gv * vd) * dt + sigma_sqdt * noise[i]
        x = x + v * dt
        head += 1
        if head == n:
            head = 0
        xh[head] = x
        vh[head] = v
        ax = abs(x)
        if ax > vmax:
            vmax = ax
        if (step0 + i + 1) % stride == 0:
            out[k, 0] = x
            out[k, 1] = v
            k += 1
        if not ax <= bound:
            out[k, 0] = x
            out[k, 1] = v
            return head, i + 1, k + 1, vmax, True
    return head, noise.shape[0], k, vmax, False


def default_dt(f0):
    return 1.0 / (DEFAULT_STEPS_PER_PERIOD * f0)


def default_burn_in(gamma_tilde, duration_tilde):
    """Burn-in in periods: ``20 / gamma~`` capped at a quarter of the run."""
    cap = 0.25 * duration_tilde
    if gamma_tilde <= 0:
        return cap
    return min(20.0 / gamma_tilde, cap)


def _run(gam, gx, gv, tau_t, dt_t, n_steps, sigma, x0, v0, stride, bound, rng,
         force_interpolation):
    d = tau_t / dt_t
    ds = int(math.floor(d + 1e-9))
    frac = d - ds
    if abs(frac) < 1e-9:
        frac = 0.0
    interp = force_interpolation or frac != 0.0
    n_buf = ds + 2
    xh = np.full(n_buf, float(x0))
    vh = np.full(n_buf, float(v0))
    n_rec = n_steps // stride + 2
    out = np.empty((n_rec, 2))
    out[0] = x0, v0
    k = 1
    head = 0
    done = 0
    vmax = abs(x0)
    sigma_sqdt = sigma * math.sqrt(dt_t)
    blew = False
    while done < n_steps:
        m = min(_CHUNK, n_steps - done)
        noise = rng.standard_normal(m) if sigma > 0 else np.zeros(m)
        head, took, k, cmax, blew = _integrate(
            xh, vh, head, noise, sigma_sqdt, dt_t, gam, gx, gv, ds, frac, interp,
            bound, out, k, done, stride)
        vmax = max(vmax, cmax)
        done += took
        if blew:
            break
    return out[:k], done, vmax, blew


def simulate(params: OscillatorParams, fb: FeedbackParams | None = None, duration=None,
             dt=None, seed=0, x0=0.0, v0=0.0, record_every=10, record_velocity=True,
             blow_bound=DEFAULT_BLOW_BOUND, burn_in=None, force_interpolation=False):
    """Integrate the delayed-feedback Langevin equation.

    Parameters
    ----------
    params, fb : OscillatorParams, FeedbackParams
    duration : float
        Simulated time [s]; must be at least the feedback delay.
    dt : float, optional
        Step [s]; default ``1 / (500 f0)``, at most ``1 / (50 f0)``.
    seed : int
        Seed for ``numpy.random.default_rng``.
    x0, v0 : float
        Initial state in SI units, also held as the pre-history for ``t < 0``.
    record_every : int
        Keep one state every ``record_every`` steps; the output rate is
        ``1 / (dt * record_every)``.
    blow_bound : float
        Bound on ``|x~|`` (natural units); exceeding it stops the run.
    burn_in : float, optional
        Warm-up [s] marked on the trajectory; default ``default_burn_in``.
    force_interpolation : bool
        Route integer-sample delays through the interpolating branch.

    Returns
    -------
    SimOutcome
        ``status`` is ``"completed"`` or ``"blew_up"``; a blown-up run keeps
        the partial trajectory up to and including the offending step.
    """
    fb = fb or FeedbackParams()
    f0 = params.f0
    dt = default_dt(f0) if dt is None else float(dt)
    if not dt > 0 or dt * f0 > MAX_DT_PERIODS * (1 + 1e-12):
        raise ValidationError(f"dt must be in (0, 1/(50 f0)] = (0, {1 / (50 * f0):.4g}] s")
    if duration is None or not duration > 0:
        raise ValidationError("duration must be positive")
    if duration < fb.tau:
        raise ValidationError("duration must be at least the feedback delay")
    if int(record_every) < 1:
        raise ValidationError("record_every must be >= 1")
    stride = int(record_every)
    gx, gv, tau_t = fb.tilde(f0)
    dt_t = dt * f0
    n_steps = int(round(duration / dt))
    if n_steps < stride:
        raise ValidationError("duration shorter than one recording interval")

    ell = params.length_scale
    if ell > 0:
        scale, sigma = ell, math.sqrt(params.gamma_tilde)
    else:
        scale, sigma = 1.0, 0.0
    vscale = scale * f0

    rng = np.random.default_rng(seed)
    rec, done, xmax, blew = _run(params.gamma_tilde, gx, gv, tau_t, dt_t, n_steps, sigma,
                                 x0 / scale, v0 / vscale, stride, float(blow_bound), rng,
                                 force_interpolation)
    fs = 1.0 / (dt * stride)
    if len(rec) < 2:
        rec = np.vstack([rec, rec])
    x = rec[:, 0] * scale
    v = rec[:, 1] * vscale if record_velocity else None
    if burn_in is None:
        burn_in = default_burn_in(params.gamma_tilde, duration * f0) / f0
    warm = min(int(round(burn_in * fs)), len(x) - 1) if not blew else 0
    meta = dict(params=asdict(params), feedback=asdict(fb), dt=dt, record_every=stride,
                length_scale=scale, blow_bound=float(blow_bound))
    traj = Trajectory(fs, x, v, 0.0, seed, len(x) if blew else None, warm, meta)
    w2 = TWO_PI ** 2
    energy = 0.5 * (rec[:, 1] ** 2 + w2 * rec[:, 0] ** 2)
    return SimOutcome(traj, "blew_up" if blew else "completed", done * dt if blew else None,
                      float(xmax), energy, done)


def ringdown(params: OscillatorParams, x0, duration, dt=None, record_every=10):
    """Noise-free free decay from rest at ``x0`` [m]; the bath temperature is ignored."""
    quiet = OscillatorParams(params.f0, params.gamma, params.mass, 0.0)
    out = simulate(quiet, FeedbackParams(), duration, dt=dt, seed=None, x0=x0,
                   record_every=record_every, burn_in=0.0, blow_bound=math.inf)
    return out.trajectory


@dataclass(frozen=True)
class RingdownFit:
    amplitude: float
    kappa: float
    f0: float
    Q: float
    kappa_err: float
    n_extrema: int
    undamped: bool = False

    @property
    def gamma(self):
        """EOM damping rate ``2 kappa``."""
        return 2.0 * self.kappa


def _refine_peaks(y, idx):
    # parabolic interpolation through the three samples around each extremum
    ym, y0, yp = y[idx - 1], y[idx], y[idx + 1]
    den = ym - 2.0 * y0 + yp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, 0.5 * (ym - yp) / den, 0.0)
    return idx + off, y0 - 0.25 * (ym - yp) * off


def fit_ringdown(traj: Trajectory, min_periods=20):
    """Fit ``A exp(-kappa t)`` to the extrema of a free decay.

    Maxima and minima are located with parabolic refinement; ``log|x|`` at the
    extrema is fitted linearly in time, and the frequency follows from the
    half-period spacing of the extrema.  A decay constant that is not
    resolved from zero yields ``Q = inf`` with ``undamped=True``.
    """
    x = traj.x
    if traj.truncated_at is not None:
        x = x[: traj.truncated_at]
    x = x - np.mean(x)
    hi, _ = sps.find_peaks(x)
    lo, _ = sps.find_peaks(-x)
    idx = np.sort(np.concatenate([hi, lo]))
    idx = idx[(idx > 0) & (idx < len(x) - 1)]
    if len(idx) < 10:
        raise InsufficientPeaks(f"only {len(idx)} extrema found, need at least 10")
    pos, amp = _refine_peaks(x, idx)
    t = traj.t0 + pos / traj.fs
    half = np.polyfit(np.arange(len(t)), t, 1)[0]
    f0 = 0.5 / half
    if (t[-1] - t[0]) * f0 < min_periods:
        raise ValidationError(f"ringdown spans {(t[-1] - t[0]) * f0:.1f} periods, need {min_periods}")
    a = np.abs(amp)
    if np.any(a <= 0):
        raise InsufficientPeaks("zero-amplitude extremum")
    (slope, icpt), cov = np.polyfit(t, np.log(a), 1, cov=True)
    kappa = -slope
    kerr = float(math.sqrt(max(cov[0, 0], 0.0)))
    undamped = kappa <= max(2.0 * kerr, 1e-15 * f0)
    Q = math.inf if undamped else math.pi * f0 / kappa
    return RingdownFit(float(math.exp(icpt)), float(kappa), float(f0), Q, kerr, len(idx), bool(undamped))


def quality_factor(f0, kappa):
    """``Q = pi f0 / kappa`` with ``kappa`` the amplitude decay constant."""
    return math.inf if kappa == 0 else math.pi * f0 / kappa
