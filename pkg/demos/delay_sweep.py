"""Cooling against delay: the analytic curve and simulation markers.

Positive T_ratio means hotter than instantaneous feedback with the same
gains.  Delays near half-integer periods drive the oscillator unstable, and
those simulations blow up, so they carry no marker.
"""
import tempfile

import numpy as np

from levkit.orchestration import ExperimentConfig, run

from _plot import figure

out = tempfile.mkdtemp()
cfg = ExperimentConfig.load("delay_sweep", dict(simulation=dict(duration_periods=10000)), out)
summary = run(cfg)
for m in summary["markers"]:
    sim = "  --  " if m["t_ratio_sim"] is None else f"{m['t_ratio_sim']:+.3f}"
    print(f"tau~ = {m['tau_tilde']:4.1f}  theory {m['t_ratio_theory']:+.3f}  simulation {sim}  {m['status']}")

lines = (cfg.directory / "t_ratio.csv").read_text().splitlines()[2:]
tau, tr = np.array([list(map(float, ln.split(","))) for ln in lines]).T


def draw(ax):
    ax.plot(tau, tr, lw=1)
    ok = [m for m in summary["markers"] if m["t_ratio_sim"] is not None]
    ax.plot([m["tau_tilde"] for m in ok], [m["t_ratio_sim"] for m in ok], "rx")
    ax.set_ylim(-0.5, 2)
    ax.set_xlabel("delay tau~ [periods]")
    ax.set_ylabel("T_ratio")


figure("delay_sweep", draw)
