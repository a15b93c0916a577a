"""Why graphite plates sit at 45 degrees and composite plates do not.

The anisotropic in-plane susceptibility of HOPG rewards the plate for
covering the strong-gradient diagonals of the checkerboard; the composite's
isotropic response prefers the edge-aligned orientation and, being lighter
per unit susceptibility, floats at a different height.
"""
import math

import numpy as np

from levkit import presets
from levkit.levitation import NondimensionalScales, equilibrium, landscape

from _plot import figure

L = 0.75
rows = {}
for name in ("hopg_supp", "composite", "composite_dense"):
    s = NondimensionalScales.from_plate(presets.plate_from_preset(name, L_tilde=L))
    eq = equilibrium(s, L)
    rows[name] = (s, eq)
    print(f"{name:16s} z~ = {eq.z_tilde:.4f}  phi = {eq.phi:.4f} rad ({math.degrees(eq.phi):.1f} deg)")

s, eq = rows["hopg_supp"]
phis = np.linspace(0, math.pi / 2, 37)
cut = landscape(s, L, [eq.z_tilde], phis, material="hopg_supp").values[0]
s_c, eq_c = rows["composite"]
cut_c = landscape(s_c, L, [eq_c.z_tilde], phis, material="composite").values[0]


def draw(ax):
    ax.plot(np.degrees(phis), cut - cut.min(), label="HOPG")
    ax.plot(np.degrees(phis), cut_c - cut_c.min(), label="composite")
    ax.set_xlabel("rotation [deg]")
    ax.set_ylabel("U~ - min U~ at equilibrium height")
    ax.legend()


figure("orientation", draw)
