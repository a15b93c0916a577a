"""Potential energy of a thin square diamagnetic plate over the checkerboard.

The plate of side ``L`` and thickness ``delta`` lies parallel to the magnet
faces with its centre of mass on the array axis at height ``z`` above the top
faces, rotated by ``phi`` about the vertical.  The field is sampled at
mid-thickness (thin-plate approximation) and the footprint integral is done
with tensor-product Gauss-Legendre quadrature on the rotated square.

Natural units: lengths in units of the magnet side ``D``, energies in units of
``E = |chi_z0| mu0 M^2 delta D^2``; then::

    U~ = c~ * U~_B + g~ * L~^2 * z~
    U~_B = 1/2 * int [chi~_xy (B~x^2 + B~y^2) + B~z^2] dx~ dy~
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize

from .constants import CHI_Z0, G, MU0
from .errors import NoMinimumInBox, QuadratureDivergence, ValidationError
from .magnetostatics import (
    DEFAULT_EPS_EDGE,
    MagnetArraySpec,
    _checkerboard_unchecked,
    checkerboard_bad_mask,
)

HALF_PI = 0.5 * math.pi
DEFAULT_QUAD_ORDER = 32


@dataclass(frozen=True)
class PlateSpec:
    side_length: float
    thickness: float
    density: float
    chi: tuple
    name: str = ""

    def __post_init__(self):
        if min(self.side_length, self.thickness, self.density) <= 0:
            raise ValidationError("side_length, thickness and density must be positive")
        chi = tuple(float(c) for c in self.chi)
        if len(chi) != 3:
            raise ValidationError("chi must hold (chi_x, chi_y, chi_z)")
        if any(c > 0 for c in chi):
            raise ValidationError("a diamagnet has non-positive susceptibilities")
        if chi[0] != chi[1]:
            raise ValidationError("in-plane susceptibilities must be equal (chi_x == chi_y)")
        object.__setattr__(self, "chi", chi)

    @property
    def chi_xy(self):
        return self.chi[0]

    @property
    def chi_z(self):
        return self.chi[2]

    @property
    def mass(self):
        return self.density * self.side_length ** 2 * self.thickness

    def with_(self, **changes):
        d = dict(side_length=self.side_length, thickness=self.thickness,
                 density=self.density, chi=self.chi, name=self.name)
        d.update(changes)
        return PlateSpec(**d)


def canonical_angle(phi):
    """Map ``phi`` onto the canonical branch [0, pi/2)."""
    p = math.fmod(float(phi), HALF_PI)
    if p < 0:
        p += HALF_PI
    if p >= HALF_PI:
        p = 0.0
    return p


def angle_class_distance(phi, target):
    """Distance between two angles modulo pi/2."""
    d = math.fmod(abs(phi - target), HALF_PI)
    return min(d, HALF_PI - d)


@dataclass(frozen=True)
class PlateConfiguration:
    height: float
    rotation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", canonical_angle(self.rotation))


@dataclass(frozen=True)
class NondimensionalScales:
    energy: float
    g_tilde: float
    c_tilde: float
    chi_xy_tilde: float
    chi_z0: float = CHI_Z0

    def __post_init__(self):
        if not (self.energy > 0 and self.c_tilde > 0 and self.chi_xy_tilde > 0):
            raise ValidationError("energy, c_tilde and chi_xy_tilde must be positive")

    @classmethod
    def from_plate(cls, plate: PlateSpec, array: MagnetArraySpec | None = None,
                   chi_z0=CHI_Z0):
        array = array or MagnetArraySpec()
        d, m = array.magnet_side, array.magnetization
        a = abs(chi_z0)
        return cls(
            energy=a * MU0 * m * m * plate.thickness * d * d,
            g_tilde=plate.density * G * d / (MU0 * m * m * a),
            c_tilde=plate.chi_z / chi_z0,
            chi_xy_tilde=plate.chi_xy / plate.chi_z,
            chi_z0=chi_z0,
        )


@lru_cache(maxsize=16)
def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def square_nodes(side, phi, order):
    """Quadrature nodes and weights on a square of given side rotated by ``phi``.

    Returns ``(x, y, w)`` with shape ``(order, order)`` each; the rotation has
    unit Jacobian so the weights are those of the reference square.
    """
    if order < 2:
        raise ValidationError("quad_order must be >= 2")
    t, w = _gauss_legendre(order)
    h = 0.5 * side
    u, v = np.meshgrid(h * t, h * t, indexing="ij")
    c, s = math.cos(phi), math.sin(phi)
    return c * u - s * v, s * u + c * v, np.outer(w, w) * h * h


def _energy_density_tilde(x, y, z, chi_xy_tilde, eps_edge):
    pts = np.stack(np.broadcast_arrays(x, y, z), axis=-1)
    bad = checkerboard_bad_mask(pts, eps_edge)
    if np.any(bad):
        raise QuadratureDivergence(f"{int(bad.sum())} quadrature node(s) hit a field singularity")
    bx, by, bz = _checkerboard_unchecked(*np.broadcast_arrays(x, y, z))
    return chi_xy_tilde * (bx * bx + by * by) + bz * bz


def dimensionless_magnetic_energy(L_tilde, z_tilde, phi, chi_xy_tilde,
                                  quad_order=DEFAULT_QUAD_ORDER, eps_edge=DEFAULT_EPS_EDGE):
    """``U~_B`` for a plate of side ``L~`` at height ``z~`` and rotation ``phi``."""
    if not z_tilde > 0:
        raise ValidationError("z_tilde must be positive")
    x, y, w = square_nodes(L_tilde, phi, quad_order)
    dens = _energy_density_tilde(x, y, z_tilde, chi_xy_tilde, eps_edge)
    return 0.5 * float(np.sum(w * dens))


def dimensionless_energy(L_tilde, z_tilde, phi, scales: NondimensionalScales,
                         quad_order=DEFAULT_QUAD_ORDER, eps_edge=DEFAULT_EPS_EDGE):
    """Total dimensionless potential energy ``U~ = c~ U~_B + g~ L~^2 z~``."""
    ub = dimensionless_magnetic_energy(L_tilde, z_tilde, phi, scales.chi_xy_tilde,
                                       quad_order, eps_edge)
    return scales.c_tilde * ub + scales.g_tilde * L_tilde ** 2 * z_tilde


def magnetic_energy(plate: PlateSpec, config: PlateConfiguration,
                    array: MagnetArraySpec | None = None,
                    quad_order=DEFAULT_QUAD_ORDER, through_thickness=False):
    """Magnetic energy of the plate in joules.

    ``-(delta / 2 mu0) * int [chi_xy (Bx^2 + By^2) + chi_z Bz^2] dx dy`` over the
    rotated footprint, field in tesla at SI node positions.  With
    ``through_thickness=True`` the field energy is Simpson-averaged over the
    bottom, middle and top planes of the plate instead of taken at mid-plane.
    """
    array = array or MagnetArraySpec()
    z = config.height
    if not z > 0.5 * plate.thickness:
        raise ValidationError("plate must sit above the magnets (z > delta/2)")
    x, y, w = square_nodes(plate.side_length, config.rotation, quad_order)
    if through_thickness:
        h = 0.5 * plate.thickness
        planes = ((z - h, 1 / 6), (z, 4 / 6), (z + h, 1 / 6))
    else:
        planes = ((z, 1.0),)
    d = array.magnet_side
    bs = array.field_scale
    total = 0.0
    for zp, wp in planes:
        pts = np.stack(np.broadcast_arrays(x, y, zp), axis=-1) / d
        if np.any(checkerboard_bad_mask(pts, array.eps_edge)):
            raise QuadratureDivergence("quadrature node hit a field singularity")
        bx, by, bz = (bs * c for c in _checkerboard_unchecked(pts[..., 0], pts[..., 1], pts[..., 2]))
        dens = plate.chi[0] * bx * bx + plate.chi[1] * by * by + plate.chi[2] * bz * bz
        total += wp * float(np.sum(w * dens))
    return -plate.thickness / (2 * MU0) * total


def gravitational_energy(plate: PlateSpec, z):
    """``rho L^2 delta g z`` in joules."""
    return plate.density * plate.side_length ** 2 * plate.thickness * G * z


def total_energy(plate, config, array=None, quad_order=DEFAULT_QUAD_ORDER):
    return magnetic_energy(plate, config, array, quad_order) + gravitational_energy(plate, config.height)


def effective_susceptibility(chi_parallel, chi_perp):
    """Orientation average of a uniaxial susceptibility: one perpendicular, two parallel axes."""
    if chi_parallel > 0 or chi_perp > 0:
        raise ValidationError("susceptibilities must be non-positive")
    return chi_perp / 3.0 + 2.0 * chi_parallel / 3.0


@dataclass
class EnergyLandscape:
    z_tilde: np.ndarray
    phi: np.ndarray
    values: np.ndarray
    L_tilde: float
    quad_order: int
    material: str = ""
    errors: dict = field(default_factory=dict)

    def argmin(self):
        i, j = np.unravel_index(np.nanargmin(self.values), self.values.shape)
        return float(self.z_tilde[i]), float(self.phi[j]), float(self.values[i, j])

    def to_csv(self, path, header_comment=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z_tilde", "phi", "U_tilde"])
            for i, z in enumerate(self.z_tilde):
                for j, p in enumerate(self.phi):
                    w.writerow([repr(float(z)), repr(float(p)), repr(float(self.values[i, j]))])
        return path

    @classmethod
    def from_csv(cls, path, L_tilde=float("nan"), quad_order=0, material=""):
        with Path(path).open(encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        if lines[0].strip() != "z_tilde,phi,U_tilde":
            raise ValidationError(f"unexpected header {lines[0].strip()!r}")
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        z = np.unique(data[:, 0])
        p = np.unique(data[:, 1])
        return cls(z, p, data[:, 2].reshape(len(z), len(p)), L_tilde, quad_order, material)


def landscape(scales: NondimensionalScales, L_tilde, z_tilde, phi,
              quad_order=DEFAULT_QUAD_ORDER, material="", eps_edge=DEFAULT_EPS_EDGE):
    """Dense grid of ``U~`` over heights ``z_tilde`` and rotations ``phi``.

    Cells whose quadrature hits a singularity are ``nan`` and listed in
    ``errors`` keyed by ``(i, j)``.
    """
    z = np.asarray(z_tilde, dtype=float)
    p = np.asarray(phi, dtype=float)
    if z.ndim != 1 or p.ndim != 1 or len(z) < 1 or len(p) < 1:
        raise ValidationError("z_tilde and phi must be non-empty 1-D grids")
    if np.any(np.diff(z) <= 0) or np.any(np.diff(p) <= 0):
        raise ValidationError("grids must be strictly increasing")
    vals = np.empty((len(z), len(p)))
    errors = {}
    for j, ph in enumerate(p):
        x, y, w = square_nodes(L_tilde, ph, quad_order)
        for i, zz in enumerate(z):
            try:
                ub = 0.5 * float(np.sum(w * _energy_density_tilde(x, y, zz, scales.chi_xy_tilde, eps_edge)))
                vals[i, j] = scales.c_tilde * ub + scales.g_tilde * L_tilde ** 2 * zz
            except QuadratureDivergence as exc:
                vals[i, j] = np.nan
                errors[(i, j)] = str(exc)
    return EnergyLandscape(z, p, vals, float(L_tilde), int(quad_order), material, errors)


@dataclass(frozen=True)
class Equilibrium:
    z_tilde: float
    phi: float
    U_tilde: float
    L_tilde: float


def equilibrium(scales: NondimensionalScales, L_tilde, z_range=(0.01, 0.6),
                phi_range=(0.0, HALF_PI), n_z=40, n_phi=24,
                quad_order=DEFAULT_QUAD_ORDER, z_tol=1e-5, phi_tol=1e-4):
    """Locate the minimum of ``U~`` over the search box.

    A coarse grid scan picks the starting cell, Nelder-Mead refines it.  A
    rotation range covering the full quarter turn is treated as periodic; a
    scan minimum on any other box edge raises :class:`NoMinimumInBox`.
    """
    z_lo, z_hi = map(float, z_range)
    p_lo, p_hi = map(float, phi_range)
    if not (0 < z_lo < z_hi) or not p_lo < p_hi:
        raise ValidationError("invalid search box")
    periodic = p_hi - p_lo >= HALF_PI - 1e-12
    zs = np.linspace(z_lo, z_hi, n_z)
    if periodic:
        ps = p_lo + HALF_PI * np.arange(n_phi) / n_phi
    else:
        ps = np.linspace(p_lo, p_hi, n_phi)
    scan = landscape(scales, L_tilde, zs, ps, quad_order)
    i, j = np.unravel_index(np.nanargmin(scan.values), scan.values.shape)
    if i in (0, n_z - 1) or (not periodic and j in (0, n_phi - 1)):
        raise NoMinimumInBox(
            f"coarse minimum at z~={zs[i]:.4g}, phi={ps[j]:.4g} lies on the search-box boundary"
        )

    def objective(p):
        z, ph = p
        if not z_lo <= z <= z_hi or (not periodic and not p_lo <= ph <= p_hi):
            return np.inf
        return dimensionless_energy(L_tilde, z, ph, scales, quad_order)

    dz = zs[1] - zs[0]
    dp = ps[1] - ps[0]
    x0 = np.array([zs[i], ps[j]])
    simplex = np.array([x0, x0 + [dz, 0.0], x0 + [0.0, dp]])
    res = optimize.minimize(
        objective, x0, method="Nelder-Mead",
        options=dict(initial_simplex=simplex, xatol=min(z_tol, phi_tol), fatol=1e-15,
                     maxiter=2000, maxfev=4000),
    )
    z_star, phi_star = res.x
    phi_star = canonical_angle(phi_star) if periodic else float(phi_star)
    return Equilibrium(float(z_star), phi_star, float(res.fun), float(L_tilde))
