"""Closed-form field of cube magnets and the 2x2 checkerboard array.

All formulas are evaluated in the frame of a unit cube centred on the origin
and magnetised along +z, then translated, sign-flipped and scaled by
``mu0 * M``.  In the array frame the four cubes sit below the plane ``z = 0``
(their top faces), so every physically meaningful evaluation point has
``z > 0``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import MAGNET_SIDE, MU0, N52_MAGNETIZATION
from .errors import EdgeSingularity, ValidationError

DEFAULT_EPS_EDGE = 1e-9

_INV_4PI = 1.0 / (4.0 * np.pi)


def _r_minus_b(r, b, s):
    # r = sqrt(s + b**2); for b > 0 the difference cancels, use s / (r + b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(b > 0, s / (r + b), r - b)


def _f1(x, y, z):
    a = x + 0.5
    b = y + 0.5
    c = z + 0.5
    r = np.sqrt(a * a + b * b + c * c)
    # arctan(ab / (c r)) on the branch of the printed form; c = 0 is the c -> 0+ limit
    sgn = np.where(c < 0, -1.0, 1.0)
    return np.arctan2(sgn * a * b, np.abs(c) * r)


def _f2(x, y, z):
    a = x + 0.5
    c = z + 0.5
    s = a * a + c * c
    bn = y - 0.5
    bd = y + 0.5
    rn = np.sqrt(s + bn * bn)
    rd = np.sqrt(s + bd * bd)
    num = _r_minus_b(rn, bn, s)
    den = _r_minus_b(rd, bd, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
        # on an extended edge line both vanish; the limit is (rd + bd) / (rn + bn)
        return np.where(s == 0, (rd + bd) / (rn + bn), ratio)


def _cube_field_unchecked(x, y, z):
    bx = _INV_4PI * np.log(
        _f2(-x, y, -z) * _f2(x, y, z) / (_f2(x, y, -z) * _f2(-x, y, z))
    )
    by = _INV_4PI * np.log(
        _f2(-y, x, -z) * _f2(y, x, z) / (_f2(y, x, -z) * _f2(-y, x, z))
    )
    bz = -_INV_4PI * (
        _f1(-x, y, z) + _f1(-x, y, -z) + _f1(-x, -y, z) + _f1(-x, -y, -z)
        + _f1(x, y, z) + _f1(x, y, -z) + _f1(x, -y, z) + _f1(x, -y, -z)
    )
    return bx, by, bz


def edge_distance(r):
    """Distance from ``r`` (unit-cube frame) to the nearest degenerate line.

    The closed form degenerates on the eight lines through the horizontal
    cube edges (the edges of the charged top and bottom faces).
    """
    r = np.asarray(r, dtype=float)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    d = np.full(x.shape, np.inf)
    for zc in (-0.5, 0.5):
        dz = z - zc
        for c in (-0.5, 0.5):
            d = np.minimum(d, np.hypot(x - c, dz))
            d = np.minimum(d, np.hypot(y - c, dz))
    return d


def _inside_closed_cube(r):
    return np.max(np.abs(r), axis=-1) <= 0.5


def _bad_mask(r, eps_edge):
    return _inside_closed_cube(r) | (edge_distance(r) < eps_edge)


def unit_cube_field(r, eps_edge=DEFAULT_EPS_EDGE):
    """Dimensionless field ``B / (mu0 M)`` of a unit cube magnetised along +z.

    Parameters
    ----------
    r : array_like, shape (..., 3)
        Evaluation points in units of the cube side, cube centred at the origin.
        Points must lie strictly outside the closed cube.
    eps_edge : float
        Exclusion radius around the horizontal edge lines.

    Returns
    -------
    ndarray, shape (..., 3)

    Raises
    ------
    EdgeSingularity
        If any point is inside the cube or within ``eps_edge`` of an edge line.
    """
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 3:
        raise ValidationError(f"expected trailing dimension 3, got shape {r.shape}")
    bad = _bad_mask(r, eps_edge)
    if np.any(bad):
        first = r.reshape(-1, 3)[np.flatnonzero(bad.ravel())[0]]
        raise EdgeSingularity(
            f"{int(bad.sum())} point(s) inside the cube or within {eps_edge:g} of an edge, "
            f"e.g. {first.tolist()}"
        )
    return np.stack(_cube_field_unchecked(r[..., 0], r[..., 1], r[..., 2]), axis=-1)


@dataclass(frozen=True)
class CuboidMagnet:
    side_length: float
    magnetization: float
    center: tuple = (0.0, 0.0, 0.0)
    polarity: int = 1

    def __post_init__(self):
        if not self.side_length > 0:
            raise ValidationError("side_length must be positive")
        if not self.magnetization > 0:
            raise ValidationError("magnetization must be positive")
        if self.polarity not in (1, -1):
            raise ValidationError("polarity must be +1 or -1")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def field(self, r, eps_edge=DEFAULT_EPS_EDGE):
        """Field in tesla at SI positions ``r``."""
        d = self.side_length
        rt = (np.asarray(r, dtype=float) - np.asarray(self.center)) / d
        return self.polarity * MU0 * self.magnetization * unit_cube_field(rt, eps_edge)


# unit-frame centres and polarities of the checkerboard, top faces at z = 0
_CHECKERBOARD = (
    ((-0.5, -0.5, -0.5), 1),
    ((-0.5, 0.5, -0.5), -1),
    ((0.5, 0.5, -0.5), 1),
    ((0.5, -0.5, -0.5), -1),
)


@dataclass(frozen=True)
class MagnetArraySpec:
    """2x2 checkerboard of identical cubes with alternating polarity.

    Cubes of side ``magnet_side`` are centred at ``(+-D/2, +-D/2, -D/2)``, so the
    top faces lie in the plane ``z = 0``.
    """

    magnet_side: float = MAGNET_SIDE
    magnetization: float = N52_MAGNETIZATION
    eps_edge: float = DEFAULT_EPS_EDGE

    def __post_init__(self):
        if not self.magnet_side > 0 or not self.magnetization > 0:
            raise ValidationError("magnet_side and magnetization must be positive")

    @property
    def field_scale(self):
        """``mu0 * M`` in tesla."""
        return MU0 * self.magnetization

    @property
    def magnets(self):
        d = self.magnet_side
        return tuple(
            CuboidMagnet(d, self.magnetization, tuple(d * c for c in centre), pol)
            for centre, pol in _CHECKERBOARD
        )


def checkerboard_field(r, eps_edge=DEFAULT_EPS_EDGE):
    """Dimensionless checkerboard field at ``r / D`` (array frame).

    Returns ``B / (mu0 M)``.  Raises :class:`EdgeSingularity` for points inside
    a magnet or on a degenerate edge line.
    """
    r = np.asarray(r, dtype=float)
    out = np.zeros(np.broadcast_shapes(r.shape, (3,)))
    for centre, pol in _CHECKERBOARD:
        b = unit_cube_field(r - np.asarray(centre), eps_edge)
        if pol > 0:
            out += b
        else:
            out -= b
    return out


def _checkerboard_unchecked(x, y, z):
    bx = np.zeros_like(x)
    by = np.zeros_like(x)
    bz = np.zeros_like(x)
    for (cx, cy, cz), pol in _CHECKERBOARD:
        fx, fy, fz = _cube_field_unchecked(x - cx, y - cy, z - cz)
        if pol > 0:
            bx += fx
            by += fy
            bz += fz
        else:
            bx -= fx
            by -= fy
            bz -= fz
    return bx, by, bz


def checkerboard_bad_mask(r, eps_edge=DEFAULT_EPS_EDGE):
    """Boolean mask of points the closed form cannot evaluate."""
    r = np.asarray(r, dtype=float)
    bad = np.zeros(r.shape[:-1], dtype=bool)
    for centre, _ in _CHECKERBOARD:
        bad |= _bad_mask(r - np.asarray(centre), eps_edge)
    return bad


def array_field(spec: MagnetArraySpec, r):
    """Field of the checkerboard array in tesla at SI positions ``r`` (..., 3)."""
    rt = np.asarray(r, dtype=float) / spec.magnet_side
    return spec.field_scale * checkerboard_field(rt, spec.eps_edge)


@dataclass
class FieldSample:
    position: np.ndarray
    B: np.ndarray
    units: str = "SI"
    error: str | None = None

    def __post_init__(self):
        if self.units not in ("SI", "dimensionless"):
            raise ValidationError(f"unknown units flag {self.units!r}")


def field_map(spec: MagnetArraySpec, grid, units="SI"):
    """Evaluate the array field on every point of ``grid``.

    ``grid`` is any array of shape (..., 3) in metres; samples are returned in
    row-major order.  Points where the closed form fails get ``B = nan`` and an
    ``error`` message instead of aborting the map.  With ``units="dimensionless"``
    positions are reported as ``r / D`` and fields as ``B / (mu0 M)``.
    """
    if units not in ("SI", "dimensionless"):
        raise ValidationError(f"unknown units flag {units!r}")
    pts = np.asarray(grid, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("grid is empty")
    rt = pts / spec.magnet_side
    bad = checkerboard_bad_mask(rt, spec.eps_edge)
    b = np.full(pts.shape, np.nan)
    good = ~bad
    if np.any(good):
        g = rt[good]
        b[good] = np.stack(_checkerboard_unchecked(g[:, 0], g[:, 1], g[:, 2]), axis=-1)
    if units == "SI":
        b = b * spec.field_scale
        pos = pts
    else:
        pos = rt
    msg = "EdgeSingularity: inside a magnet or on an edge line"
    return [
        FieldSample(pos[i].copy(), b[i].copy(), units, msg if bad[i] else None)
        for i in range(len(pts))
    ]


FIELD_MAP_HEADER = ["x", "y", "z", "Bx", "By", "Bz", "units"]


def write_field_map_csv(samples, path, header_comment=None):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_MAP_HEADER)
        for s in samples:
            w.writerow([repr(float(v)) for v in s.position] + [repr(float(v)) for v in s.B] + [s.units])
    return path


def read_field_map_csv(path):
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != FIELD_MAP_HEADER:
        raise ValidationError(f"unexpected header {reader.fieldnames}")
    for row in reader:
        pos = np.array([float(row[k]) for k in ("x", "y", "z")])
        b = np.array([float(row[k]) for k in ("Bx", "By", "Bz")])
        rows.append(FieldSample(pos, b, row["units"], "EdgeSingularity" if np.isnan(b).any() else None))
    return rows
