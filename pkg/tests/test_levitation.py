import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levkit import presets
from levkit.constants import CHI_Z0, G, MU0
from levkit.errors import NoMinimumInBox, QuadratureDivergence, ValidationError
from levkit.levitation import (
    EnergyLandscape, NondimensionalScales, PlateConfiguration, PlateSpec, angle_class_distance,
    canonical_angle, dimensionless_energy, dimensionless_magnetic_energy, effective_susceptibility,
    equilibrium, gravitational_energy, landscape, magnetic_energy,
)
from levkit.magnetostatics import MagnetArraySpec

D = 12.7e-3
HOPG_CHI = (-85e-6, -85e-6, -450e-6)


def hopg(L_tilde=0.75, thickness=1e-4, density=2700.0):
    return PlateSpec(L_tilde * D, thickness, density, HOPG_CHI, "hopg")


def test_plate_spec_invariants():
    with pytest.raises(ValidationError):
        PlateSpec(0.01, 1e-4, 2700, (-1e-6, -2e-6, -3e-6))
    with pytest.raises(ValidationError):
        PlateSpec(0.01, 1e-4, 2700, (1e-6, 1e-6, -3e-6))
    with pytest.raises(ValidationError):
        PlateSpec(0.0, 1e-4, 2700, HOPG_CHI)


def test_configuration_canonical_branch():
    assert PlateConfiguration(0.001, math.pi / 2 + 0.1).rotation == pytest.approx(0.1)
    assert PlateConfiguration(0.001, -0.1).rotation == pytest.approx(math.pi / 2 - 0.1)
    assert canonical_angle(math.pi / 2) == 0.0
    assert angle_class_distance(-math.pi / 4, math.pi / 4) == pytest.approx(0.0, abs=1e-15)


def test_scales_hopg():
    s = NondimensionalScales.from_plate(hopg())
    assert s.c_tilde == 1.0
    assert s.chi_xy_tilde == pytest.approx(85 / 450)
    m = 1.1e6
    assert s.energy == pytest.approx(450e-6 * MU0 * m * m * 1e-4 * D * D, rel=1e-14)
    assert s.g_tilde == pytest.approx(2700 * G * D / (MU0 * m * m * 450e-6), rel=1e-14)


def test_gravitational_energy():
    p = PlateSpec(1e-2, 1e-3, 1000.0, (-1e-6,) * 3)
    assert gravitational_energy(p, 0.0) == 0.0
    assert gravitational_energy(p, 1e-3) == pytest.approx(9.80665e-7, rel=1e-15)
    assert gravitational_energy(p.with_(thickness=2e-3), 1e-3) == pytest.approx(2 * 9.80665e-7, rel=1e-15)


def test_far_plate_has_no_magnetic_energy():
    p = hopg()
    near = magnetic_energy(p, PlateConfiguration(0.1 * D, 0.3))
    far = magnetic_energy(p, PlateConfiguration(100 * D, 0.3))
    assert near > 0
    assert abs(far) < 1e-6 * near


def test_isotropic_quarter_turn_symmetry():
    p = PlateSpec(0.8 * D, 1e-4, 1442, (-120e-6,) * 3)
    for phi in (0.1, 0.4):
        a = magnetic_energy(p, PlateConfiguration(0.1 * D, phi))
        b = magnetic_energy(p, PlateConfiguration(0.1 * D, phi + math.pi / 2))
        assert a == pytest.approx(b, rel=1e-10)


def test_hopg_prefers_diagonal():
    p = hopg()
    z = 0.1 * D
    assert magnetic_energy(p, PlateConfiguration(z, math.pi / 4)) < magnetic_energy(p, PlateConfiguration(z, 0.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 1.2), st.floats(0.03, 0.5), st.floats(0, 2 * math.pi))
def test_si_and_dimensionless_paths_agree(L, z, phi):
    p = hopg(L)
    s = NondimensionalScales.from_plate(p)
    cfg = PlateConfiguration(z * D, phi)
    U = magnetic_energy(p, cfg) + gravitational_energy(p, z * D)
    assert U / s.energy == pytest.approx(dimensionless_energy(L, z, phi, s), rel=1e-10)


def test_thickness_independence():
    a = NondimensionalScales.from_plate(hopg(thickness=1e-4))
    b = NondimensionalScales.from_plate(hopg(thickness=1e-3))
    assert a.g_tilde == b.g_tilde
    assert dimensionless_energy(0.75, 0.09, 0.2, a) == dimensionless_energy(0.75, 0.09, 0.2, b)


def test_quarter_period_in_phi():
    s = NondimensionalScales.from_plate(hopg())
    for phi in (0.0, 0.3, 1.0):
        assert dimensionless_energy(0.75, 0.1, phi, s) == pytest.approx(
            dimensionless_energy(0.75, 0.1, phi + math.pi / 2, s), rel=1e-10)


def test_quadrature_convergence():
    vals = [dimensionless_magnetic_energy(0.75, 0.08, 0.3, 85 / 450, quad_order=k) for k in (8, 16, 32, 64)]
    diffs = np.abs(np.diff(vals))
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-6 * abs(vals[-1])


def test_gravity_slope_at_large_height():
    s = NondimensionalScales.from_plate(hopg())
    L, z, h = 0.75, 20.0, 1e-3
    slope = (dimensionless_energy(L, z + h, 0.2, s) - dimensionless_energy(L, z - h, 0.2, s)) / (2 * h)
    assert slope == pytest.approx(s.g_tilde * L * L, rel=1e-6)


def test_quadrature_divergence_on_edge_node():
    s = NondimensionalScales.from_plate(hopg())
    with pytest.raises(QuadratureDivergence):
        # a plate reaching past the array edges with nodes in the top-face plane
        dimensionless_magnetic_energy(3.0, 1e-14, 0.0, s.chi_xy_tilde, quad_order=3)


def test_effective_susceptibility():
    assert effective_susceptibility(-85e-6, -450e-6) == pytest.approx(-206.7e-6, abs=0.05e-6)
    assert effective_susceptibility(-85e-6, -225e-6) == pytest.approx(-131.7e-6, abs=0.05e-6)
    assert effective_susceptibility(-3e-5, -3e-5) == pytest.approx(-3e-5, rel=1e-15)
    with pytest.raises(ValidationError):
        effective_susceptibility(1e-6, -1e-6)


def test_presets():
    names = presets.material_names()
    for n in ("hopg_supp", "hopg_main", "composite", "composite_dense",
              "composite_powder_measured", "composite_volume_fraction"):
        assert n in names
    p = presets.plate_from_preset(L_tilde=0.5)
    assert p.name == "hopg_supp" and p.density == 2700.0
    c = presets.plate_from_preset("composite", side_length=0.01)
    s = NondimensionalScales.from_plate(c)
    assert s.c_tilde == pytest.approx(120 / 450)
    assert s.chi_xy_tilde == 1.0
    with pytest.raises(ValidationError):
        presets.plate_from_preset("unobtainium", L_tilde=1)


def test_preset_search_path(tmp_path, monkeypatch):
    (tmp_path / "materials.json").write_text(
        '{"default": "x", "materials": {"x": {"density": 1000.0, "chi": [-1e-5, -1e-5, -2e-5]}}}')
    monkeypatch.setenv("LEVKIT_CONFIG_DIR", str(tmp_path))
    assert presets.material_names() == ["x"]
    assert presets.plate_from_preset(L_tilde=1.0).density == 1000.0


@pytest.fixture(scope="module")
def hopg_eq():
    s = NondimensionalScales.from_plate(presets.plate_from_preset("hopg_supp", L_tilde=0.75))
    return s, equilibrium(s, 0.75)


def test_equilibrium_hopg(hopg_eq):
    _, eq = hopg_eq
    assert eq.phi == pytest.approx(math.pi / 4, abs=1e-2)
    assert 0.05 < eq.z_tilde < 0.15


def test_equilibrium_composite_lower(hopg_eq):
    _, eq_h = hopg_eq
    s = NondimensionalScales.from_plate(presets.plate_from_preset("composite", L_tilde=0.75))
    eq_c = equilibrium(s, 0.75)
    assert angle_class_distance(eq_c.phi, 0.0) < 1e-2
    assert eq_c.z_tilde < eq_h.z_tilde
    sm = NondimensionalScales.from_plate(presets.plate_from_preset("hopg_main", L_tilde=0.5))
    sc = NondimensionalScales.from_plate(presets.plate_from_preset("composite", L_tilde=0.5))
    assert equilibrium(sc, 0.5).z_tilde < equilibrium(sm, 0.5).z_tilde


def test_equilibrium_boundary_minimum_raises():
    s = NondimensionalScales.from_plate(hopg())
    with pytest.raises(NoMinimumInBox):
        equilibrium(s, 0.75, z_range=(0.2, 0.5), n_z=8, n_phi=8)


def test_common_susceptibility_factor_keeps_phi_class():
    for chi, target in ((HOPG_CHI, math.pi / 4), ((-120e-6,) * 3, 0.0)):
        for f in (0.7, 1.5):
            p = PlateSpec(0.75 * D, 1e-4, 2000, tuple(f * c for c in chi))
            eq = equilibrium(NondimensionalScales.from_plate(p), 0.75, n_z=30, n_phi=16)
            assert angle_class_distance(eq.phi, target) < 1e-2


def test_landscape_consistency(hopg_eq, tmp_path):
    s, eq = hopg_eq
    zs = np.linspace(0.04, 0.2, 33)
    ps = np.linspace(0, math.pi / 2, 17)
    land = landscape(s, 0.75, zs, ps, material="hopg_supp")
    assert np.isfinite(land.values).all() and not land.errors
    z, p, _ = land.argmin()
    assert abs(z - eq.z_tilde) <= zs[1] - zs[0]
    assert angle_class_distance(p, eq.phi) <= ps[1] - ps[0]
    path = land.to_csv(tmp_path / "l.csv", "config_sha256=0")
    assert path.read_text().splitlines()[1] == "z_tilde,phi,U_tilde"
    back = EnergyLandscape.from_csv(path)
    assert np.array_equal(back.values, land.values)


def test_landscape_isotropic_reflection():
    s = NondimensionalScales.from_plate(PlateSpec(0.75 * D, 1e-4, 1442, (-120e-6,) * 3))
    ps = np.linspace(0, math.pi / 2, 9)
    land = landscape(s, 0.75, [0.06, 0.1], ps)
    assert np.allclose(land.values, land.values[:, ::-1], rtol=1e-10)


def test_landscape_rejects_bad_grid():
    s = NondimensionalScales.from_plate(hopg())
    with pytest.raises(ValidationError):
        landscape(s, 0.75, [0.1, 0.05], [0.0, 0.1])


def test_chi_z0_reference():
    assert CHI_Z0 == -450e-6
