import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultbands.geomodel import (
    FAULT_IDS,
    GRAVITY,
    DomainGeometry,
    GeometryError,
    MeshResolution,
    StressRegime,
    build_geometry,
    check_layers,
    compute_initial_stress,
    generate_mesh,
    principal_tensor,
    reference_layers,
    resolve_traction,
    vertical_effective_stress,
)

from conftest import COARSE

MPA = 1e6


@pytest.fixture(scope="module")
def coarse_mesh():
    return generate_mesh(build_geometry(vertical_cell=50.0), COARSE)


def test_reference_geometry():
    g = build_geometry()
    assert g.dip_f3 == 90.0 and g.block2_offset == 0.0
    assert (g.extent_x, g.extent_y, g.extent_z) == (30000.0, 30000.0, 5000.0)
    assert g.reservoir_depth_top == 2000.0 and g.reservoir_thickness == 200.0
    assert (g.fault_depth_top, g.fault_depth_bottom) == (1600.0, 3000.0)
    assert (g.dip_f1, g.dip_f2) == (85.0, -85.0)


def test_offset_200_is_full_thickness():
    g = build_geometry(block2_offset=200.0)
    assert g.block2_offset == g.reservoir_thickness


@pytest.mark.parametrize(
    "kw",
    [
        dict(block2_offset=130.0, vertical_cell=50.0),
        dict(block2_offset=250.0),
        dict(block2_offset=-20.0),
        dict(dip_f3=50.0),
        dict(dip_f3=95.0),
    ],
)
def test_geometry_errors(kw):
    with pytest.raises(GeometryError):
        build_geometry(**kw)


def test_table1_layers():
    got = [(l.name, l.depth_top, l.depth_bottom, l.density, l.young, l.poisson) for l in reference_layers()]
    assert got == [
        ("overburden", 0.0, 1600.0, 2200.0, 10e9, 0.25),
        ("zechstein", 1600.0, 2000.0, 2100.0, 40e9, 0.30),
        ("reservoir", 2000.0, 2200.0, 2400.0, 11e9, 0.15),
        ("underburden", 2200.0, 5000.0, 2600.0, 30e9, 0.20),
    ]
    check_layers(reference_layers())


def test_layers_with_gap_rejected():
    layers = reference_layers()
    from dataclasses import replace

    layers[1] = replace(layers[1], depth_bottom=1900.0)
    with pytest.raises(GeometryError):
        check_layers(layers)


def test_vertical_effective_stress_oracle():
    sv = vertical_effective_stress(2000.0, reference_layers())
    expected = GRAVITY * (2200 * 1600 + 2100 * 400) - GRAVITY * 1000 * 2000
    assert sv == pytest.approx(expected, rel=1e-12)
    assert sv / MPA == pytest.approx(23.15, abs=0.01)
    assert 0.74 * sv / MPA == pytest.approx(17.13, abs=0.01)
    assert 0.40 * sv / MPA == pytest.approx(9.26, abs=0.01)
    assert vertical_effective_stress(0.0, reference_layers()) == 0.0


def test_vertical_stress_piecewise_linear():
    layers = reference_layers()
    z = np.linspace(0, 5000, 5001)
    sv = vertical_effective_stress(z, layers)
    assert (np.diff(sv) > 0).all()
    slope = np.diff(sv)
    interfaces = {1600, 2000, 2200}
    for k in range(len(slope) - 1):
        if int(z[k + 1]) not in interfaces:
            assert slope[k + 1] == pytest.approx(slope[k], rel=1e-9)


def test_principal_plane_traction():
    sv = 23.15e6
    s = principal_tensor(sv, StressRegime())
    sn, tau = resolve_traction(s, np.array([1.0, 0.0, 0.0]))
    assert sn == pytest.approx(0.74 * sv)
    assert np.linalg.norm(tau) == pytest.approx(0.0, abs=1e-6)
    sn, _ = resolve_traction(s, np.array([0.0, 1.0, 0.0]))
    assert sn == pytest.approx(0.83 * sv)


def test_mohr_circle_45():
    sv, sh = 23.15e6, 17.13e6
    s = np.diag([sh, 0.0, sv])
    n = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    sn, tau = resolve_traction(s, n)
    assert sn == pytest.approx((sv + sh) / 2)
    assert np.linalg.norm(tau) == pytest.approx((sv - sh) / 2)


def test_f1_plane_traction():
    sv, sh = 23.15e6, 17.13e6
    s = np.diag([sh, 0.0, sv])
    d = math.radians(85.0)
    n = np.array([math.sin(d), 0.0, math.cos(d)])
    sn, tau = resolve_traction(s, n)
    assert sn / MPA == pytest.approx(17.18, abs=0.01)
    assert np.linalg.norm(tau) / MPA == pytest.approx(0.52, abs=0.01)
    assert np.linalg.norm(tau) == pytest.approx((sv - sh) * math.sin(d) * math.cos(d))


def test_non_unit_normal_rejected():
    with pytest.raises(ValueError):
        resolve_traction(np.eye(3), np.array([1.0, 1.0, 0.0]))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=6, max_size=6),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1),
)
def test_traction_reconstruction(vals, n):
    a, b, c, d, e, f = vals
    s = np.array([[a, d, e], [d, b, f], [e, f, c]]) * MPA
    n = np.array(n) / np.linalg.norm(n)
    sn, tau = resolve_traction(s, n)
    recon = sn * n + tau
    assert np.linalg.norm(recon - s @ n) <= 1e-12 * max(np.linalg.norm(s @ n), 1.0)
    assert abs(tau @ n) <= 1e-9 * max(np.abs(s).max(), 1.0)


def test_counts_per_block_at_50m_cells():
    mesh = generate_mesh(build_geometry(vertical_cell=50.0), MeshResolution(dz=50.0))
    for b in (1, 2):
        assert (mesh.hex_block == b).sum() == 10 * 10 * 4


def test_mesh_conformity(coarse_mesh):
    m = coarse_mesh
    assert np.abs(m.nodes[m.nodes_a] - m.nodes[m.nodes_b]).max() < 1e-9
    assert (m.area > 0).all()
    # nodes are only shared across a fault on its perimeter or on junction lines
    shared = m.nodes[np.intersect1d(m.nodes_a.ravel(), m.nodes_b.ravel())]
    on_edge = np.isclose(-shared[:, 2], 1600.0) | np.isclose(-shared[:, 2], 3000.0) | np.isclose(np.abs(shared[:, 1]), 1000.0)
    assert on_edge.all()
    for f in FAULT_IDS:
        assert m.fault_mask(f).any()


def test_fault_areas(coarse_mesh):
    m = coarse_mesh
    g = m.geometry
    assert m.area[m.fault_mask("F3")].sum() == pytest.approx(2000.0 * 1400.0, rel=1e-9)
    # F4/F5 end on the dipping F1/F2 traces, whose offset is linear in depth
    half = 2000.0 - math.tan(math.radians(5.0)) * (2300.0 - g.pivot_depth)
    for f in ("F4", "F5"):
        assert m.area[m.fault_mask(f)].sum() == pytest.approx(2 * half * 1400.0, rel=1e-9)
    for f in ("F1", "F2"):
        assert m.area[m.fault_mask(f)].sum() == pytest.approx(2000.0 * 1400.0 / math.cos(math.radians(5.0)), rel=1e-9)
    d = m.depth
    assert d.min() > 1600 and d.max() < 3000


def test_normals_consistent(coarse_mesh):
    m = coarse_mesh
    for f in FAULT_IDS:
        nrm = m.normal[m.fault_mask(f)]
        assert (nrm @ nrm[0] > 0.99).all()
        assert np.allclose(np.linalg.norm(nrm, axis=1), 1.0)


def test_reflection_symmetry(coarse_mesh):
    pts = coarse_mesh.nodes
    mirrored = pts * np.array([-1.0, 1.0, 1.0])
    a = np.unique(np.round(pts, 6), axis=0)
    b = np.unique(np.round(mirrored, 6), axis=0)
    assert a.shape == b.shape and np.abs(a - b).max() < 1e-9


def test_dipped_f3_normals():
    m = generate_mesh(build_geometry(dip_f3=65.0, vertical_cell=50.0), COARSE)
    n = m.normal[m.fault_mask("F3")]
    elev = np.degrees(np.arcsin(np.abs(n[:, 2])))
    assert np.abs(elev - 25.0).max() < 1e-7
    ref = np.array([math.sin(math.radians(65)), 0.0, math.cos(math.radians(65))])
    assert np.abs(np.abs(n @ ref) - 1.0).max() < 1e-12


def test_initial_state_inside_cone(coarse_mesh):
    sf = compute_initial_stress(coarse_mesh, reference_layers(), StressRegime())
    tau_L = 2e6 + math.tan(math.radians(30)) * sf.sigma_n0
    assert (np.linalg.norm(sf.tau0, axis=1) < tau_L).all()
    assert (sf.sigma_n0 > 0).all()
