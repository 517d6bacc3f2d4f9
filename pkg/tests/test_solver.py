import numpy as np
import pytest

from conftest import coarse_config
from faultbands import fem
from faultbands.contact import Mode, SolverConfig
from faultbands.geomodel import StressRegime
from faultbands.metrics import compute_history
from faultbands.solver import (
    SimulationConfig,
    SimulationError,
    build_segment,
    checkpoint_indices,
    kkt_summary,
    prepare,
    run_loading_step,
    run_simulation,
    segment_displacement,
)


@pytest.fixture(scope="module")
def segment(coarse_result):
    cfg = coarse_result.config
    mesh = coarse_result.mesh
    props = fem.properties_from_layers(mesh, list(cfg.layers), cfg.biot_alpha)
    return build_segment(mesh, props, cfg.solver.stabilization)


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(regime=StressRegime(M1=0.9, M2=0.8))
    with pytest.raises(ValueError):
        SimulationConfig(stiffness_scale=0.0)
    assert SimulationConfig(fluid="H2").fluid.value == "H2"


def test_checkpoints(coarse_result):
    assert checkpoint_indices(coarse_result.schedule) == [0, 10, 12, 24, 36]
    assert set(coarse_result.displacements) == {coarse_result.records[i].name for i in [0, 10, 12, 24, 36]}


def test_first_step_sticks_and_loads_faults(coarse_result):
    h = compute_history(coarse_result)
    rec = coarse_result.records[1]
    assert rec.dp1 == pytest.approx(-1.8e6) and rec.dp2 == pytest.approx(-1.8e6)
    assert np.all(rec.state.mode == Mode.STICK)
    for f in ("F1", "F2"):
        assert h.table[f][1].chi_max > h.table[f][0].chi_max


def test_storage_cycle_returns_to_recovery_state(coarse_result):
    a = coarse_result.record(12).state.traction()
    b = coarse_result.record(13).state.traction()
    assert np.abs(b - a).max() <= 1e-6 * np.abs(a).max()


def test_symmetric_reference(coarse_result):
    h = compute_history(coarse_result)
    assert h.series("F3", "chi_max").max() < 1e-3
    assert h.series("F3", "delta_max").max() == 0.0
    for name in ("chi_max", "t80", "delta_max", "delta_avg"):
        a, b = h.series("F4", name), h.series("F5", name)
        assert np.allclose(a, b, rtol=1e-6, atol=1e-12)


def test_kkt_summary_passes(coarse_result):
    s = kkt_summary(coarse_result)
    assert s.steps == len(coarse_result.records) - 1
    assert s.passes(), s


def test_zero_increment_is_a_fixed_point(coarse_result, segment):
    rec = coarse_result.record(10)
    dL, st, diag = run_loading_step(
        segment, rec.state, coarse_result.config.law, (0.0, 0.0), rec.fault_dp, coarse_result.config.solver
    )
    assert np.abs(dL).max() <= 1e-9 * np.abs(rec.state.traction()).max()
    assert np.array_equal(st.mode, rec.state.mode)
    assert np.allclose(st.cumulative_slip, rec.state.cumulative_slip, atol=1e-12)


def test_zero_load_zero_displacement(coarse_result, segment):
    m = coarse_result.mesh
    u = segment_displacement(segment, m.n_nodes, 0.0, 0.0, np.zeros((m.n_interface, 3)))
    assert not u.any()


def test_depletion_compacts_reservoir(coarse_result):
    mesh = coarse_result.mesh
    u = coarse_result.displacements["10"]
    top = np.isclose(mesh.nodes[:, 2], -2000.0) & (np.abs(mesh.nodes[:, 0]) < 1500) & (np.abs(mesh.nodes[:, 1]) < 800)
    # the reservoir top subsides under depletion
    assert u[top, 2].max() < 0


def test_prepare_matches_config():
    mesh, stress, schedule = prepare(coarse_config(name="2d", block2_offset=200.0))
    assert len(schedule) == 37
    assert mesh.geometry.block2_offset == 200.0
    assert stress.sigma_n0.shape == (mesh.n_interface,)


def test_iteration_cap_raises():
    with pytest.raises(SimulationError, match="step"):
        run_simulation(coarse_config(solver=SolverConfig(max_iter=1)))
