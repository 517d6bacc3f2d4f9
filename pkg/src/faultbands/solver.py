"""Loading-step loop: incremental pressure loads, contact solve, state accumulation."""

from __future__ import annotations

import hashlib
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .contact import (
    ContactConvergenceError,
    ContactProblem,
    ContactState,
    FrictionLaw,
    Mode,
    SolverConfig,
    StepDiagnostics,
    active_set_solve,
    coulomb_limit,
    constraint_residual,
    edge_pairs,
    stabilization,
)
from .geomodel import (
    Mesh,
    MeshResolution,
    MaterialLayer,
    StressField,
    StressRegime,
    build_geometry,
    compute_initial_stress,
    generate_mesh,
    reference_layers,
)
from .pressure import (
    CYCLIC_PHASES,
    FluidKind,
    Phase,
    PressureSchedule,
    ScheduleParams,
    build_schedule,
    fault_pressure_values,
    hex_pressure,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationConfig:
    name: str = "1"
    fluid: FluidKind = FluidKind.CH4
    dip_f3: float = 90.0
    block2_offset: float = 0.0
    layers: tuple[MaterialLayer, ...] = field(default_factory=lambda: tuple(reference_layers()))
    reservoir_young: float | None = None
    regime: StressRegime = field(default_factory=StressRegime)
    law: FrictionLaw = field(default_factory=FrictionLaw)
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    resolution: MeshResolution = field(default_factory=MeshResolution)
    solver: SolverConfig = field(default_factory=SolverConfig)
    biot_alpha: float = 1.0
    stiffness_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "fluid", FluidKind(self.fluid))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not 0 < self.regime.M1 <= self.regime.M2 <= 1:
            raise ValueError("stress ratios must satisfy 0 < M1 <= M2 <= 1")
        if self.stiffness_scale <= 0:
            raise ValueError("stiffness_scale must be positive")


@dataclass
class StepRecord:
    index: int
    label: float
    name: str
    phase: Phase
    dp1: float
    dp2: float
    state: ContactState
    fault_dp: np.ndarray
    tau_L: np.ndarray
    diagnostics: StepDiagnostics | None


@dataclass
class SimulationResult:
    config: SimulationConfig
    mesh: Mesh
    stress: StressField
    schedule: PressureSchedule
    records: list[StepRecord]
    displacements: dict[str, np.ndarray]
    segments: list[int]

    def record(self, step) -> StepRecord:
        return self.records[self.schedule.find(step)]

    @property
    def final(self) -> StepRecord:
        return self.records[-1]


def checkpoint_indices(schedule: PressureSchedule) -> list[int]:
    """Step 0, end of production, end of recovery, middle and end of the first cycle."""
    idx = [0]
    pp = schedule.phase_end((Phase.PP,))
    rec = schedule.phase_end((Phase.CGI, Phase.ST))
    for i in (pp, rec):
        if i is not None:
            idx.append(i)
    cyc = [s.index for s in schedule.steps if s.phase in (Phase.UGS_P, Phase.UGS_S, Phase.UHS_P, Phase.UHS_S)]
    if cyc:
        idx.append(cyc[0] + 11)
        idx.append(cyc[0] + 23)
    return sorted(set(i for i in idx if i < len(schedule)))


# ------------------------------------------------------------------- segments


_PROBLEM_CACHE: "OrderedDict[tuple[str, float], ContactProblem]" = OrderedDict()
_PROBLEM_CACHE_SIZE = 2


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:24]


def _compliance(K, G, key: str) -> np.ndarray:
    """Dense compliance, read from or written to FAULTBANDS_CACHE when set."""
    cache_dir = os.environ.get("FAULTBANDS_CACHE")
    path = os.path.join(cache_dir, f"compliance_{key}.npy") if cache_dir else None
    if path and os.path.exists(path):
        return np.load(path)
    C = fem.schur_compliance(K, G)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = f"{path}.{os.getpid()}.tmp"
        with open(tmp, "wb") as fh:
            np.save(fh, C)
        os.replace(tmp, path)
    return C


def contact_problem(mesh: Mesh, K, G, props: fem.ElasticProperties, beta: float) -> ContactProblem:
    key = _digest(mesh.nodes, mesh.hexes, props.young, props.poisson, mesh.nodes_a, mesh.nodes_b)
    if (key, beta) in _PROBLEM_CACHE:
        _PROBLEM_CACHE.move_to_end((key, beta))
        return _PROBLEM_CACHE[(key, beta)]
    while len(_PROBLEM_CACHE) >= _PROBLEM_CACHE_SIZE:
        _PROBLEM_CACHE.popitem(last=False)
    C = _compliance(K, G, key)
    pairs = edge_pairs(mesh.fault, mesh.row, mesh.col)
    S = stabilization(np.diag(C).copy(), pairs, beta)
    problem = ContactProblem(C, mesh.area, S)
    del C
    _PROBLEM_CACHE[(key, beta)] = problem
    return problem


@dataclass
class Segment:
    K: object
    factor: fem.CholeskyFactor
    G: object
    free: np.ndarray
    unit_loads: np.ndarray  # (n_free, 2) for blocks 1, 2
    ghat_unit: np.ndarray  # (3m, 2)
    problem: ContactProblem


def build_segment(mesh: Mesh, props: fem.ElasticProperties, beta: float) -> Segment:
    system = fem.apply_bcs(fem.assemble_stiffness(mesh, props), mesh)
    K = fem.reduced(system)
    free = system.free
    G = fem.interface_operator(mesh)[:, free].tocsr()
    problem = contact_problem(mesh, K, G, props, beta)
    factor = fem.CholeskyFactor(K)
    loads = np.column_stack(
        [
            fem.assemble_pressure_load(mesh, hex_pressure(mesh, 1.0, 0.0), props.biot_alpha)[free],
            fem.assemble_pressure_load(mesh, hex_pressure(mesh, 0.0, 1.0), props.biot_alpha)[free],
        ]
    )
    ghat = G @ factor.solve(loads)
    return Segment(K, factor, G, free, loads, ghat, problem)


def segment_displacement(seg: Segment, n_nodes: int, dp1: float, dp2: float, dlam: np.ndarray) -> np.ndarray:
    rhs = seg.unit_loads @ np.array([dp1, dp2]) + seg.G.T @ dlam.ravel()
    u = np.zeros(3 * n_nodes)
    u[seg.free] = seg.factor.solve(rhs)
    return u.reshape(n_nodes, 3)


# ------------------------------------------------------------------ driver


class SimulationError(RuntimeError):
    pass


def prepare(config: SimulationConfig):
    geom = build_geometry(config.dip_f3, config.block2_offset, vertical_cell=config.resolution.dz)
    mesh = generate_mesh(geom, config.resolution)
    stress = compute_initial_stress(mesh, list(config.layers), config.regime)
    schedule = build_schedule(config.fluid, config.schedule)
    return mesh, stress, schedule


def tau_limit(state: ContactState, law: FrictionLaw, fault_dp: np.ndarray) -> np.ndarray:
    return coulomb_limit(state.lambda_n, law, state.phi_current, fault_dp)


def run_loading_step(
    seg: Segment,
    state: ContactState,
    law: FrictionLaw,
    ddp: tuple[float, float],
    fault_dp: np.ndarray,
    config: SolverConfig,
):
    """One increment of the block pressures; returns (traction increment, state, diagnostics)."""
    ghat = seg.ghat_unit @ np.asarray(ddp, dtype=float)
    dL, new, diag = active_set_solve(seg.problem, state, ghat, law, fault_dp, config)
    diag = replace(diag, constraint_residual=kkt_residual(seg, ddp, dL, new.mode))
    return dL, new, diag


def kkt_residual(seg: Segment, ddp, dL: np.ndarray, mode: np.ndarray) -> float:
    """Stick-row residual of the full system, recomputed with the FE stiffness.

    Solves K du = df + G^T dL and checks that the stabilized jump G du + S dL
    vanishes on stick components. Also folds in the equilibrium residual.
    """
    rhs = seg.unit_loads @ np.asarray(ddp, dtype=float) + seg.G.T @ dL.ravel()
    du = seg.factor.solve(rhs)
    eq = np.linalg.norm(seg.K @ du - rhs) / max(np.linalg.norm(rhs), 1e-300)
    pseudo = seg.G @ du + seg.problem.S @ dL.ravel()
    scale = max(float(np.abs(seg.ghat_unit @ np.asarray(ddp, dtype=float)).max()), float(np.abs(pseudo).max()))
    return max(float(eq), constraint_residual(pseudo, mode, scale))


def run_simulation(config: SimulationConfig, progress=None) -> SimulationResult:
    mesh, stress, schedule = prepare(config)
    law = config.law
    layers = list(config.layers)
    props = fem.properties_from_layers(mesh, layers, config.biot_alpha, config.reservoir_young)
    seg = build_segment(mesh, props, config.solver.stabilization)

    scale_at = None
    if config.stiffness_scale != 1.0:
        pp_end = schedule.phase_end((Phase.PP,))
        scale_at = pp_end + 1 if pp_end is not None and pp_end + 1 < len(schedule) else None

    state = ContactState.initial(stress.sigma_n0, stress.tau0, law)
    fdp0 = np.zeros(mesh.n_interface)
    records = [
        StepRecord(0, 0.0, schedule.steps[0].name, schedule.steps[0].phase, 0.0, 0.0, state, fdp0, tau_limit(state, law, fdp0), None)
    ]
    checkpoints = set(checkpoint_indices(schedule))
    displacements = {schedule.steps[0].name: np.zeros((mesh.n_nodes, 3))}
    seg_start = 0
    u_start = np.zeros((mesh.n_nodes, 3))
    segments = [0]
    for k in range(1, len(schedule)):
        step = schedule.steps[k]
        if scale_at is not None and k == scale_at:
            u_start = u_start + segment_displacement(
                seg,
                mesh.n_nodes,
                schedule.dp_block1[k - 1] - schedule.dp_block1[seg_start],
                schedule.dp_block2[k - 1] - schedule.dp_block2[seg_start],
                records[k - 1].state.traction() - records[seg_start].state.traction(),
            )
            young = props.young.copy()
            res = mesh.hex_block > 0
            young[res] = young[res] * config.stiffness_scale
            props = fem.ElasticProperties(young, props.poisson, props.biot_alpha)
            seg = build_segment(mesh, props, config.solver.stabilization)
            seg_start = k - 1
            segments.append(k)
        d1 = schedule.dp_block1[k] - schedule.dp_block1[k - 1]
        d2 = schedule.dp_block2[k] - schedule.dp_block2[k - 1]
        fdp = fault_pressure_values(mesh, schedule.dp_block1[k], schedule.dp_block2[k])
        try:
            _, state, diag = run_loading_step(seg, state, law, (d1, d2), fdp, config.solver)
        except ContactConvergenceError as exc:
            raise SimulationError(
                f"scenario {config.name}: step {step.name} failed: {exc}; elements {exc.elements.tolist()[:20]}"
            ) from exc
        records.append(StepRecord(k, step.label, step.name, step.phase, schedule.dp_block1[k], schedule.dp_block2[k], state, fdp, tau_limit(state, law, fdp), diag))
        if k in checkpoints:
            u = u_start + segment_displacement(
                seg,
                mesh.n_nodes,
                schedule.dp_block1[k] - schedule.dp_block1[seg_start],
                schedule.dp_block2[k] - schedule.dp_block2[seg_start],
                state.traction() - records[seg_start].state.traction(),
            )
            displacements[step.name] = u
        if progress:
            progress(k, step, diag)
    return SimulationResult(config, mesh, stress, schedule, records, displacements, segments)


@dataclass(frozen=True)
class KKTSummary:
    """Worst values of the per-step contact checks over a whole run."""

    steps: int
    cone_violation: float
    complementarity: float
    slip_angle: float
    min_dissipation: float
    constraint_residual: float
    slip_monotone: bool

    def passes(self, cone=1e-6, comp=1e-8, angle=1e-3, residual=1e-8) -> bool:
        return (
            self.cone_violation <= cone
            and self.complementarity <= comp
            and self.slip_angle <= angle
            and self.min_dissipation >= 0.0
            and self.constraint_residual <= residual
            and self.slip_monotone
        )


def kkt_summary(result: SimulationResult) -> KKTSummary:
    cone = comp = ang = res = 0.0
    diss = np.inf
    mono = True
    prev = None
    n = 0
    for rec in result.records:
        st = rec.state
        if prev is not None and (st.cumulative_slip < prev - 1e-15).any():
            mono = False
        prev = st.cumulative_slip
        d = rec.diagnostics
        if d is None:
            continue
        n += 1
        cone = max(cone, d.cone_violation)
        gap_scale = max(float(np.mean(st.gap)), 1e-12)
        trac_scale = max(float(np.mean(np.abs(st.lambda_n))), 1.0)
        comp = max(comp, d.complementarity / (trac_scale * gap_scale))
        ang = max(ang, d.slip_angle)
        res = max(res, d.constraint_residual)
        diss = min(diss, d.dissipation)
    return KKTSummary(n, cone, comp, ang, float(diss if n else 0.0), res, mono)
