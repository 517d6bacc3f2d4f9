"""Fault-stability diagnostics computed from contact states.

Criticality is chi = |tau| / tau_L clipped to [0, 1]; t80 is the fault area with
chi >= 0.8 divided by the 2000 m block size.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .contact import Mode
from .geomodel import FAULT_IDS

BLOCK_SIZE = 2000.0
T80_THRESHOLD = 0.80
MPA = 1.0e6


def chi(state_or_tau, tau_L) -> np.ndarray:
    """Elementwise criticality. Accepts a ContactState or shear magnitudes."""
    tau = state_or_tau.tau_mag if hasattr(state_or_tau, "tau_mag") else state_or_tau
    tau = np.abs(np.asarray(tau, dtype=float))
    tau_L = np.asarray(tau_L, dtype=float)
    tau, tau_L = np.broadcast_arrays(tau, tau_L)
    if (tau_L < 0).any():
        raise ValueError("Coulomb limit must be non-negative")
    with np.errstate(over="ignore"):
        out = np.divide(tau, tau_L, out=np.where(tau > 0, 1.0, 0.0), where=tau_L > 0)
    return np.minimum(out, 1.0)


def _fault_index(fault) -> int:
    if isinstance(fault, str):
        return FAULT_IDS.index(fault)
    return int(fault)


def _select(mesh, fault) -> np.ndarray:
    return np.flatnonzero(mesh.fault == _fault_index(fault))


def chi_depth_profile(fault, chi_values: np.ndarray, mesh) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted mean chi per element row of a fault, ordered by depth.

    Returns (stripe depth in m, mean chi).
    """
    sel = _select(mesh, fault)
    if len(sel) == 0:
        raise ValueError(f"fault {fault} has no elements")
    rows = mesh.row[sel]
    a = mesh.area[sel]
    c = np.asarray(chi_values, dtype=float)[sel]
    d = mesh.depth[sel]
    urows, inv = np.unique(rows, return_inverse=True)
    wa = np.bincount(inv, weights=a)
    if (wa <= 0).any():
        raise ValueError("empty stripe")
    mean = np.bincount(inv, weights=a * c) / wa
    depth = np.bincount(inv, weights=a * d) / wa
    order = np.argsort(depth)
    return depth[order], mean[order]


def t80(fault, chi_values: np.ndarray, mesh, threshold: float = T80_THRESHOLD) -> float:
    sel = _select(mesh, fault)
    c = np.asarray(chi_values, dtype=float)[sel]
    return float(mesh.area[sel][c >= threshold].sum() / BLOCK_SIZE)


def max_sliding(fault, cumulative_slip: np.ndarray, mesh) -> tuple[float, float]:
    """(delta_max, area-weighted mean delta) over one fault, in m."""
    sel = _select(mesh, fault)
    if len(sel) == 0:
        return 0.0, 0.0
    s = np.asarray(cumulative_slip, dtype=float)[sel]
    a = mesh.area[sel]
    return float(s.max()), float((s * a).sum() / a.sum())


def first_activation_step(fault, records, mesh):
    """Label of the earliest step with a slipping element on the fault, or None."""
    sel = _select(mesh, fault)
    for rec in records:
        if (np.asarray(rec.state.mode)[sel] == Mode.SLIP).any():
            return rec.label
    return None


@dataclass
class FaultMetrics:
    """Per-fault, per-step diagnostics."""

    fault: str
    step_label: float
    step_name: str
    phase: str
    chi: np.ndarray = field(repr=False)
    chi_max: float
    profile_depth: np.ndarray = field(repr=False)
    chi_depth_profile: np.ndarray = field(repr=False)
    t80: float
    delta_max: float
    delta_avg: float
    n_active: int
    active_element_ids: frozenset = field(repr=False)


@dataclass
class MetricsHistory:
    scenario: str
    fluid: str
    steps: list[str]
    labels: list[float]
    phases: list[str]
    table: dict[str, list[FaultMetrics]]
    first_activation: dict[str, float | None]

    def series(self, fault: str, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.table[fault]])

    def at(self, fault: str, step) -> FaultMetrics:
        value = float(step)
        for m in self.table[fault]:
            if abs(m.step_label - value) < 1e-6:
                return m
        raise KeyError(f"step {step!r} not in history")


def step_metrics(fault, record, mesh) -> FaultMetrics:
    sel = _select(mesh, fault)
    c_all = chi(record.state, record.tau_L)
    c = c_all[sel]
    depth, prof = chi_depth_profile(fault, c_all, mesh)
    dmax, davg = max_sliding(fault, record.state.cumulative_slip, mesh)
    active = sel[np.asarray(record.state.mode)[sel] == Mode.SLIP]
    name = FAULT_IDS[_fault_index(fault)]
    return FaultMetrics(
        fault=name,
        step_label=float(record.label),
        step_name=record.name,
        phase=getattr(record.phase, "value", str(record.phase)),
        chi=c,
        chi_max=float(c.max()) if len(c) else 0.0,
        profile_depth=depth,
        chi_depth_profile=prof,
        t80=t80(fault, c_all, mesh),
        delta_max=dmax,
        delta_avg=davg,
        n_active=int(len(active)),
        active_element_ids=frozenset(int(i) for i in active),
    )


def compute_history(result) -> MetricsHistory:
    """Metrics for every fault and loading step of a SimulationResult."""
    mesh = result.mesh
    table = {}
    first = {}
    for f in FAULT_IDS:
        if not (mesh.fault == _fault_index(f)).any():
            continue
        table[f] = [step_metrics(f, rec, mesh) for rec in result.records]
        first[f] = first_activation_step(f, result.records, mesh)
    return MetricsHistory(
        scenario=result.config.name,
        fluid=result.config.fluid.value,
        steps=[r.name for r in result.records],
        labels=[float(r.label) for r in result.records],
        phases=[getattr(r.phase, "value", str(r.phase)) for r in result.records],
        table=table,
        first_activation=first,
    )


METRICS_HEADER = ["scenario", "fault", "step_label", "chi_max", "t80_m", "delta_max_m", "delta_avg_m", "n_active"]
PROFILES_HEADER = ["fault", "step_label", "stripe_depth_m", "chi_mean"]


def _num(x: float) -> str:
    # fixed formatting keeps the files byte-stable across runs
    return f"{x:.10g}"


def metrics_csv(history: MetricsHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for f, rows in history.table.items():
        for m in rows:
            w.writerow([history.scenario, f, m.step_name, _num(m.chi_max), _num(m.t80), _num(m.delta_max), _num(m.delta_avg), m.n_active])
    return buf.getvalue()


def profiles_csv(history: MetricsHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROFILES_HEADER)
    for f, rows in history.table.items():
        for m in rows:
            for d, c in zip(m.profile_depth, m.chi_depth_profile):
                w.writerow([f, m.step_name, _num(d), _num(c)])
    return buf.getvalue()
