"""Scenario catalog, batch execution and ranking of fault-stability results."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .contact import FrictionLaw
from .geomodel import FAULT_IDS
from .metrics import MetricsHistory, compute_history
from .pressure import FluidKind, Phase, build_schedule

log = logging.getLogger(__name__)

MPA = 1.0e6
GPA = 1.0e9

STORAGE_PHASES = (Phase.UGS_P.value, Phase.UGS_S.value, Phase.UHS_P.value, Phase.UHS_S.value, Phase.ST.value)

# parameter groups, used to check that Stage-1 entries vary one thing at a time
GROUPS = {
    "dip_f3": "geometry",
    "block2_offset": "geometry",
    "cohesion": "fault",
    "phi_s": "fault",
    "phi_d": "fault",
    "d_c": "fault",
    "reservoir_young": "stiffness",
    "ugs_dp_block1": "pressure",
    "ugs_dp_block2": "pressure",
    "theta": "stress",
    "M1": "stress",
    "M2": "stress",
    "stiffness_scale": "geochemistry",
}


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    stage: int
    description: str
    overrides: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        for k, _ in self.overrides:
            if k not in GROUPS:
                raise ValueError(f"scenario {self.id}: unknown override {k!r}")

    @property
    def params(self) -> dict[str, float]:
        return dict(self.overrides)

    @property
    def groups(self) -> set[str]:
        return {GROUPS[k] for k, _ in self.overrides}


def _spec(id, stage, description, **kw) -> ScenarioSpec:
    return ScenarioSpec(id, stage, description, tuple(kw.items()))


_CATALOG = (
    _spec("1", 1, "reference"),
    _spec("2a", 1, "F3 dip +65 deg", dip_f3=65.0),
    _spec("2b", 1, "F3 dip -65 deg", dip_f3=-65.0),
    _spec("2c", 1, "block 2 offset 100 m", block2_offset=100.0),
    _spec("2d", 1, "block 2 offset 200 m", block2_offset=200.0),
    _spec("3a", 1, "cohesion 0.5 MPa", cohesion=0.5 * MPA),
    _spec("3b", 1, "static friction angle 20 deg", phi_s=20.0),
    _spec("3c", 1, "slip weakening to 10 deg over 2 mm", phi_d=10.0, d_c=0.002),
    _spec("3d", 1, "slip weakening to 20 deg over 20 mm", phi_d=20.0, d_c=0.020),
    _spec("4a", 1, "reservoir E 8 GPa", reservoir_young=8.0 * GPA),
    _spec("4b", 1, "reservoir E 20 GPa", reservoir_young=20.0 * GPA),
    _spec("5a", 1, "uneven storage dp: -10 / 0 MPa", ugs_dp_block1=-10.0 * MPA, ugs_dp_block2=0.0),
    _spec("5b", 1, "uneven storage dp: -10 / -20 MPa", ugs_dp_block1=-10.0 * MPA, ugs_dp_block2=-20.0 * MPA),
    _spec("6a", 1, "horizontal stresses rotated 90 deg", theta=90.0),
    _spec("6b", 1, "M1 = 0.40, M2 = 0.47", M1=0.40, M2=0.47),
    _spec("C1", 2, "c = 0, F3 dip +65 deg, offset 100 m", cohesion=0.0, dip_f3=65.0, block2_offset=100.0),
    _spec("C2", 2, "phi_s = 20 deg, F3 dip +65 deg, offset 100 m", phi_s=20.0, dip_f3=65.0, block2_offset=100.0),
    _spec("W", 2, "reservoir E -30% after production", stiffness_scale=0.7),
    _spec("H", 2, "reservoir E +30% after production", stiffness_scale=1.3),
)


def catalog() -> list[ScenarioSpec]:
    return list(_CATALOG)


def catalog_ids() -> list[str]:
    return [s.id for s in _CATALOG]


def get_spec(scenario_id: str) -> ScenarioSpec:
    for s in _CATALOG:
        if s.id.lower() == str(scenario_id).strip().lower():
            return s
    raise KeyError(f"unknown scenario {scenario_id!r}; known: {', '.join(catalog_ids())}")


class ScenarioError(ValueError):
    pass


def apply_scenario(base, spec: ScenarioSpec | str, fluid: FluidKind | str | None = None):
    """Return a SimulationConfig with the scenario overrides applied on top of ``base``."""
    if isinstance(spec, str):
        spec = get_spec(spec)
    p = spec.params
    fluid = FluidKind(fluid) if fluid is not None else base.fluid
    law = base.law
    if any(k in p for k in ("cohesion", "phi_s", "phi_d", "d_c")):
        c = p.get("cohesion", law.cohesion)
        phi_s = p.get("phi_s", law.phi_s)
        try:
            if "phi_d" in p or "d_c" in p:
                law = FrictionLaw.weakening(c, phi_s, p.get("phi_d", law.phi_d), p.get("d_c", law.d_c))
            else:
                law = replace(law, cohesion=c, phi_s=phi_s, phi_d=min(law.phi_d, phi_s) if law.weakening_enabled else phi_s)
        except ValueError as exc:
            raise ScenarioError(f"scenario {spec.id}: {exc}") from exc
    regime = base.regime
    if any(k in p for k in ("theta", "M1", "M2")):
        regime = replace(regime, **{k: p[k] for k in ("theta", "M1", "M2") if k in p})
    schedule = base.schedule
    if "ugs_dp_block1" in p or "ugs_dp_block2" in p:
        schedule = replace(schedule, ugs_dp_block1=p.get("ugs_dp_block1"), ugs_dp_block2=p.get("ugs_dp_block2"))
    name = spec.id if fluid == FluidKind.CH4 else f"{spec.id}_{fluid.value}"
    try:
        cfg = replace(
            base,
            name=name,
            fluid=fluid,
            dip_f3=p.get("dip_f3", base.dip_f3),
            block2_offset=p.get("block2_offset", base.block2_offset),
            reservoir_young=p.get("reservoir_young", base.reservoir_young),
            regime=regime,
            law=law,
            schedule=schedule,
            stiffness_scale=p.get("stiffness_scale", base.stiffness_scale),
        )
        build_schedule(cfg.fluid, cfg.schedule)
    except ValueError as exc:
        raise ScenarioError(f"scenario {spec.id} with {fluid.value}: {exc}") from exc
    return cfg


# ------------------------------------------------------------------ ranking


@dataclass(frozen=True)
class RankingRecord:
    scenario: str
    fault: str
    chi_max_ugs: float
    max_delta_avg: float
    activation_step: float | None
    chi_max_overall: float
    fluid: str = "CH4"


def ranking_records(history: MetricsHistory, scenario: str | None = None) -> list[RankingRecord]:
    scenario = scenario or history.scenario
    store = np.isin(np.array(history.phases), STORAGE_PHASES)
    out = []
    for f in history.table:
        chi = history.series(f, "chi_max")
        davg = history.series(f, "delta_avg")
        out.append(
            RankingRecord(
                scenario=scenario,
                fault=f,
                chi_max_ugs=float(chi[store].max()) if store.any() else 0.0,
                max_delta_avg=float(davg.max()),
                activation_step=history.first_activation[f],
                chi_max_overall=float(chi.max()),
                fluid=history.fluid,
            )
        )
    return out


def _order_index(scenario: str) -> int:
    ids = catalog_ids() + ["2a/b"]
    base = scenario.split("_")[0]
    if base == "2a/b":
        return ids.index("2a")
    return ids.index(base) if base in ids else len(ids)


def _fluid_index(fluid: str) -> int:
    names = [f.value for f in FluidKind]
    return names.index(fluid) if fluid in names else len(names)


def rank_key(r: RankingRecord):
    act = r.activation_step if r.activation_step is not None else math.inf
    return (-r.chi_max_ugs, -r.max_delta_avg, act, _order_index(r.scenario), _fluid_index(r.fluid), r.scenario)


def rank(records: list[RankingRecord], fault: str | None = None) -> list[RankingRecord]:
    """Descending by storage-phase chi_max, then max mean slip, then earlier activation."""
    if fault is not None:
        records = [r for r in records if r.fault == fault]
    faults = {r.fault for r in records}
    if len(faults) > 1:
        raise ValueError(f"rank() needs records for one fault, got {sorted(faults)}")
    return sorted(records, key=rank_key)


def merge_pair(records: list[RankingRecord], a: str = "2a", b: str = "2b", label: str = "2a/b") -> list[RankingRecord]:
    """Replace the records of two scenarios by their worst case under one label."""
    out = []
    pairs: dict[tuple[str, str], list[RankingRecord]] = {}
    for r in records:
        if r.scenario in (a, b):
            pairs.setdefault((r.fault, r.fluid), []).append(r)
        else:
            out.append(r)
    for (fault, fluid), rs in pairs.items():
        if len(rs) < 2:
            out.extend(rs)
            continue
        acts = [r.activation_step for r in rs if r.activation_step is not None]
        out.append(
            RankingRecord(
                label,
                fault,
                max(r.chi_max_ugs for r in rs),
                max(r.max_delta_avg for r in rs),
                min(acts) if acts else None,
                max(r.chi_max_overall for r in rs),
                fluid,
            )
        )
    return out


RANKING_HEADER = ["rank", "scenario", "fluid", "fault", "chi_max_UGS", "max_delta_avg_m", "activation_year", "chi_max"]
RECORDS_HEADER = ["scenario", "fluid", "fault", "chi_max_UGS", "max_delta_avg_m", "activation_year", "chi_max"]


def _fmt_act(a) -> str:
    if a is None:
        return "-"
    return f"{a:.10g}"


def ranking_csv(ranked: list[RankingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_HEADER)
    for i, r in enumerate(ranked, 1):
        w.writerow([i, r.scenario, r.fluid, r.fault, f"{r.chi_max_ugs:.10g}", f"{r.max_delta_avg:.10g}", _fmt_act(r.activation_step), f"{r.chi_max_overall:.10g}"])
    return buf.getvalue()


def records_csv(records: list[RankingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORDS_HEADER)
    for r in records:
        w.writerow([r.scenario, r.fluid, r.fault, f"{r.chi_max_ugs:.17g}", f"{r.max_delta_avg:.17g}", _fmt_act(r.activation_step) if r.activation_step is None else f"{r.activation_step:.17g}", f"{r.chi_max_overall:.17g}"])
    return buf.getvalue()


def read_records_csv(text: str) -> list[RankingRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and not set(RECORDS_HEADER) <= set(rows[0]):
        raise ValueError(f"records CSV needs columns {RECORDS_HEADER}")
    out = []
    for r in rows:
        act = None if r["activation_year"] in ("-", "") else float(r["activation_year"])
        out.append(
            RankingRecord(r["scenario"], r["fault"], float(r["chi_max_UGS"]), float(r["max_delta_avg_m"]), act, float(r["chi_max"]), r["fluid"])
        )
    return out


# ------------------------------------------------------------------ batches


@dataclass
class RunOutcome:
    scenario: str
    fluid: str
    history: MetricsHistory | None
    error: str | None = None
    output_dir: str | None = None
    kkt: object = None


@dataclass
class BatchResult:
    runs: list[RunOutcome]
    records: list[RankingRecord] = field(default_factory=list)

    @property
    def failures(self) -> list[RunOutcome]:
        return [r for r in self.runs if r.error is not None]

    def history(self, scenario: str, fluid: str = "CH4") -> MetricsHistory:
        for r in self.runs:
            if r.scenario == scenario and r.fluid == fluid and r.history is not None:
                return r.history
        raise KeyError(f"no successful run for {scenario}/{fluid}")

    def ranked(self, fault: str, fluid: str | None = None, merge: bool = True) -> list[RankingRecord]:
        recs = [r for r in self.records if r.fault == fault and (fluid is None or r.fluid == fluid)]
        if merge:
            recs = merge_pair(recs)
        return rank(recs)


def _run_one(task):
    base, spec_id, fluid, out_dir = task
    from .solver import kkt_summary, run_simulation

    try:
        cfg = apply_scenario(base, get_spec(spec_id), fluid)
        result = run_simulation(cfg)
        hist = compute_history(result)
        path = None
        if out_dir:
            from .cli_io import write_outputs

            path = os.path.join(out_dir, cfg.name)
            write_outputs(result, path, history=hist)
        return RunOutcome(spec_id, FluidKind(fluid).value, hist, None, path, kkt_summary(result))
    except Exception as exc:  # a failed run must not stop the batch
        log.error("scenario %s (%s) failed: %s", spec_id, fluid, exc)
        return RunOutcome(spec_id, FluidKind(fluid).value, None, f"{type(exc).__name__}: {exc}")


def _stiffness_key(base, spec_id: str, fluid):
    # runs sharing geometry and stiffness reuse one compliance factorization
    try:
        c = apply_scenario(base, get_spec(spec_id), fluid)
    except ScenarioError:
        return (0.0, 0.0, 0.0, 0.0)
    return (c.dip_f3, c.block2_offset, c.reservoir_young or 0.0, c.stiffness_scale)


def run_batch(specs, fluids, parallelism: int = 1, base=None, out_dir: str | None = None) -> BatchResult:
    """Run every (scenario, fluid) pair. Failures are collected, not raised.

    Results are returned in catalog order regardless of completion order.
    """
    from .solver import SimulationConfig

    base = base or SimulationConfig()
    ids = [s.id if isinstance(s, ScenarioSpec) else get_spec(s).id for s in specs]
    fluids = [FluidKind(f).value for f in fluids]
    tasks = [(base, i, f, out_dir) for i in ids for f in fluids]
    if not tasks:
        return BatchResult([], [])
    order = sorted(range(len(tasks)), key=lambda k: (_stiffness_key(base, tasks[k][1], tasks[k][2]), k))
    outcomes: list[RunOutcome | None] = [None] * len(tasks)
    if parallelism <= 1:
        for k in order:
            outcomes[k] = _run_one(tasks[k])
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futs = {k: pool.submit(_run_one, tasks[k]) for k in order}
            for k, fut in futs.items():
                outcomes[k] = fut.result()
    records = []
    for o in outcomes:
        if o.history is not None:
            records.extend(ranking_records(o.history, o.scenario))
    return BatchResult(outcomes, records)


def write_batch(batch: BatchResult, out_dir: str, resolution=None) -> list[str]:
    """Batch manifest, the per-fault ranking CSVs and the raw ranking records."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    lines = ["[batch]"]
    lines.append("scenarios = " + ", ".join(dict.fromkeys(r.scenario for r in batch.runs)))
    lines.append("fluids = " + ", ".join(dict.fromkeys(r.fluid for r in batch.runs)))
    if resolution is not None:
        lines.append(f"mesh_dx_m = {resolution.dx:g}")
        lines.append(f"mesh_dy_m = {resolution.dy:g}")
        lines.append(f"mesh_dz_m = {resolution.dz:g}")
    for r in batch.runs:
        status = "ok" if r.error is None else f"failed: {r.error}"
        lines.append(f"run.{r.scenario}.{r.fluid} = {status}")
    path = os.path.join(out_dir, "batch.ini")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    written.append(path)
    path = os.path.join(out_dir, "ranking_records.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(records_csv(batch.records))
    written.append(path)
    for f in FAULT_IDS:
        if not any(r.fault == f for r in batch.records):
            continue
        path = os.path.join(out_dir, f"ranking_{f}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(ranking_csv(batch.ranked(f)))
        written.append(path)
    return written
