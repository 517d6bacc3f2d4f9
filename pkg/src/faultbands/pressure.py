"""Per-block pore-pressure change schedules and fault-zone pressure.

Pressures are changes relative to the initial (hydrostatic) value, in Pa, and
never positive. Step labels are fractional years: annual steps during
production and recovery, 15-day steps (1/24 year) during storage cycles.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

MPA = 1.0e6


class FluidKind(str, Enum):
    CH4 = "CH4"
    CO2 = "CO2"
    N2 = "N2"
    H2 = "H2"


class Phase(str, Enum):
    INIT = "INIT"
    PP = "PP"
    CGI = "CGI"
    ST = "ST"
    UGS_P = "UGS_P"
    UGS_S = "UGS_S"
    UHS_P = "UHS_P"
    UHS_S = "UHS_S"


CYCLIC_PHASES = (Phase.UGS_P, Phase.UGS_S, Phase.UHS_P, Phase.UHS_S, Phase.ST)
YEAR_DAYS = 365
CYCLE_STEP_DAYS = 15
HALF_CYCLE_STEPS = 12


@dataclass(frozen=True)
class LoadingStep:
    index: int
    label: float
    days: int
    phase: Phase

    @property
    def name(self) -> str:
        return format_label(self.label)


def format_label(label: float) -> str:
    r = round(float(label), 4)
    if r == int(r):
        return str(int(r))
    return f"{r:.4f}".rstrip("0")


@dataclass(frozen=True)
class ScheduleParams:
    cycles: int = 1
    depletion: float = 18.0 * MPA
    pp_years: int = 10
    excursion: float | None = None
    recovery_years: int | None = None
    ugs_dp_block1: float | None = None
    ugs_dp_block2: float | None = None


DEFAULT_EXCURSION = {FluidKind.CH4: 10.0 * MPA, FluidKind.H2: 9.2 * MPA}
DEFAULT_RECOVERY = {FluidKind.CH4: 2, FluidKind.CO2: 13, FluidKind.N2: 6, FluidKind.H2: 13}
H2_NOMINAL_CYCLES = 10


@dataclass
class PressureSchedule:
    fluid: FluidKind
    steps: list[LoadingStep]
    dp_block1: np.ndarray
    dp_block2: np.ndarray
    params: ScheduleParams = field(default_factory=ScheduleParams)

    def __len__(self) -> int:
        return len(self.steps)

    def labels(self) -> list[str]:
        return [s.name for s in self.steps]

    def find(self, step) -> int:
        """Step index from a LoadingStep or a label (number or string)."""
        if isinstance(step, LoadingStep):
            return step.index
        try:
            value = float(step)
        except (TypeError, ValueError):
            raise KeyError(f"step {step!r} not in schedule") from None
        for s in self.steps:
            if abs(s.label - value) < 1e-6:
                return s.index
        raise KeyError(f"step {step!r} not in schedule")

    def phase_end(self, phases) -> int | None:
        idx = [s.index for s in self.steps if s.phase in phases]
        return max(idx) if idx else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step_label", "phase", "days", "dp_block1_MPa", "dp_block2_MPa"])
        for s, a, b in zip(self.steps, self.dp_block1, self.dp_block2):
            w.writerow([s.name, s.phase.value, s.days, repr(float(a) / MPA), repr(float(b) / MPA)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, fluid: FluidKind | str = FluidKind.CH4) -> "PressureSchedule":
        rows = list(csv.DictReader(io.StringIO(text)))
        need = {"step_label", "phase", "days", "dp_block1_MPa", "dp_block2_MPa"}
        if not rows or not need <= set(rows[0]):
            raise ValueError(f"schedule CSV needs columns {sorted(need)}")
        steps, d1, d2 = [], [], []
        for i, r in enumerate(rows):
            steps.append(LoadingStep(i, float(r["step_label"]), int(r["days"]), Phase(r["phase"])))
            d1.append(float(r["dp_block1_MPa"]) * MPA)
            d2.append(float(r["dp_block2_MPa"]) * MPA)
        sched = cls(FluidKind(fluid), steps, np.array(d1), np.array(d2))
        validate_schedule(sched)
        return sched


def validate_schedule(s: PressureSchedule) -> None:
    if s.steps[0].label != 0 or s.dp_block1[0] != 0 or s.dp_block2[0] != 0:
        raise ValueError("schedule must start at step 0 with zero pressure change")
    if np.any(s.dp_block1 > 0) or np.any(s.dp_block2 > 0):
        raise ValueError("pressure may not exceed its initial value")
    if any(st.days < 0 for st in s.steps):
        raise ValueError("negative step duration")
    labels = [st.label for st in s.steps]
    if any(b <= a for a, b in zip(labels, labels[1:])):
        raise ValueError("step labels must increase")


def build_schedule(fluid: FluidKind | str, params: ScheduleParams | None = None, **kw) -> PressureSchedule:
    fluid = FluidKind(fluid)
    params = params or ScheduleParams(**kw)
    if params.depletion <= 0:
        raise ValueError("depletion amplitude must be positive")
    if params.pp_years < 1:
        raise ValueError("pp_years must be >= 1")
    recovery = params.recovery_years if params.recovery_years is not None else DEFAULT_RECOVERY[fluid]
    if recovery < 1:
        raise ValueError("recovery_years must be >= 1")
    cyclic = fluid in (FluidKind.CH4, FluidKind.H2)
    excursion = params.excursion if params.excursion is not None else DEFAULT_EXCURSION.get(fluid)
    if cyclic:
        if params.cycles < 1:
            raise ValueError("cycle count must be >= 1")
        if excursion is None or excursion <= 0:
            raise ValueError("excursion must be positive")
        if excursion > params.depletion:
            raise ValueError("excursion exceeds the depletion amplitude")
    elif params.ugs_dp_block1 is not None or params.ugs_dp_block2 is not None:
        raise ValueError(f"uneven block override needs a cyclic schedule; {fluid.value} has none")
    for v in (params.ugs_dp_block1, params.ugs_dp_block2):
        if v is not None and v > 0:
            raise ValueError("block override must be <= 0")

    steps = [LoadingStep(0, 0.0, 0, Phase.INIT)]
    d1 = [0.0]
    d2 = [0.0]

    def add(label, days, phase, a, b):
        steps.append(LoadingStep(len(steps), float(label), days, phase))
        d1.append(a)
        d2.append(b)

    n = params.pp_years
    for k in range(1, n + 1):
        v = -params.depletion * k / n
        add(k, YEAR_DAYS, Phase.PP, v, v)
    rec_phase = {FluidKind.CH4: Phase.CGI, FluidKind.H2: Phase.CGI, FluidKind.CO2: Phase.ST, FluidKind.N2: Phase.ST}[fluid]
    for k in range(1, recovery + 1):
        v = -params.depletion * (recovery - k) / recovery
        add(n + k, YEAR_DAYS, rec_phase, v + 0.0, v + 0.0)
    if cyclic:
        t0 = n + recovery
        lo1 = params.ugs_dp_block1 if params.ugs_dp_block1 is not None else -excursion
        lo2 = params.ugs_dp_block2 if params.ugs_dp_block2 is not None else -excursion
        prod, store = (Phase.UGS_P, Phase.UGS_S) if fluid == FluidKind.CH4 else (Phase.UHS_P, Phase.UHS_S)
        h = HALF_CYCLE_STEPS
        for c in range(params.cycles):
            for j in range(1, 2 * h + 1):
                frac = j / h if j <= h else (2 * h - j) / h
                add(t0 + c + j / (2 * h), CYCLE_STEP_DAYS, prod if j <= h else store, lo1 * frac + 0.0, lo2 * frac + 0.0)
    sched = PressureSchedule(fluid, steps, np.array(d1), np.array(d2), params)
    validate_schedule(sched)
    return sched


def block_pressure_change(schedule: PressureSchedule, step, block: int) -> float:
    i = schedule.find(step)
    if block == 1:
        return float(schedule.dp_block1[i])
    if block == 2:
        return float(schedule.dp_block2[i])
    raise ValueError(f"unknown block id {block}")


def hex_pressure(mesh, dp1: float, dp2: float) -> np.ndarray:
    """Per-hexahedron pressure change: the block value inside compartments, zero elsewhere."""
    return np.select([mesh.hex_block == 1, mesh.hex_block == 2], [dp1, dp2], 0.0)


def juxtaposition(mesh) -> tuple[np.ndarray, np.ndarray]:
    """Block ids (0 = none) of the two hexahedra adjacent to each interface element."""
    return mesh.hex_block[mesh.hex_a], mesh.hex_block[mesh.hex_b]


def fault_pressure_values(mesh, dp1: float, dp2: float) -> np.ndarray:
    ba, bb = juxtaposition(mesh)
    vals = np.array([0.0, dp1, dp2])
    n = (ba > 0).astype(float) + (bb > 0)
    s = vals[ba] + vals[bb]
    return np.divide(s, n, out=np.zeros(len(s)), where=n > 0)


def fault_pressure(schedule: PressureSchedule, mesh, step) -> np.ndarray:
    """Fault-zone pressure change per interface element at a step (Pa)."""
    i = schedule.find(step)
    return fault_pressure_values(mesh, schedule.dp_block1[i], schedule.dp_block2[i])
