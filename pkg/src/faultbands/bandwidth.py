"""Safe operational pressure bandwidth from reactivation events seen during production.

Rules, for initial pressure P_i, minimum production pressure P_min and an event
at P_seis:

* no events: the storage cycle may span the whole range [P_min, P_i];
* dP_max = max(|P_seis - P_min|, |P_i - P_seis|);
* case A (event closer to P_i): cap the maximum pressure at P_seis;
* case B (event closer to P_min): keep the minimum pressure above P_seis;
* event on a compartment fault: keep the inter-block difference below P_i - P_seis.

Several events are combined by taking the most restrictive value of each bound.

>>> a = advise(BandwidthInput(20e6, 2e6, [Event(18e6)]))
>>> a.case, a.dP_max / 1e6, a.P_max_cap / 1e6
('A', 16.0, 18.0)
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field

MPA = 1.0e6


class BandwidthError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    P_seis: float
    on_compartment_fault: bool = False


@dataclass(frozen=True)
class BandwidthInput:
    P_i: float
    P_min_PP: float
    events: tuple[Event, ...] = ()
    margin: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.P_min_PP < self.P_i:
            raise BandwidthError(f"P_min_PP ({self.P_min_PP / MPA:g} MPa) must be below P_i ({self.P_i / MPA:g} MPa)")
        if self.margin < 1.0:
            raise BandwidthError("margin multiplier must be >= 1")
        for k, e in enumerate(self.events, 1):
            if not self.P_min_PP <= e.P_seis <= self.P_i:
                raise BandwidthError(
                    f"event {k}: P_seis = {e.P_seis / MPA:g} MPa outside [{self.P_min_PP / MPA:g}, {self.P_i / MPA:g}] MPa"
                )


@dataclass(frozen=True)
class BandwidthAdvice:
    case: str
    dP_max: float
    P_max_cap: float
    P_min_floor: float
    interblock_dP_cap: float | None
    rationale: tuple[str, ...] = field(default=())

    def report(self) -> str:
        def mpa(v):
            return f"{v / MPA:g} MPa"

        lines = [
            f"case {self.case}",
            f"dP_max = {mpa(self.dP_max)}",
            f"P_max_cap = {mpa(self.P_max_cap)}",
            f"P_min_floor = {mpa(self.P_min_floor)}",
            f"interblock_dP_cap = {mpa(self.interblock_dP_cap) if self.interblock_dP_cap is not None else 'none'}",
            "rationale:",
        ]
        lines += [f"  - {r}" for r in self.rationale]
        return "\n".join(lines) + "\n"


CSV_HEADER = ["case", "dP_max_MPa", "P_max_cap_MPa", "P_min_floor_MPa", "interblock_dP_cap_MPa"]


def advice_csv(advice: BandwidthAdvice) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    ib = "" if advice.interblock_dP_cap is None else f"{advice.interblock_dP_cap / MPA:.10g}"
    w.writerow([advice.case, f"{advice.dP_max / MPA:.10g}", f"{advice.P_max_cap / MPA:.10g}", f"{advice.P_min_floor / MPA:.10g}", ib])
    return buf.getvalue()


def _single(inp: BandwidthInput, e: Event, k: int):
    to_min = abs(e.P_seis - inp.P_min_PP)
    to_init = abs(inp.P_i - e.P_seis)
    dp = max(to_min, to_init)
    cap, floor, ib = inp.P_i, inp.P_min_PP, None
    why = [f"event {k} at {e.P_seis / MPA:g} MPa: |P_seis - P_min| = {to_min / MPA:g} MPa, |P_i - P_seis| = {to_init / MPA:g} MPa, dP_max = {dp / MPA:g} MPa"]
    if to_min >= to_init:
        cap = e.P_seis
        why.append(f"event {k}: case A, maximum pressure kept below P_seis")
    if to_min <= to_init:
        floor = e.P_seis
        why.append(f"event {k}: case B, minimum pressure kept above P_seis")
    if to_min == to_init:
        why.append(f"event {k}: tie, both cap and floor applied")
    if e.on_compartment_fault:
        ib = inp.P_i - e.P_seis
        why.append(f"event {k}: on a compartment fault, inter-block difference below {ib / MPA:g} MPa")
    return dp, cap, floor, ib, why, to_min >= to_init, to_min <= to_init


def advise(inp: BandwidthInput) -> BandwidthAdvice:
    span = inp.P_i - inp.P_min_PP
    if not inp.events:
        dp = span / inp.margin
        why = ["no reactivation during production: the storage cycle may span the whole production range"]
        if inp.margin != 1.0:
            why.append(f"margin {inp.margin:g} applied to dP_max")
        return BandwidthAdvice("NONE", dp, inp.P_i, inp.P_min_PP, None, tuple(why))
    dps, caps, floors, ibs, why = [], [], [], [], []
    capped = floored = False
    for k, e in enumerate(inp.events, 1):
        dp, cap, floor, ib, w, a, b = _single(inp, e, k)
        capped |= a
        floored |= b
        dps.append(dp)
        caps.append(cap)
        floors.append(floor)
        if ib is not None:
            ibs.append(ib)
        why += w
    cap = min(caps)
    floor = max(floors)
    dp = min(dps)
    ib = min(ibs) if ibs else None
    if len(inp.events) > 1:
        why.append("several events: the most restrictive bound of each kind is kept")
    case = "A+B" if capped and floored else ("A" if capped else "B")
    if inp.margin != 1.0:
        dp /= inp.margin
        if ib is not None:
            ib /= inp.margin
        why.append(f"margin {inp.margin:g} applied to dP_max and the inter-block cap")
    return BandwidthAdvice(case, dp, cap, floor, ib, tuple(why))


def _bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise BandwidthError(f"{where}: expected a boolean, got {text!r}")


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise BandwidthError(f"{where}: expected a number, got {text!r}") from None


def parse_input(text: str) -> BandwidthInput:
    """Read the INI input: a [bandwidth] section plus one [event.N] section per event.

    Pressures are in MPa (keys P_i_MPa, P_min_PP_MPa, P_seis_PP_MPa).
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise BandwidthError(f"bandwidth input: {exc}") from None
    if "bandwidth" not in cp:
        raise BandwidthError("bandwidth input: missing [bandwidth] section")
    sec = cp["bandwidth"]
    allowed = {"P_i_MPa", "P_min_PP_MPa", "margin"}
    for k in sec:
        if k not in allowed:
            raise BandwidthError(f"[bandwidth]: unknown key {k!r}")
    for k in ("P_i_MPa", "P_min_PP_MPa"):
        if k not in sec:
            raise BandwidthError(f"[bandwidth]: missing {k}")
    events = []
    for name in cp.sections():
        if name == "bandwidth":
            continue
        if not name.startswith("event"):
            raise BandwidthError(f"unknown section [{name}]")
        s = cp[name]
        for k in s:
            if k not in ("P_seis_PP_MPa", "on_compartment_fault"):
                raise BandwidthError(f"[{name}]: unknown key {k!r}")
        if "P_seis_PP_MPa" not in s:
            raise BandwidthError(f"[{name}]: missing P_seis_PP_MPa")
        events.append(
            Event(
                _float(s["P_seis_PP_MPa"], f"[{name}] P_seis_PP_MPa") * MPA,
                _bool(s.get("on_compartment_fault", "false"), f"[{name}] on_compartment_fault"),
            )
        )
    return BandwidthInput(
        _float(sec["P_i_MPa"], "[bandwidth] P_i_MPa") * MPA,
        _float(sec["P_min_PP_MPa"], "[bandwidth] P_min_PP_MPa") * MPA,
        tuple(events),
        _float(sec.get("margin", "1"), "[bandwidth] margin"),
    )
