"""Run configuration files and result persistence.

Config grammar: plain ``key = value`` lines, optionally grouped under
``[section]`` headers; ``#`` and ``;`` start comments. Every key name is unique
across sections, so headers are optional, but a key placed under the wrong
header is rejected. Units: MPa for stresses and pressures, GPa for Young's
moduli, m for lengths, deg for angles, years for durations.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from .contact import FrictionLaw, Mode, SolverConfig
from .geomodel import MeshResolution, StressRegime, build_geometry, reference_layers
from .metrics import MetricsHistory, chi, compute_history, metrics_csv, profiles_csv
from .pressure import FluidKind, ScheduleParams
from .solver import SimulationConfig, checkpoint_indices

MPA = 1.0e6
GPA = 1.0e9
DEFAULT_OUT = "faultbands_out"
LAYER_NAMES = tuple(l.name for l in reference_layers())


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.key = key


@dataclass(frozen=True)
class Key:
    name: str
    section: str
    kind: str  # float, int, str, fluid, optfloat
    scale: float = 1.0
    check: Callable | None = None
    rule: str = ""


def _rng(lo=None, hi=None, lo_open=False, hi_open=False):
    def f(v):
        if v is None:
            return True
        if lo is not None and (v < lo or (lo_open and v == lo)):
            return False
        if hi is not None and (v > hi or (hi_open and v == hi)):
            return False
        return True

    return f


def _rule(lo=None, hi=None, lo_open=False, hi_open=False, unit=""):
    a = "(" if lo_open else "["
    b = ")" if hi_open else "]"
    lo_s = "-inf" if lo is None else f"{lo:g}"
    hi_s = "inf" if hi is None else f"{hi:g}"
    return f"must lie in {a}{lo_s}, {hi_s}{b}{(' ' + unit) if unit else ''}"


def _k(name, section, kind, scale=1.0, lo=None, hi=None, lo_open=False, hi_open=False, unit=""):
    chk = _rng(lo, hi, lo_open, hi_open) if (lo is not None or hi is not None) else None
    rule = _rule(lo, hi, lo_open, hi_open, unit) if chk else ""
    return Key(name, section, kind, scale, chk, rule)


KEYS = [
    Key("name", "run", "str"),
    Key("scenario", "run", "optstr"),
    Key("fluid", "run", "fluid"),
    Key("output_dir", "run", "optstr"),
    _k("dip_f3", "geometry", "float", lo=-90, hi=90, unit="deg"),
    _k("block2_offset", "geometry", "float", lo=0, hi=200, unit="m"),
    _k("M1", "stress", "float", lo=0, hi=1, lo_open=True),
    _k("M2", "stress", "float", lo=0, hi=1, lo_open=True),
    _k("theta", "stress", "float", lo=-180, hi=180, unit="deg"),
    _k("cohesion", "friction", "float", MPA, lo=0, unit="MPa"),
    _k("phi_s", "friction", "float", lo=0, hi=90, lo_open=True, hi_open=True, unit="deg"),
    _k("phi_d", "friction", "optfloat", lo=0, hi=90, lo_open=True, hi_open=True, unit="deg"),
    _k("d_c", "friction", "optfloat", lo=0, lo_open=True, unit="m"),
    _k("cycles", "schedule", "int", lo=1),
    _k("depletion", "schedule", "float", MPA, lo=0, lo_open=True, unit="MPa"),
    _k("pp_years", "schedule", "int", lo=1),
    _k("excursion", "schedule", "optfloat", MPA, lo=0, lo_open=True, unit="MPa"),
    _k("recovery_years", "schedule", "optint", lo=1),
    _k("ugs_dp_block1", "schedule", "optfloat", MPA, hi=0, unit="MPa"),
    _k("ugs_dp_block2", "schedule", "optfloat", MPA, hi=0, unit="MPa"),
    _k("dx", "mesh", "float", lo=0, lo_open=True, unit="m"),
    _k("dy", "mesh", "float", lo=0, lo_open=True, unit="m"),
    _k("dz", "mesh", "float", lo=0, lo_open=True, unit="m"),
    _k("fine_top", "mesh", "float", lo=0, unit="m"),
    _k("fine_bottom", "mesh", "float", lo=0, unit="m"),
    _k("grading", "mesh", "float", lo=1),
    _k("f3_band", "mesh", "float", lo=0, unit="m"),
    _k("pad_cells", "mesh", "int", lo=0),
    _k("tol", "solver", "float", lo=0, lo_open=True),
    _k("max_iter", "solver", "int", lo=1),
    _k("tol_direction", "solver", "float", lo=0, lo_open=True),
    _k("tol_friction", "solver", "float", lo=0, lo_open=True),
    _k("tol_open", "solver", "float", MPA, lo=0, unit="MPa"),
    _k("stabilization", "solver", "float", lo=0, unit=""),
    _k("biot_alpha", "model", "float", lo=0, hi=1, lo_open=True),
    _k("compartment_young", "model", "optfloat", GPA, lo=0, lo_open=True, unit="GPa"),
    _k("stiffness_scale", "model", "float", lo=0, lo_open=True),
]
for _layer in LAYER_NAMES:
    KEYS += [
        _k(f"{_layer}_young", "materials", "float", GPA, lo=0, lo_open=True, unit="GPa"),
        _k(f"{_layer}_poisson", "materials", "float", lo=0, hi=0.5, lo_open=True, hi_open=True),
        _k(f"{_layer}_density", "materials", "float", lo=0, lo_open=True, unit="kg/m3"),
    ]
KEY_BY_NAME = {k.name: k for k in KEYS}
SECTIONS = list(dict.fromkeys(k.section for k in KEYS))


@dataclass(frozen=True)
class RunConfig:
    simulation: SimulationConfig
    scenario: str | None = None
    output_dir: str | None = None


# ----------------------------------------------------------------- flattening


def flatten(rc: RunConfig) -> dict[str, object]:
    """Physical values (SI) for every config key."""
    c = rc.simulation
    law = c.law
    v: dict[str, object] = {
        "name": c.name,
        "scenario": rc.scenario,
        "fluid": c.fluid.value,
        "output_dir": rc.output_dir,
        "dip_f3": c.dip_f3,
        "block2_offset": c.block2_offset,
        "M1": c.regime.M1,
        "M2": c.regime.M2,
        "theta": c.regime.theta,
        "cohesion": law.cohesion,
        "phi_s": law.phi_s,
        "phi_d": law.phi_d if law.weakening_enabled else None,
        "d_c": law.d_c if law.weakening_enabled else None,
        "biot_alpha": c.biot_alpha,
        "compartment_young": c.reservoir_young,
        "stiffness_scale": c.stiffness_scale,
    }
    for f in fields(ScheduleParams):
        v[f.name] = getattr(c.schedule, f.name)
    for f in fields(MeshResolution):
        v[f.name] = getattr(c.resolution, f.name)
    for f in fields(SolverConfig):
        v[f.name] = getattr(c.solver, f.name)
    for layer in c.layers:
        v[f"{layer.name}_young"] = layer.young
        v[f"{layer.name}_poisson"] = layer.poisson
        v[f"{layer.name}_density"] = layer.density
    return v


def unflatten(v: dict[str, object]) -> RunConfig:
    def build(keys, fn):
        try:
            return fn()
        except ValueError as exc:
            raise ConfigError(f"{'/'.join(keys)}: {exc}", key=keys[0]) from None

    if v["phi_d"] is not None or v["d_c"] is not None:
        if v["phi_d"] is None or v["d_c"] is None:
            raise ConfigError("phi_d and d_c must be given together to enable slip weakening", key="phi_d")
        law = build(["phi_d", "d_c"], lambda: FrictionLaw.weakening(v["cohesion"], v["phi_s"], v["phi_d"], v["d_c"]))
    else:
        law = build(["phi_s"], lambda: FrictionLaw(v["cohesion"], v["phi_s"], v["phi_s"], 0.0, False))
    try:
        build_geometry(v["dip_f3"], v["block2_offset"], vertical_cell=v["dz"])
    except ValueError as exc:
        key = "block2_offset" if "offset" in str(exc) else "dip_f3"
        raise ConfigError(f"{key}: {exc}", key=key) from None
    if v["M1"] > v["M2"]:
        raise ConfigError(f"M1 = {v['M1']:g} must not exceed M2 = {v['M2']:g}", key="M1")
    regime = StressRegime(M1=v["M1"], M2=v["M2"], theta=v["theta"])
    schedule = ScheduleParams(**{f.name: v[f.name] for f in fields(ScheduleParams)})
    resolution = MeshResolution(**{f.name: v[f.name] for f in fields(MeshResolution)})
    solver = SolverConfig(**{f.name: v[f.name] for f in fields(SolverConfig)})
    layers = tuple(
        replace(l, young=v[f"{l.name}_young"], poisson=v[f"{l.name}_poisson"], density=v[f"{l.name}_density"])
        for l in reference_layers()
    )
    sim = build(
        ["name"],
        lambda: SimulationConfig(
            name=v["name"],
            fluid=FluidKind(v["fluid"]),
            dip_f3=v["dip_f3"],
            block2_offset=v["block2_offset"],
            layers=layers,
            reservoir_young=v["compartment_young"],
            regime=regime,
            law=law,
            schedule=schedule,
            resolution=resolution,
            solver=solver,
            biot_alpha=v["biot_alpha"],
            stiffness_scale=v["stiffness_scale"],
        ),
    )
    return RunConfig(sim, v["scenario"], v["output_dir"])


# ------------------------------------------------------------------ parsing

_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w.-]*)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_][\w.]*)\s*[=:]\s*(.*)$")
_NONE = ("", "none", "-")


def _convert(key: Key, raw: str, line: int):
    text = raw.strip()
    try:
        if key.kind in ("optfloat", "optint", "optstr") and text.lower() in _NONE:
            return None
        if key.kind in ("float", "optfloat"):
            val = float(text)
            if not np.isfinite(val):
                raise ValueError
        elif key.kind in ("int", "optint"):
            val = int(text)
        elif key.kind == "fluid":
            return FluidKind(text.upper()).value
        else:
            if not text:
                raise ValueError
            return text
    except ValueError:
        raise ConfigError(f"{key.name}: cannot read {text!r} as {key.kind.replace('opt', '')}", line, key.name) from None
    if key.check is not None and not key.check(val):
        raise ConfigError(f"{key.name} = {text}: {key.name} {key.rule}", line, key.name)
    return val * key.scale if key.kind.endswith("float") else val


def parse_entries(text: str) -> dict[str, tuple[str, int]]:
    """Raw ``key -> (value, line)`` mapping with structural checks."""
    out: dict[str, tuple[str, int]] = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not s:
            continue
        m = _SECTION.match(s)
        if m:
            section = m.group(1).lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; known: {', '.join(SECTIONS)}", n)
            continue
        m = _ENTRY.match(s)
        if not m:
            raise ConfigError(f"expected 'key = value', got {s!r}", n)
        name, value = m.group(1), m.group(2)
        key = KEY_BY_NAME.get(name)
        if key is None:
            raise ConfigError(f"unknown key {name!r}", n, name)
        if section is not None and key.section != section:
            raise ConfigError(f"key {name!r} belongs to [{key.section}], not [{section}]", n, name)
        if name in out:
            raise ConfigError(f"duplicate key {name!r} (first set on line {out[name][1]})", n, name)
        out[name] = (value, n)
    return out


def parse_config_text(text: str) -> RunConfig:
    from .scenarios import ScenarioError, apply_scenario, get_spec

    entries = parse_entries(text)
    values = {name: (_convert(KEY_BY_NAME[name], raw, line), line) for name, (raw, line) in entries.items()}
    rc = RunConfig(SimulationConfig())
    fluid = values["fluid"][0] if "fluid" in values else None
    if "scenario" in values and values["scenario"][0] is not None:
        sid, line = values["scenario"]
        try:
            spec = get_spec(sid)
            rc = RunConfig(apply_scenario(rc.simulation, spec, fluid), spec.id)
        except (KeyError, ScenarioError) as exc:
            raise ConfigError(f"scenario: {exc.args[0]}", line, "scenario") from None
    flat = flatten(rc)
    for name, (val, _) in values.items():
        flat[name] = val
    if "scenario" in values and values["scenario"][0] is not None:
        flat["scenario"] = rc.scenario
    try:
        return unflatten(flat)
    except ConfigError as exc:
        if exc.key in values:
            raise ConfigError(exc.args[0], values[exc.key][1], exc.key) from None
        raise


def parse_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return parse_config_text(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}", exc.line, exc.key) from None


def _encode(value, scale: float) -> str:
    """Shortest decimal text that parses back to exactly ``value`` after scaling."""
    x = float(value)
    y = x / scale
    for _ in range(64):
        text = repr(y)
        if float(text) * scale == x:
            return text
        y = np.nextafter(y, np.inf if float(text) * scale < x else -np.inf)
    raise ValueError(f"cannot encode {x!r} exactly")


def serialize_config(rc: RunConfig) -> str:
    flat = flatten(rc)
    lines = []
    for sec in SECTIONS:
        lines.append(f"[{sec}]")
        for k in KEYS:
            if k.section != sec:
                continue
            v = flat[k.name]
            if v is None:
                text = "none"
            elif k.kind.endswith("float"):
                text = _encode(v, k.scale)
            else:
                text = str(v)
            lines.append(f"{k.name} = {text}")
        lines.append("")
    return "\n".join(lines)


def config_hash(rc: RunConfig) -> str:
    return hashlib.sha256(serialize_config(rc).encode()).hexdigest()


# ------------------------------------------------------------------ outputs


def resolve_output_dir(explicit: str | None = None, rc: RunConfig | None = None) -> str:
    if explicit:
        return explicit
    if rc is not None and rc.output_dir:
        return rc.output_dir
    return os.environ.get("FAULTBANDS_OUT") or DEFAULT_OUT


def _f(x) -> str:
    return f"{float(x):.9g}"


def vtk_snapshot(result, index: int) -> str:
    """Legacy ASCII unstructured grid: hexahedra followed by interface quads."""
    mesh = result.mesh
    rec = result.records[index]
    u = result.displacements.get(rec.name)
    if u is None:
        u = np.zeros((mesh.n_nodes, 3))
    nh, nq = len(mesh.hexes), mesh.n_interface
    out = ["# vtk DataFile Version 3.0", f"{result.config.name} step {rec.name}", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_nodes} double")
    out += [" ".join(_f(c) for c in p) for p in mesh.nodes]
    # local nodes 0-3 form the deeper face, counter-clockwise seen from above,
    # which is already the VTK hexahedron order
    out.append(f"CELLS {nh + nq} {9 * nh + 5 * nq}")
    out += ["8 " + " ".join(str(int(n)) for n in h) for h in mesh.hexes]
    out += ["4 " + " ".join(str(int(n)) for n in q) for q in mesh.nodes_a]
    out.append(f"CELL_TYPES {nh + nq}")
    out += ["12"] * nh + ["9"] * nq
    st = rec.state
    c = chi(st, rec.tau_L)
    zeros = np.zeros(nh)
    cell = {
        "is_interface": np.r_[zeros, np.ones(nq)],
        "material": np.r_[mesh.hex_material, -np.ones(nq)],
        "block": np.r_[mesh.hex_block, -np.ones(nq)],
        "fault": np.r_[-np.ones(nh), mesh.fault],
        "chi": np.r_[zeros, c],
        "sigma_n_MPa": np.r_[zeros, st.lambda_n / MPA],
        "tau_MPa": np.r_[zeros, st.tau_mag / MPA],
        "tau_L_MPa": np.r_[zeros, rec.tau_L / MPA],
        "slip_m": np.r_[zeros, st.cumulative_slip],
        "mode": np.r_[-np.ones(nh), st.mode],
    }
    out.append(f"CELL_DATA {nh + nq}")
    for name, arr in cell.items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_f(a) for a in arr]
    out.append(f"POINT_DATA {mesh.n_nodes}")
    out.append("VECTORS displacement_m double")
    out += [" ".join(_f(c) for c in p) for p in u]
    return "\n".join(out) + "\n"


CONTACT_HEADER = [
    "element", "fault", "x_m", "y_m", "depth_m", "sigma_n_MPa", "tau_strike_MPa", "tau_updip_MPa",
    "tau_L_MPa", "chi", "cumulative_slip_m", "fault_dp_MPa", "mode",
]


def contact_csv(result, index: int) -> str:
    from .geomodel import FAULT_IDS

    mesh = result.mesh
    rec = result.records[index]
    st = rec.state
    c = chi(st, rec.tau_L)
    lines = [",".join(CONTACT_HEADER)]
    for e in range(mesh.n_interface):
        lines.append(
            ",".join(
                [
                    str(e),
                    FAULT_IDS[mesh.fault[e]],
                    _f(mesh.centroid[e, 0]),
                    _f(mesh.centroid[e, 1]),
                    _f(-mesh.centroid[e, 2]),
                    _f(st.lambda_n[e] / MPA),
                    _f(st.lambda_t[e, 0] / MPA),
                    _f(st.lambda_t[e, 1] / MPA),
                    _f(rec.tau_L[e] / MPA),
                    _f(c[e]),
                    _f(st.cumulative_slip[e]),
                    _f(rec.fault_dp[e] / MPA),
                    Mode(int(st.mode[e])).name,
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def write_outputs(result, out_dir: str, history: MetricsHistory | None = None, run_config: RunConfig | None = None) -> dict:
    """Write CSVs, checkpoint snapshots, the config and a manifest; returns the manifest."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from None
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    history = history or compute_history(result)
    rc = run_config or RunConfig(result.config)
    files = {
        "config.ini": serialize_config(rc),
        "metrics.csv": metrics_csv(history),
        "profiles.csv": profiles_csv(history),
        "schedule.csv": result.schedule.to_csv(),
    }
    for i in checkpoint_indices(result.schedule):
        name = result.records[i].name
        files[f"state_ls{name}.vtk"] = vtk_snapshot(result, i)
        files[f"contacts_ls{name}.csv"] = contact_csv(result, i)
    entries = []
    for fname, text in files.items():
        _write(os.path.join(out_dir, fname), text)
        data = text.encode()
        entries.append({"file": fname, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {
        "scenario": result.config.name,
        "fluid": result.config.fluid.value,
        "config_sha256": config_hash(rc),
        "steps": len(result.records),
        "checkpoints": [result.records[i].name for i in checkpoint_indices(result.schedule)],
        "files": entries,
    }
    _write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
