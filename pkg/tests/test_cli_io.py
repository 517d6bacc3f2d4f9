import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faultbands.cli import main
from faultbands.cli_io import (
    ConfigError,
    DEFAULT_OUT,
    RunConfig,
    config_hash,
    parse_config,
    parse_config_text,
    resolve_output_dir,
    serialize_config,
    vtk_snapshot,
    write_outputs,
)
from faultbands.geomodel import reference_layers
from faultbands.solver import SimulationConfig

MPA = 1e6
COARSE_MESH = "[mesh]\ndx = 500\ndy = 500\ndz = 50\n"


def test_empty_config_gives_reference():
    rc = parse_config_text("")
    sim = rc.simulation
    assert sim.law.cohesion == 2 * MPA and sim.law.phi_s == 30.0
    assert (sim.regime.M1, sim.regime.M2) == (0.74, 0.83)
    assert list(sim.layers) == reference_layers()
    assert sim == SimulationConfig()


def test_scenario_key():
    sim = parse_config_text("scenario = C1").simulation
    assert sim.law.cohesion == 0.0 and sim.dip_f3 == 65.0 and sim.block2_offset == 100.0
    # explicit keys override the scenario
    sim = parse_config_text("[run]\nscenario = 2c\n[geometry]\nblock2_offset = 200\n").simulation
    assert sim.block2_offset == 200.0


def test_units_are_converted():
    sim = parse_config_text("[friction]\ncohesion = 0.5\n[materials]\nreservoir_young = 8\n").simulation
    assert sim.law.cohesion == 0.5 * MPA
    assert [l.young for l in sim.layers if l.name == "reservoir"] == [8e9]


@pytest.mark.parametrize(
    "text,line",
    [
        ("phi_s = 95", 1),
        ("\n\nfoo = 1", 3),
        ("[nonsense]", 1),
        ("[geometry]\nphi_s = 20", 2),
        ("M1 = 0.5\nM1 = 0.6", 2),
        ("dz = abc", 1),
        ("just words", 1),
        ("scenario = 9x", 1),
        ("block2_offset = 130", 1),
        ("phi_d = 10", 1),
        ("fluid = helium", 1),
    ],
)
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(str(tmp_path / "nope.ini"))


def test_serialize_round_trip():
    for text in ("", "scenario = 3c\nfluid = H2", "scenario = 5b", "output_dir = out\nname = x"):
        rc = parse_config_text(text)
        assert parse_config_text(serialize_config(rc)) == rc


@settings(max_examples=40)
@given(
    st.floats(0.0, 10.0),
    st.floats(1.0, 80.0),
    st.floats(0.01, 1.0),
    st.sampled_from(["CH4", "CO2", "N2", "H2"]),
)
def test_serialize_round_trip_property(c, phi, m1, fluid):
    text = f"cohesion = {c!r}\nphi_s = {phi!r}\nM1 = {m1 * 0.83!r}\nfluid = {fluid}\n"
    rc = parse_config_text(text)
    back = parse_config_text(serialize_config(rc))
    assert back == rc
    assert config_hash(back) == config_hash(rc)


def test_output_dir_resolution(monkeypatch):
    monkeypatch.delenv("FAULTBANDS_OUT", raising=False)
    assert resolve_output_dir() == DEFAULT_OUT
    monkeypatch.setenv("FAULTBANDS_OUT", "/tmp/x")
    assert resolve_output_dir() == "/tmp/x"
    rc = RunConfig(SimulationConfig(), output_dir="cfgdir")
    assert resolve_output_dir(None, rc) == "cfgdir"
    assert resolve_output_dir("cli", rc) == "cli"


def test_write_outputs(coarse_result, tmp_path):
    out = tmp_path / "run"
    man = write_outputs(coarse_result, str(out))
    names = {e["file"] for e in man["files"]}
    assert {"metrics.csv", "profiles.csv", "config.ini", "schedule.csv", "state_ls10.vtk", "contacts_ls10.csv"} <= names
    for e in man["files"]:
        assert os.path.getsize(out / e["file"]) == e["bytes"]
    assert json.loads((out / "manifest.json").read_text()) == man
    first = (out / "metrics.csv").read_bytes()
    write_outputs(coarse_result, str(out))
    assert (out / "metrics.csv").read_bytes() == first
    assert parse_config(str(out / "config.ini")).simulation == coarse_result.config


def test_unwritable_directory(coarse_result, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match=str(blocker)):
        write_outputs(coarse_result, str(blocker / "sub"))


def test_vtk_layout(coarse_result):
    mesh = coarse_result.mesh
    text = vtk_snapshot(coarse_result, 10).splitlines()
    assert text[0].startswith("# vtk DataFile")
    n_cells = len(mesh.hexes) + mesh.n_interface
    assert f"POINTS {mesh.n_nodes} double" in text
    assert f"CELL_TYPES {n_cells}" in text
    i = text.index(f"CELL_TYPES {n_cells}")
    types = text[i + 1 : i + 1 + n_cells]
    assert types.count("12") == len(mesh.hexes) and types.count("9") == mesh.n_interface
    assert "VECTORS displacement_m double" in text


# ------------------------------------------------------------------ CLI


def test_cli_scenarios_list(capsys):
    assert main(["scenarios", "list"]) == 0
    ids = [l.split()[0] for l in capsys.readouterr().out.splitlines()]
    assert ids == ["1", "2a", "2b", "2c", "2d", "3a", "3b", "3c", "3d", "4a", "4b", "5a", "5b", "6a", "6b", "C1", "C2", "W", "H"]


def test_cli_bandwidth(tmp_path, capsys):
    p = tmp_path / "bw.ini"
    p.write_text("[bandwidth]\nP_i_MPa = 20\nP_min_PP_MPa = 2\n[event.1]\nP_seis_PP_MPa = 18\n")
    csv_path = tmp_path / "bw.csv"
    assert main(["bandwidth", str(p), "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    assert "case A" in out and "P_max_cap = 18 MPa" in out
    assert csv_path.read_text().splitlines()[1] == "A,16,18,2,"


def test_cli_no_arguments_prints_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["scenarios", "list", "--bogus"])


def test_cli_bad_config_reports_error(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("phi_s = 95\n")
    assert main(["mesh-info", str(p)]) == 1
    assert "phi_s" in capsys.readouterr().err


def test_cli_mesh_info(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text(COARSE_MESH)
    assert main(["mesh-info", str(p)]) == 0
    out = capsys.readouterr().out
    assert "interface elements" in out and "loading steps 37" in out


def test_cli_simulate_and_rank(tmp_path, capsys):
    p = tmp_path / "c.ini"
    p.write_text(COARSE_MESH)
    out = tmp_path / "sim"
    assert main(["simulate", str(p), "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    batch = tmp_path / "batch"
    assert main(["scenarios", "run", "1", "--config", str(p), "--out", str(batch)]) == 0
    assert main(["rank", str(batch), "--fault", "F1"]) == 0
    text = capsys.readouterr().out
    assert "rank,scenario,fluid,fault" in text
    assert main(["rank", str(tmp_path / "missing"), "--fault", "F1"]) == 1
