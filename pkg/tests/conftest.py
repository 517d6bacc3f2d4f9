import numpy as np
import pytest

from faultbands.geomodel import MeshResolution
from faultbands.solver import SimulationConfig, run_simulation

COARSE = MeshResolution(dx=500.0, dy=500.0, dz=50.0)


def coarse_config(**kw):
    return SimulationConfig(resolution=COARSE, **kw)


@pytest.fixture(scope="session")
def coarse_result():
    return run_simulation(coarse_config())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria report: test_acceptance fills this, the summary prints it
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
