import copy
import dataclasses

import pytest

from optifinger.geometry import FingerDims
from optifinger.sensing import OpticalParams, calibrate, default_layout, model_for


@pytest.fixture(scope="session")
def dims():
    return FingerDims()


@pytest.fixture(scope="session")
def layout(dims):
    return default_layout(dims)


@pytest.fixture(scope="session")
def optics():
    return OpticalParams()


@pytest.fixture(scope="session")
def calib(layout, optics, dims):
    return calibrate(layout, optics, dims)


@pytest.fixture(scope="session")
def model(layout, optics, dims):
    """The default sensing model; building the kernel takes several seconds."""
    return model_for(layout, optics, dims)


@pytest.fixture(scope="session")
def quiet_model(model):
    """Same kernel with frame noise switched off (noise does not enter the kernel)."""
    m = copy.copy(model)
    m.optics = dataclasses.replace(model.optics, noise_sigma_lsb=0.0)
    return m


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Append one ``criterion N: PASS/FAIL ...`` line per acceptance criterion."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
