import pytest

from vitaccel.arch import default_arch
from vitaccel.cost_model import calibrate_energy
from vitaccel.workload import build_edgenext_s


@pytest.fixture(scope="session")
def arch():
    return default_arch()


@pytest.fixture(scope="session")
def calibrated():
    """(arch, report) with the on-chip energy ladder pinned to the peak
    efficiency target; shared because calibration is deterministic."""
    return calibrate_energy(default_arch())


@pytest.fixture(scope="session")
def graph():
    return build_edgenext_s(256)
