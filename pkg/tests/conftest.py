import pytest

from tfperf.hwmodel import accel_preset
from tfperf.workload import model_preset


def sig3(x: float) -> float:
    """Round to 3 significant figures for printed-table comparison."""
    return float(f"{x:.3g}")


@pytest.fixture(scope="session")
def accel():
    return accel_preset("gemmini-baseline")


@pytest.fixture(scope="session")
def bert512():
    return model_preset("bert-base", seq_len=512)
