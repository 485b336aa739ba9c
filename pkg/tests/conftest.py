import numpy as np
import pytest

from gridgsp import grid_model as gm
from gridgsp.cases import case_path


@pytest.fixture(scope="session")
def case2():
    return gm.load_case(case_path("case2"))


@pytest.fixture(scope="session")
def case4():
    return gm.load_case(case_path("case4"))


@pytest.fixture(scope="session")
def y2(case2):
    return gm.assemble_admittance(case2)


@pytest.fixture(scope="session")
def y4(case4):
    return gm.assemble_admittance(case4)


@pytest.fixture(scope="session")
def gso4(case4):
    from gridgsp import gso

    return gso.build_real_gso(case4)


def make_mixed_phase_case():
    """3-bus case with a single-phase lateral (bus-level mixed phase sets)."""
    buses = [
        gm.Bus("1", ("a", "b", "c"), "slack"),
        gm.Bus("2", ("a", "b", "c"), "load"),
        gm.Bus("3", ("b",), "load"),
    ]
    x3 = np.array([[0.09, 0.03, 0.03], [0.03, 0.09, 0.03], [0.03, 0.03, 0.09]])
    y_trunk = -1j * np.linalg.inv(x3)
    y_trunk = 0.5 * (y_trunk + y_trunk.T)
    lines = [
        gm.LineBranch("1", "2", ("a", "b", "c"), y_trunk, 1j * 0.004 * np.eye(3)),
        gm.LineBranch("2", "3", ("b",), np.array([[-8j]]), np.array([[0.002j]])),
    ]
    return gm.GridCase(buses, lines, [], 1.0, 1.0, name="mixed3")


@pytest.fixture(scope="session")
def case_mixed():
    return make_mixed_phase_case()
