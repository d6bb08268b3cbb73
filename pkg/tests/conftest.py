import numpy as np
import pytest

from eitkit.levels import challenge_patterns
from eitkit.mesh import DiskMeshSpec, build_disk_mesh

Z = 1e-6
SIGMA_BG = 0.745


@pytest.fixture(scope="session")
def patterns():
    return challenge_patterns()


@pytest.fixture(scope="session")
def default_mesh():
    return build_disk_mesh(DiskMeshSpec())


@pytest.fixture(scope="session")
def mesh_02():
    """h = 0.02: 155 vertices, 244 elements."""
    return build_disk_mesh(DiskMeshSpec(mesh_size_h=0.02))


@pytest.fixture(scope="session")
def mesh_01():
    """h = 0.01: 920 elements."""
    return build_disk_mesh(DiskMeshSpec(mesh_size_h=0.01))


@pytest.fixture(scope="session")
def tiny_mesh():
    """48 elements (h = 0.05, 8 electrodes)."""
    return build_disk_mesh(DiskMeshSpec(mesh_size_h=0.05, n_electrodes=8))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Store one PASS/FAIL line; all lines are printed in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
