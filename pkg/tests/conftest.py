import numpy as np
import pytest

from hnfcavity.fem import enumerate_dofs
from hnfcavity.mesh import GeometrySpec, Shape, build_mesh


@pytest.fixture
def square4():
    mesh = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    return mesh, enumerate_dofs(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the outcome."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
