import numpy as np
import pytest

from npmo import gridworld as gw
from npmo.geometry import Pose, Rect


def layout(M, starts, targets, walls=(), sizes=None):
    """Hand-built scenario: ``starts``/``targets`` are (x, y) lists, ``walls``
    1x1 immovable cells."""
    sizes = sizes or [(1, 1)] * len(starts)
    return gw.Scenario(
        M=M,
        objects=tuple(gw.ObjectSpec(i, w, h) for i, (w, h) in enumerate(sizes)),
        initial=tuple(Pose(x, y) for x, y in starts),
        target=tuple(Pose(x, y) for x, y in targets),
        immovable=tuple(Rect(x, y) for x, y in walls),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """``report(tag, ok, detail)`` records one acceptance line."""
    def add(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
