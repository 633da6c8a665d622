import numpy as np
import pytest

from mesh_ergodic import shapes

N_CRITERIA = 12
_acceptance = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_acceptance] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the summary table."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        request.config.stash[_acceptance][number] = (title, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(_acceptance, {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in rows:
            title, ok, detail = rows[n]
            terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN")


@pytest.fixture(scope="session")
def small_square():
    return shapes.square_grid(21)


@pytest.fixture(scope="session")
def ico2():
    return shapes.icosphere(2)


@pytest.fixture(scope="session")
def torus_small():
    return shapes.torus(n_major=24, n_minor=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
