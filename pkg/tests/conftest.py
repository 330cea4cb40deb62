import numpy as np
import pytest

from risgnn.config import ArrayGeometry, SystemConfig

# acceptance tests append "PASS/FAIL <criterion>: <detail>" lines here
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("C")[1].split(":")[0])):
            terminalreporter.write_line(line)


def small_config(n_t=3, k=2, r=2, nx=2, ny=1, weights=None, **kw) -> SystemConfig:
    """Random-geometry small scenario used by oracle and property tests."""
    ris = ((30.0, 25.0), (30.0, -25.0), (25.0, 0.0))[:r]
    w = weights if weights is not None else tuple([1.0 / k] * k)
    return SystemConfig(n_t=n_t, n_users=k, ris_geometry=ArrayGeometry.upa(nx, ny), weights=w,
                        ris_positions=ris, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_cfg():
    return SystemConfig().with_elements(9)
