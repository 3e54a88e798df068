import numpy as np
import pytest

from migcl import DesignConfig, ModelParams, design_params

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def design3():
    return design_params(DesignConfig(design=3, rho=0.4))


@pytest.fixture
def design1():
    return design_params(DesignConfig(design=1, rho=0.0))


def random_params(rng: np.random.Generator, k: int = 5, rho=None) -> ModelParams:
    """Arbitrary valid parameters with moderately spread thresholds."""
    gaps = rng.uniform(0.4, 2.0, size=k - 2)
    c = np.concatenate(([0.0], np.cumsum(gaps)))
    delta = rng.uniform(-1.0, c[-1] + 1.0, size=k - 1)
    beta = rng.uniform(0.1, 1.2, size=k - 1)
    sigma = rng.uniform(0.3, 1.2, size=k - 1)
    rho = rng.uniform(-0.8, 0.8) if rho is None else rho
    row = np.zeros(k)
    row[: k - 1] = rng.dirichlet(np.ones(k - 1))
    return ModelParams(c=c, delta=delta, beta=beta, sigma=sigma, rho=rho, rebirth_row=row)
