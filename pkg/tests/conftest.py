import numpy as np
import pytest

from spirallab.asymptotics import compute_g, default_d_cut, solve_eikonal, solve_rho0
from spirallab.radial import RadialGrid


@pytest.fixture(scope="session")
def rho0():
    return solve_rho0(RadialGrid.uniform(100.0, 8000))


@pytest.fixture(scope="session")
def g01(rho0):
    return compute_g(rho0, 0.1)


@pytest.fixture(scope="session")
def eik(rho0, g01):
    return solve_eikonal(g01, -1.0, default_d_cut(rho0, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ETAS = (0.5, 1.0, 1.5, 2.0)


def reference_config(eta, dt=0.05, steps=20000):
    from spirallab.kernels import KernelParams
    from spirallab.simulator import SimConfig
    return SimConfig(n=256, length=100.0, dt=dt, steps=steps,
                     params=KernelParams.from_dtilde(eta, 0.1), model_coeffs={"beta": -1.0})


@pytest.fixture(scope="session")
def eta_runs(tmp_path_factory):
    """The four reference cGL spiral runs (N = 256, L = 100, 20000 steps)."""
    from spirallab.simulator import run
    base = tmp_path_factory.mktemp("eta")
    return {eta: run(reference_config(eta), 0, str(base / f"eta_{eta}")) for eta in ETAS}


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
