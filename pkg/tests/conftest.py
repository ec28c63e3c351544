import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shallowstat.modes import EnvironmentParams, SourceSpec, solve_modes

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

# parameters of the best fit to the ALMA radii
ALMA = dict(c_w=1523.0, c_s=1630.0, rho_w=1000.0, rho_s=1700.0, z_b=110.0,
            sigma=0.002, ell_v=30.0, ell_h=100.0)
ALMA_ALPHA = 1.09
ALMA_FREQS = (2000.0, 5000.0, 7000.0, 9000.0, 11000.0, 13000.0)


def omega(f):
    return 2.0 * math.pi * f


@pytest.fixture
def alma_env():
    from shallowstat.coupling import alpha_to_nu

    return EnvironmentParams(nu_s=alpha_to_nu(ALMA_ALPHA), **ALMA)


@pytest.fixture
def low_freq_modes(alma_env):
    """Three guided modes at 50 Hz."""
    modes = solve_modes(alma_env, omega(50.0))
    assert modes.N == 3
    return modes


@pytest.fixture
def source():
    return SourceSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
