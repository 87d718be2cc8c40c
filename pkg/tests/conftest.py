import numpy as np
import pytest

from stablemkv.noise import Atomic, Isotropic, StableParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cauchy_axis():
    """Symmetric atoms of unit mass each on +-1; alpha=1 gives a Cauchy law of scale pi."""
    return Atomic.axes([1.0])


def half_axis():
    return Atomic(np.array([[1.0], [-1.0]]), np.array([0.5, 0.5]))


def iso2():
    return Isotropic(2)


def ecf_check(samples, zetas, psi_values, dt, n_se=3.0):
    """True when the empirical real characteristic function is within n_se MC standard errors."""
    ok = []
    for z, psi in zip(zetas, psi_values):
        c = np.cos(samples @ np.atleast_1d(z))
        se = c.std(ddof=1) / np.sqrt(len(c))
        ok.append(abs(c.mean() - np.exp(dt * psi)) <= n_se * se + 1e-12)
    return ok


PARAMS_15 = StableParams(1.5, 1)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
