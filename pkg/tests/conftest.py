import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from regpath.model import TimeSeriesPanel

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def simulate(B, T, seed, sigma=None, burn=50):
    B = np.asarray(B, dtype=float)
    p = B.shape[0]
    rng = np.random.default_rng(seed)
    L = np.eye(p) if sigma is None else np.linalg.cholesky(sigma)
    Z = np.zeros((T + burn, p))
    for t in range(1, T + burn):
        Z[t] = B @ Z[t - 1] + L @ rng.standard_normal(p)
    return Z[burn:]


def random_spd(m, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    d = np.exp(rng.uniform(0, np.log(cond), m))
    return (Q * d) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def var_panel():
    """A stable 3-variable VAR(1) sample."""
    B = np.array([[0.5, 0.2, 0.0], [0.0, 0.4, 0.1], [0.1, 0.0, 0.3]])
    Z = simulate(B, 200, seed=7)
    return TimeSeriesPanel.from_array(Z, ["y", "a", "b"])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
