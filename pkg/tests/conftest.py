import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bdplot.profiles import GRID

settings.register_profile("bdplot", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bdplot")


def pytest_configure(config):
    warnings.filterwarnings("ignore", message=".*no pixel size.*")


def disk_mask(shape=(160, 160), center=(64, 64), radius=20.5):
    rows, cols = np.indices(shape)
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2


def smooth_random_curves(n, rng, mean=None, amp=0.2, noise=0.02):
    """Curves = mean + random combination of 6 Gaussian bumps + white noise."""
    basis = np.array([np.exp(-0.5 * ((GRID - c) / 0.25) ** 2) for c in np.linspace(0.2, 1.8, 6)])
    base = np.ones(GRID.size) if mean is None else mean
    return base + amp * rng.normal(size=(n, 6)) @ basis + rng.normal(0, noise, (n, GRID.size))


def peak_template(r):
    return 0.4 + np.exp(-0.5 * ((np.asarray(r) - 1.0) / 0.08) ** 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
