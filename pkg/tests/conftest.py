import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ifepanel.panel import PanelData

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_mask(rng, n_units, n_periods, p_missing=0.3):
    """Random mask with at least one observation in every row and column."""
    while True:
        mask = rng.random((n_units, n_periods)) > p_missing
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return mask


def factor_panel(rng, n_units, n_periods, r=2, beta=(1.0,), noise=1.0, mask=None):
    """Panel with ``r`` factors loading on both y and the regressors."""
    lam = rng.normal(1.0, 1.0, (n_units, r))
    f = rng.standard_normal((n_periods, r))
    k = len(beta)
    x = rng.standard_normal((n_units, n_periods, k)) + (lam @ f.T)[:, :, None] * 0.5
    y = x @ np.asarray(beta) + lam @ f.T + noise * rng.standard_normal((n_units, n_periods))
    return PanelData.from_arrays(y, x, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
