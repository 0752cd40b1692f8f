import numpy as np
import pytest

from cafht.adaptive import make_warm_start
from cafht.forecaster import fit_ar, fit_normalizer, training_residuals
from cafht.simdata import ArConfig, generate_ar, split_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_pipeline():
    """Normalized train/cal1/cal2/test sets on short dynamic-noise AR data."""
    cfg = ArConfig(T=20, seed=7)
    ds = generate_ar(cfg, 400)
    test = generate_ar(cfg, 100, start_id=400, role="test")
    train, cal1, cal2 = split_dataset(ds, seed=1)
    norm = fit_normalizer(train)
    train, cal1, cal2, test = (norm.apply(x) for x in (train, cal1, cal2, test))
    f = fit_ar(train)
    warm = make_warm_start(training_residuals(f, train), 0.1, seed=3)
    return {"train": train, "cal1": cal1, "cal2": cal2, "test": test, "f": f, "warm": warm, "norm": norm}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
