import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from survscore.data import CONTINUOUS, SurvivalDataset  # noqa: E402

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def table2_path():
    return DATA_DIR / "table2_scorecard.csv"


def make_dataset(n=300, coefs=(1.0, 0.0), seed=0, censor_rate=0.05):
    """Exponential event times with log-linear hazard in normal covariates."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, len(coefs)))
    t_event = rng.exponential(1.0 / np.exp(x @ np.asarray(coefs)))
    t_cens = rng.exponential(1.0 / censor_rate, n) if censor_rate else np.full(n, np.inf)
    times = np.minimum(t_event, t_cens)
    status = (t_event <= t_cens).astype(int)
    names = [f"v{i}" for i in range(len(coefs))]
    return SurvivalDataset(times, status, {v: x[:, i] for i, v in enumerate(names)},
                           {v: CONTINUOUS for v in names})


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
