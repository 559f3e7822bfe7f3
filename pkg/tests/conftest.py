import numpy as np
import pytest

from posl.core import Panel, PanelRecord


def make_record(y, sid=1, start=1, entry=0, exit_time=None, baseline=(), W=None):
    y = np.asarray(y, dtype=float)
    times = np.arange(start, start + len(y))
    cov = np.zeros((len(y), 0)) if W is None else np.asarray(W, dtype=float).reshape(len(y), -1)
    return PanelRecord(sid, np.asarray(baseline, dtype=float), times, cov, y, entry, exit_time)


def ar_series(coef, n, rng, level=0.0, noise=1.0, burn=100):
    coef = np.asarray(coef, dtype=float)
    p = len(coef)
    x = np.zeros(n + burn)
    e = rng.standard_normal(n + burn) * noise
    for t in range(p, n + burn):
        x[t] = coef @ x[t - p:t][::-1] + e[t]
    return level + x[burn:]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_panel(rng):
    recs = [make_record(ar_series([0.5], 80, rng), sid=i, baseline=[float(i % 2), 1.0 + i])
            for i in range(1, 5)]
    return Panel(recs)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
