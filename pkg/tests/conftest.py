import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, d, lo=0.2, hi=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    m = Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T
    return 0.5 * (m + m.T)


# acceptance-criterion verdicts, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
