import numpy as np
import pytest

from pnprr.spectral import bandlimit


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_bandlimited(rng, dims, band, scale=1.0):
    v = rng.standard_normal((len(dims),) + tuple(dims))
    v = bandlimit(v, band)
    return scale * v / np.max(np.abs(v))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def report(criterion, passed, detail):
    ACCEPTANCE_LINES[criterion] = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)
    for criterion in sorted(ACCEPTANCE_LINES, key=key):
        terminalreporter.write_line(ACCEPTANCE_LINES[criterion])
