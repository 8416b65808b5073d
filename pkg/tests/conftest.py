import numpy as np
import pytest

from byzdiff.core import UpdateIntro


def intro(initial, update_id="u", round_index=0):
    return UpdateIntro(update_id, round_index, frozenset(initial))


def random_intro(rng, n, alpha, exclude=(), update_id="u"):
    pool = np.setdiff1d(np.arange(n), list(exclude))
    return intro(rng.choice(pool, alpha, replace=False).tolist(), update_id)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
