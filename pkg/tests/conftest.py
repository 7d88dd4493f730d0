import numpy as np
import pytest

from bongard.bp_model import BongardProblem, Image


def noise_bp(seed: int = 0, side: int = 16, bp_id: int = 0) -> BongardProblem:
    """A problem of random binary images; cheap stand-in where content does not matter."""
    rng = np.random.default_rng(seed)
    imgs = [Image(rng.integers(0, 2, size=(side, side))) for _ in range(12)]
    return BongardProblem(bp_id, imgs[:6], imgs[6:])


@pytest.fixture
def bp():
    return noise_bp()


# acceptance tests append "criterion N: PASS/FAIL ..." lines here; printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
