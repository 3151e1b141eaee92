import numpy as np
import pytest

from sshdi.datagen import CovarianceKind, draw_truth, generate_dataset
from sshdi.numerics import RngStream


@pytest.fixture
def small_data():
    truth = draw_truth(12, 3, 0.5, 2.0, RngStream(3))
    return generate_dataset(40, 12, CovarianceKind.identity(), truth, RngStream(4))


def random_membership(rng, B, n):
    member = np.zeros((B, n), dtype=bool)
    for b in range(B):
        member[b, rng.permutation(n)[: n // 2]] = True
    return member


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
