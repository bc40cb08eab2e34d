import numpy as np
import pytest

from ddgcn import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(values):
    return ad.Tensor(np.array(values, dtype=float), requires_grad=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
