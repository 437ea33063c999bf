import numpy as np
import pytest
import torch

from hoidiff.body import BodyProxy
from hoidiff.synthetic import Scenario, generate_clip

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def body():
    return BodyProxy.default()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def carry_clip():
    return generate_clip(Scenario(kind="carry", duration=35, seed=3))


@pytest.fixture(scope="session")
def swing_clip():
    return generate_clip(Scenario(kind="swing", duration=35, seed=4))


@pytest.fixture(scope="session")
def no_contact_clip():
    return generate_clip(Scenario(kind="no_contact", duration=35, seed=5))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
