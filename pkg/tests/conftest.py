import numpy as np
import pytest
from hypothesis import settings

from mblfe.dataset import leave_one_out_split
from mblfe.recommender import TrainingConfig
from mblfe.synthetic import random_instance

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def tiny_dataset():
    return random_instance(num_users=10, num_items=15, interactions=80, seed=0)


@pytest.fixture
def tiny_split(tiny_dataset):
    return leave_one_out_split(tiny_dataset, seed=0)


@pytest.fixture
def tiny_config():
    return TrainingConfig(dim=8, num_experts=4, layers=2, lr=1e-2, batch_size=16, epochs=5,
                          gamma=1e-3, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
