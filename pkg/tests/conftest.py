import numpy as np
import pytest
from hypothesis import settings

from ladder_lambda.scoring import blastp_scheme, example_scheme

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def blosum62():
    return blastp_scheme("BLOSUM62")


@pytest.fixture(scope="session")
def dna_example():
    return example_scheme()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
