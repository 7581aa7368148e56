import numpy as np
import pytest

from veriq.authstore import Schema, sign_relation
from veriq.simlab.census import CENSUS_SCHEMA, gen_census_like

KEY = bytes(range(32))


@pytest.fixture(scope="session")
def key():
    return KEY


@pytest.fixture(scope="session")
def small_relation():
    return sign_relation(Schema(("a", "b")), [[2, 10], [4, 20], [7, -3]], KEY)


@pytest.fixture(scope="session")
def census_rows():
    return gen_census_like(100_000, 1)


@pytest.fixture(scope="session")
def census_relation(census_rows):
    return sign_relation(CENSUS_SCHEMA, census_rows, KEY)


@pytest.fixture(scope="session")
def census_small():
    return sign_relation(CENSUS_SCHEMA, gen_census_like(5_000, 2), KEY)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._veriq_acceptance = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_veriq_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
