import numpy as np
import pytest

from diffad.schedule import ScheduleConfig, build_plan, build_schedule


@pytest.fixture(scope="session")
def default_schedule():
    return build_schedule(ScheduleConfig())


@pytest.fixture(scope="session")
def plan50():
    return build_plan(1000, 50)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
