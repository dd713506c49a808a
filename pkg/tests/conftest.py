import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from transactive_sim.core import TariffSchedule, TimeGrid, TimeSeries
from transactive_sim.devices import HomeSpec

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def day():
    return TimeGrid.hourly()


def make_home(grid, home_id="h", load=0.0, **kw):
    load = load if isinstance(load, TimeSeries) else TimeSeries(grid, np.broadcast_to(load, grid.n_steps))
    return HomeSpec(home_id, load, **kw)


def flat(grid, imp=0.30, exp=0.10):
    return TariffSchedule.flat(grid, imp, exp)
