import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transactive_sim.core import (
    Direction,
    TariffKind,
    TariffSchedule,
    TimeGrid,
    TimeSeries,
    integrate_energy,
    rate_at,
)
from transactive_sim.errors import UsageError

finite = st.floats(-50, 50, allow_nan=False)


class TestTimeGrid:
    def test_hourly_defaults(self):
        g = TimeGrid.hourly()
        assert (g.start_hour, g.step, g.n_steps) == (0, 1, 24)
        assert g.end_hour == 24
        np.testing.assert_array_equal(g.hours(), np.arange(24.0))

    @pytest.mark.parametrize(
        "args", [(0, 0, 4), (0, -1, 4), (0, 1, 0), (20, 1, 5), (-1, 1, 2)]
    )
    def test_rejects_bad_grids(self, args):
        with pytest.raises(UsageError):
            TimeGrid(*args)

    def test_multi_day_may_run_past_midnight(self):
        g = TimeGrid(0, 1, 48, multi_day=True)
        assert g.end_hour == 48

    def test_quarter_hour_index(self):
        g = TimeGrid(0, 0.25, 96)
        assert g.index_of(18.0) == 72
        assert g.steps_for(0.5) == 2


class TestTimeSeries:
    def test_length_must_match(self, day):
        with pytest.raises(UsageError):
            TimeSeries(day, [1.0, 2.0])

    def test_non_finite_rejected(self, day):
        with pytest.raises(UsageError):
            TimeSeries(day, [np.nan] * 24)

    def test_values_are_read_only(self, day):
        s = TimeSeries.constant(day, 1.0)
        with pytest.raises(ValueError):
            s.values[0] = 2.0

    def test_arithmetic(self, day):
        a = TimeSeries.constant(day, 2.0)
        b = TimeSeries.constant(day, 0.5)
        assert (a + b).values[0] == 2.5
        assert (a - b).values[3] == 1.5
        assert (a * b).values[5] == 1.0
        assert (-a).values[7] == -2.0


class TestIntegrateEnergy:
    def test_constant_two_hours(self):
        g = TimeGrid(0, 1, 2)
        assert integrate_energy(TimeSeries.constant(g, 5.0)) == 10.0

    def test_zero_day(self, day):
        assert integrate_energy(TimeSeries.zeros(day)) == 0.0

    def test_quarter_hour_left_rectangle(self):
        g = TimeGrid(0, 0.25, 4)
        assert integrate_energy(TimeSeries(g, [4, 4, 0, 8])) == pytest.approx(4.0)

    @given(
        st.lists(finite, min_size=24, max_size=24),
        st.lists(finite, min_size=24, max_size=24),
        finite,
        finite,
    )
    def test_linear(self, x, y, a, b):
        g = TimeGrid.hourly()
        sx, sy = TimeSeries(g, x), TimeSeries(g, y)
        lhs = integrate_energy(sx * a + sy * b)
        rhs = a * integrate_energy(sx) + b * integrate_energy(sy)
        assert lhs == pytest.approx(rhs, abs=1e-6)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=48))
    def test_nonnegative(self, xs):
        g = TimeGrid(0, 0.5, len(xs))
        assert integrate_energy(TimeSeries(g, xs)) >= 0


class TestTariff:
    def test_flat_import(self, day):
        t = TariffSchedule.flat(day, 0.24)
        assert all(rate_at(t, i, "import") == 0.24 for i in range(24))

    def test_tou_evening_block(self, day):
        t = TariffSchedule.time_of_use(day, [(17, 19, 0.30)], 0.15, 0.0)
        assert rate_at(t, 18, Direction.IMPORT) == 0.30
        assert rate_at(t, 16, Direction.IMPORT) == 0.15
        assert rate_at(t, 19, Direction.IMPORT) == 0.15

    def test_net_metering_equal_rates(self, day):
        t = TariffSchedule.net_metering(day, 0.24)
        assert t.kind is TariffKind.NET_METERING
        assert rate_at(t, 5, "export") == 0.24
        assert t.is_degenerate

    def test_index_out_of_range(self, day):
        t = TariffSchedule.flat(day, 0.24)
        with pytest.raises(UsageError):
            rate_at(t, 24, "import")

    def test_export_above_import_rejected(self, day):
        with pytest.raises(UsageError):
            TariffSchedule.flat(day, 0.10, 0.20)

    def test_negative_rate_rejected(self, day):
        with pytest.raises(UsageError):
            TariffSchedule.flat(day, -0.1)

    @given(
        st.lists(
            st.tuples(st.integers(0, 23), st.integers(1, 6), st.floats(0.05, 0.5), st.floats(0, 1)),
            max_size=4,
        )
    )
    def test_export_never_exceeds_import(self, raw):
        g = TimeGrid.hourly()
        blocks = [(s, min(s + d, 24), imp, imp * f) for s, d, imp, f in raw]
        t = TariffSchedule.time_of_use(g, blocks, 0.2, 0.05)
        for i in range(24):
            assert rate_at(t, i, "export") <= rate_at(t, i, "import")
