"""Time grids, power/price series and tariffs shared by every other module.

Conventions: power in kW, energy in kWh, prices in $/kWh, time in hours.
Series are piecewise constant over their steps, so energy is the
left-rectangle sum and is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import UsageError

HOURS_PER_DAY = 24.0
_EPS = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps`` steps of ``step`` hours from ``start_hour``."""

    start_hour: float = 0.0
    step: float = 1.0
    n_steps: int = 24
    multi_day: bool = False

    def __post_init__(self):
        if not self.step > 0:
            raise UsageError(f"grid step must be positive, got {self.step}")
        if self.n_steps < 1:
            raise UsageError(f"grid needs at least one step, got {self.n_steps}")
        if not 0 <= self.start_hour < HOURS_PER_DAY:
            raise UsageError(f"start_hour must lie in [0, 24), got {self.start_hour}")
        if not self.multi_day and self.end_hour > HOURS_PER_DAY + _EPS:
            raise UsageError(
                f"single-day grid ends at {self.end_hour} h; set multi_day for longer horizons"
            )

    @classmethod
    def hourly(cls, n_steps: int = 24) -> TimeGrid:
        return cls(0.0, 1.0, n_steps)

    @property
    def end_hour(self) -> float:
        return self.start_hour + self.step * self.n_steps

    @property
    def duration(self) -> float:
        return self.step * self.n_steps

    def hours(self) -> np.ndarray:
        """Start hour of every step (may exceed 24 on multi-day grids)."""
        return self.start_hour + self.step * np.arange(self.n_steps)

    def index_of(self, hour: float) -> int:
        """Index of the step containing ``hour``."""
        i = math.floor((hour - self.start_hour) / self.step + _EPS)
        if not 0 <= i < self.n_steps:
            raise UsageError(f"hour {hour} outside grid [{self.start_hour}, {self.end_hour})")
        return i

    def steps_for(self, hours: float) -> int:
        """Whole number of steps spanning ``hours``."""
        n = hours / self.step
        if abs(n - round(n)) > 1e-9:
            raise UsageError(f"{hours} h is not a whole number of {self.step} h steps")
        return int(round(n))


def _frozen_array(values, n: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise UsageError(f"{what}: expected {n} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{what}: values must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Values attached to a :class:`TimeGrid` (kW, $/kWh or a unitless factor)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "values", _frozen_array(self.values, self.grid.n_steps, "TimeSeries")
        )

    @classmethod
    def constant(cls, grid: TimeGrid, value: float) -> TimeSeries:
        return cls(grid, np.full(grid.n_steps, float(value)))

    @classmethod
    def zeros(cls, grid: TimeGrid) -> TimeSeries:
        return cls.constant(grid, 0.0)

    def __len__(self):
        return self.grid.n_steps

    def __getitem__(self, i):
        return self.values[i]

    def __eq__(self, other):
        return (
            isinstance(other, TimeSeries)
            and self.grid == other.grid
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def _check(self, other: TimeSeries):
        if other.grid != self.grid:
            raise UsageError("series are on different time grids")

    def __add__(self, other):
        if isinstance(other, TimeSeries):
            self._check(other)
            return TimeSeries(self.grid, self.values + other.values)
        return TimeSeries(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return TimeSeries(self.grid, -self.values)

    def __mul__(self, other):
        if isinstance(other, TimeSeries):
            self._check(other)
            return TimeSeries(self.grid, self.values * other.values)
        return TimeSeries(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def at_hour(self, hour: float) -> float:
        return float(self.values[self.grid.index_of(hour)])


def integrate_energy(series: TimeSeries) -> float:
    """Energy in kWh of a kW series (left-rectangle rule)."""
    return float(np.sum(series.values) * series.grid.step)


class TariffKind(str, Enum):
    FLAT = "flat"
    TIME_OF_USE = "time-of-use"
    NET_METERING = "net-metering"


class Direction(str, Enum):
    IMPORT = "import"
    EXPORT = "export"


@dataclass(frozen=True, eq=False)
class TariffSchedule:
    """Utility import and export rates per step of ``grid``."""

    kind: TariffKind
    grid: TimeGrid
    import_rate: np.ndarray
    export_rate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", TariffKind(self.kind))
        n = self.grid.n_steps
        imp = _frozen_array(self.import_rate, n, "import_rate")
        exp = _frozen_array(self.export_rate, n, "export_rate")
        if np.any(imp < 0) or np.any(exp < 0):
            raise UsageError("tariff rates must be nonnegative")
        if np.any(exp > imp + 1e-12):
            i = int(np.argmax(exp - imp))
            raise UsageError(
                f"export rate {exp[i]} exceeds import rate {imp[i]} at step {i}"
            )
        if self.kind is TariffKind.NET_METERING and not np.array_equal(imp, exp):
            raise UsageError("net metering credits exports at the import rate")
        object.__setattr__(self, "import_rate", imp)
        object.__setattr__(self, "export_rate", exp)

    @classmethod
    def flat(cls, grid: TimeGrid, import_rate: float, export_rate: float = 0.0):
        return cls(TariffKind.FLAT, grid, import_rate, export_rate)

    @classmethod
    def net_metering(cls, grid: TimeGrid, rate: float):
        return cls(TariffKind.NET_METERING, grid, rate, rate)

    @classmethod
    def time_of_use(
        cls,
        grid: TimeGrid,
        blocks: Iterable[tuple[float, float, float] | tuple[float, float, float, float]],
        default_import: float,
        default_export: float = 0.0,
    ):
        """Build a TOU tariff from ``(start_hour, end_hour, import[, export])`` blocks.

        Hours are taken modulo 24 so blocks repeat on multi-day grids; later
        blocks override earlier ones.
        """
        imp = np.full(grid.n_steps, float(default_import))
        exp = np.full(grid.n_steps, float(default_export))
        hod = np.mod(grid.hours(), HOURS_PER_DAY)
        for block in blocks:
            start, end, rate_in = block[0], block[1], block[2]
            mask = (hod >= start - _EPS) & (hod < end - _EPS)
            imp[mask] = rate_in
            if len(block) > 3:
                exp[mask] = block[3]
        return cls(TariffKind.TIME_OF_USE, grid, imp, exp)

    @property
    def is_degenerate(self) -> bool:
        """True when there is no spread between export and import at any step."""
        return bool(np.all(self.export_rate == self.import_rate))


def rate_at(tariff: TariffSchedule, step_index: int, direction: Direction | str) -> float:
    """Applicable $/kWh for one step and direction."""
    if not 0 <= step_index < tariff.grid.n_steps:
        raise UsageError(
            f"step {step_index} out of range for a {tariff.grid.n_steps}-step tariff"
        )
    direction = Direction(direction)
    rates = tariff.import_rate if direction is Direction.IMPORT else tariff.export_rate
    return float(rates[step_index])


def same_grid(items: Sequence) -> TimeGrid:
    """Return the common grid of ``items`` (anything with a ``grid``)."""
    grids = {it.grid for it in items}
    if len(grids) != 1:
        raise UsageError("all series must share one time grid")
    return grids.pop()


__all__ = [
    "Direction",
    "TariffKind",
    "TariffSchedule",
    "TimeGrid",
    "TimeSeries",
    "integrate_energy",
    "rate_at",
    "same_grid",
]
