"""Solar arrays, battery storage and household loads.

Default parameters describe a 5 kW rooftop array peaking at 15:00, a
13.5 kWh / 5.6 kW battery with 85% round-trip efficiency, and a 24 kW
(200 A at 120 V) residential service.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .core import HOURS_PER_DAY, TimeGrid, TimeSeries
from .errors import CommandError, UsageError

_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SolarArraySpec:
    peak_kw: float = 5.0
    daylight_hours: float = 12.0
    angle_factor: float = 0.63
    peak_hour: float = 15.0
    haze_factor: TimeSeries | None = None
    # Recorded output (kW) replacing the clear-sky shape.
    measured: TimeSeries | None = None

    def __post_init__(self):
        if self.peak_kw < 0:
            raise UsageError(f"solar peak_kw must be >= 0, got {self.peak_kw}")
        if not 0 < self.angle_factor <= 1:
            raise UsageError(f"angle_factor must lie in (0, 1], got {self.angle_factor}")
        if not 0 < self.daylight_hours <= HOURS_PER_DAY:
            raise UsageError(f"daylight_hours must lie in (0, 24], got {self.daylight_hours}")
        if self.haze_factor is not None:
            h = self.haze_factor.values
            if np.any(h < 0) or np.any(h > 1):
                raise UsageError("haze multipliers must lie in [0, 1]")
        if self.measured is not None and np.any(self.measured.values < 0):
            raise UsageError("measured solar output must be nonnegative")

    @property
    def sunrise(self) -> float:
        return self.peak_hour - self.daylight_hours / 2

    @property
    def sunset(self) -> float:
        return self.peak_hour + self.daylight_hours / 2


def _half_sine(spec: SolarArraySpec, hours: np.ndarray) -> np.ndarray:
    hod = np.mod(hours, HOURS_PER_DAY)
    x = (hod - spec.sunrise) / spec.daylight_hours
    up = (x >= -1e-12) & (x < 1 - 1e-12)
    return np.where(up, np.sin(np.pi * np.clip(x, 0.0, 1.0)), 0.0)


def _shape_scale(spec: SolarArraySpec, grid: TimeGrid) -> tuple[float, bool]:
    """Multiplier making one day's mean-to-peak ratio equal ``angle_factor``.

    Returns ``(scale, clipped)``. When the rescaled half-sine would exceed
    the rating the shape is clipped at the rating instead, like an
    undersized inverter, and ``scale`` is found by bisection.
    """
    phase = math.fmod(grid.start_hour, grid.step)
    ref = phase + grid.step * np.arange(int(math.ceil(HOURS_PER_DAY / grid.step)))
    ref = ref[ref < HOURS_PER_DAY]
    raw = _half_sine(spec, ref)
    target = spec.angle_factor * spec.daylight_hours
    area = float(np.sum(raw) * grid.step)
    if area <= 0:
        raise UsageError("grid is too coarse to sample any daylight")
    scale = target / area
    if scale * raw.max() <= 1 + _TOL:
        return scale, False
    if np.count_nonzero(raw) * grid.step < target - 1e-9:
        raise UsageError(
            f"angle_factor {spec.angle_factor} unreachable on a {grid.step} h grid"
        )
    lo, hi = scale, 1.0 / raw[raw > 0].min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum(np.minimum(1.0, mid * raw)) * grid.step < target:
            lo = mid
        else:
            hi = mid
    return hi, True


def solar_profile(spec: SolarArraySpec, grid: TimeGrid) -> TimeSeries:
    """Clear-sky output (kW) of ``spec`` on ``grid``, hazed if configured.

    The shape is a half-sine over the daylight window centred on
    ``peak_hour``, sampled at step starts and rescaled so that the day's
    energy is ``angle_factor * peak_kw * daylight_hours`` exactly.
    A ``measured`` profile, when given, is used as is (hazed if configured).
    """
    if spec.measured is not None:
        if spec.measured.grid != grid:
            raise UsageError("measured solar profile must be on the profile grid")
        values = spec.measured.values
        if spec.haze_factor is not None:
            values = values * spec.haze_factor.values
        return TimeSeries(grid, values)
    if not grid.multi_day and (
        grid.start_hour > spec.sunrise + 1e-9 or grid.end_hour < spec.sunset - 1e-9
    ):
        raise UsageError(
            f"grid [{grid.start_hour}, {grid.end_hour}) does not cover daylight "
            f"[{spec.sunrise}, {spec.sunset})"
        )
    if spec.peak_kw == 0:
        return TimeSeries.zeros(grid)
    scale, clipped = _shape_scale(spec, grid)
    raw = _half_sine(spec, grid.hours())
    shape = np.minimum(1.0, scale * raw) if clipped else scale * raw
    values = spec.peak_kw * shape
    if spec.haze_factor is not None:
        if spec.haze_factor.grid != grid:
            raise UsageError("haze_factor must be on the profile grid")
        values = values * spec.haze_factor.values
    return TimeSeries(grid, values)


@dataclass(frozen=True)
class BessSpec:
    capacity_kwh: float = 13.5
    continuous_power_kw: float = 5.6
    round_trip_efficiency: float = 0.85
    # False splits the loss as sqrt(eta) on each leg.
    discharge_applies_loss: bool = True

    def __post_init__(self):
        if not self.capacity_kwh > 0:
            raise UsageError(f"BESS capacity must be positive, got {self.capacity_kwh}")
        if not self.continuous_power_kw > 0:
            raise UsageError(f"BESS power must be positive, got {self.continuous_power_kw}")
        if not 0 < self.round_trip_efficiency <= 1:
            raise UsageError(
                f"round-trip efficiency must lie in (0, 1], got {self.round_trip_efficiency}"
            )

    @property
    def charge_efficiency(self) -> float:
        if self.discharge_applies_loss:
            return 1.0
        return math.sqrt(self.round_trip_efficiency)

    @property
    def discharge_efficiency(self) -> float:
        if self.discharge_applies_loss:
            return self.round_trip_efficiency
        return math.sqrt(self.round_trip_efficiency)


@dataclass(frozen=True)
class BessState:
    soc_kwh: float = 0.0

    def __post_init__(self):
        if self.soc_kwh < -_TOL:
            raise UsageError(f"state of charge cannot be negative, got {self.soc_kwh}")


class BessStepResult(NamedTuple):
    state: BessState
    energy_kwh: float
    """Bus-side energy: absorbed when charging, delivered when discharging."""
    truncated_kwh: float
    """Bus-side energy of the command that could not be executed."""


def bess_charge_time(spec: BessSpec) -> float:
    """Hours to fill an empty battery at continuous power."""
    return spec.capacity_kwh / spec.continuous_power_kw


def bess_step(
    spec: BessSpec, state: BessState, command_kw: float, step_h: float
) -> BessStepResult:
    """Advance ``state`` by one step of ``command_kw`` (charge > 0).

    Commands beyond the remaining headroom are truncated, not rejected.
    """
    if abs(command_kw) > spec.continuous_power_kw * (1 + _TOL):
        raise CommandError(
            f"command {command_kw} kW exceeds the {spec.continuous_power_kw} kW rating"
        )
    if step_h < 0:
        raise UsageError("step length must be nonnegative")
    soc = min(max(state.soc_kwh, 0.0), spec.capacity_kwh)
    requested = abs(command_kw) * step_h
    if command_kw >= 0:
        gain = min(requested * spec.charge_efficiency, spec.capacity_kwh - soc)
        absorbed = gain / spec.charge_efficiency
        new_soc = min(soc + gain, spec.capacity_kwh)
        return BessStepResult(BessState(new_soc), absorbed, requested - absorbed)
    drawn = min(requested, soc)
    new_soc = max(soc - drawn, 0.0)
    eta = spec.discharge_efficiency
    return BessStepResult(BessState(new_soc), eta * drawn, eta * (requested - drawn))


def grid_assist_headroom(bess: BessSpec, solar: SolarArraySpec) -> float:
    """Grid power (kW) that can top up charging while solar is at peak."""
    return max(0.0, bess.continuous_power_kw - solar.peak_kw)


@dataclass(frozen=True)
class Appliance:
    """A shiftable load drawing ``power_kw`` for ``duration_steps`` steps.

    ``window`` is the inclusive range of step indices in which the
    appliance may be on. ``discomfort`` optionally prices running at each
    step ($ per step on; missing steps cost nothing).
    """

    name: str
    power_kw: float
    duration_steps: int
    window: tuple[int, int]
    interruptible: bool = False
    discomfort: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(w) for w in self.window))
        object.__setattr__(self, "discomfort", tuple(float(d) for d in self.discomfort))
        lo, hi = self.window
        if self.power_kw < 0:
            raise UsageError(f"{self.name}: power must be >= 0")
        if self.duration_steps < 1:
            raise UsageError(f"{self.name}: duration must be at least one step")
        if lo < 0 or hi - lo + 1 < self.duration_steps:
            raise UsageError(
                f"{self.name}: window {self.window} cannot fit {self.duration_steps} steps"
            )

    def options(self) -> list[tuple[int, ...]]:
        """Every admissible set of on-steps, in lexicographic order."""
        lo, hi = self.window
        if self.interruptible:
            return list(combinations(range(lo, hi + 1), self.duration_steps))
        d = self.duration_steps
        return [tuple(range(s, s + d)) for s in range(lo, hi - d + 2)]

    @property
    def binary_count(self) -> int:
        lo, hi = self.window
        if self.interruptible:
            return hi - lo + 1
        return hi - lo - self.duration_steps + 2

    def discomfort_of(self, on_steps) -> float:
        pen = self.discomfort
        return sum(pen[t] for t in on_steps if t < len(pen))


@dataclass(frozen=True, eq=False)
class HomeSpec:
    id: str
    fixed_load: TimeSeries
    appliances: tuple[Appliance, ...] = ()
    solar: SolarArraySpec | None = None
    bess: BessSpec | None = None
    service_limit_kw: float = 24.0
    bess_initial_soc_kwh: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "appliances", tuple(self.appliances))
        if not self.service_limit_kw > 0:
            raise UsageError(f"{self.id}: service limit must be positive")
        peak = float(np.max(self.fixed_load.values))
        if peak > self.service_limit_kw + 1e-9:
            raise UsageError(
                f"{self.id}: fixed load {peak} kW exceeds service limit {self.service_limit_kw} kW"
            )
        if np.any(self.fixed_load.values < 0):
            raise UsageError(f"{self.id}: fixed load must be nonnegative")
        if self.bess is not None and not (
            0 <= self.bess_initial_soc_kwh <= self.bess.capacity_kwh
        ):
            raise UsageError(f"{self.id}: initial SoC outside [0, capacity]")
        for a in self.appliances:
            if a.window[1] >= self.fixed_load.grid.n_steps:
                raise UsageError(f"{self.id}/{a.name}: window runs past the grid")

    @property
    def grid(self) -> TimeGrid:
        return self.fixed_load.grid

    def solar_output(self) -> TimeSeries:
        if self.solar is None:
            return TimeSeries.zeros(self.grid)
        return solar_profile(self.solar, self.grid)

    def with_changes(self, **changes) -> HomeSpec:
        return replace(self, **changes)


__all__ = [
    "Appliance",
    "BessSpec",
    "BessState",
    "BessStepResult",
    "HomeSpec",
    "SolarArraySpec",
    "bess_charge_time",
    "bess_step",
    "grid_assist_headroom",
    "solar_profile",
]
