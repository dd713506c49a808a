"""Cashflow analysis and the three case-study generators.

Benefits are year-end annuities. Discounted payback is the first whole
year in which cumulative discounted benefits cover the initial cost.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from .devices import BessSpec, SolarArraySpec, bess_charge_time
from .errors import NoPaybackError, UsageError


@dataclass(frozen=True)
class CashflowSchedule:
    initial_cost: float
    annual_benefit: float | tuple[float, ...]
    horizon_years: int = 30

    def __post_init__(self):
        if self.initial_cost < 0:
            raise UsageError("initial cost must be nonnegative")
        if self.horizon_years < 1:
            raise UsageError("horizon must be at least one year")
        if not isinstance(self.annual_benefit, (int, float)):
            object.__setattr__(self, "annual_benefit", tuple(self.annual_benefit))

    def benefit(self, year: int) -> float:
        """Benefit received at the end of ``year`` (1-based)."""
        b = self.annual_benefit
        if isinstance(b, tuple):
            return b[year - 1] if year <= len(b) else 0.0
        return float(b)

    def cashflows(self, years: int | None = None) -> list[float]:
        n = self.horizon_years if years is None else years
        return [-self.initial_cost] + [self.benefit(t) for t in range(1, n + 1)]


def npv(cashflows: Sequence[float], rate: float) -> float:
    """Net present value of year-indexed cashflows (entry 0 is today)."""
    if rate <= -1:
        raise UsageError(f"discount rate must exceed -100%, got {rate}")
    if rate == 0:
        return math.fsum(cashflows)
    return math.fsum(cf / (1 + rate) ** t for t, cf in enumerate(cashflows))


def simple_payback(schedule: CashflowSchedule) -> float:
    """Undiscounted payback in years: cost divided by the first-year benefit."""
    if schedule.initial_cost == 0:
        return 0.0
    benefit = schedule.benefit(1)
    if benefit <= 0:
        raise NoPaybackError("no positive annual benefit, the investment never pays back")
    return schedule.initial_cost / benefit


def discounted_payback(schedule: CashflowSchedule, rate: float) -> int | None:
    """Smallest whole year with cumulative discounted benefit >= cost, else None."""
    if rate < 0:
        raise UsageError("discounted payback needs a nonnegative rate")
    cost = schedule.initial_cost
    if cost == 0:
        return 0
    terms = []
    for year in range(1, schedule.horizon_years + 1):
        terms.append(schedule.benefit(year) / (1 + rate) ** year)
        # Exactly rounded running sum so rate 0 agrees with cost / benefit.
        if math.fsum(terms) >= cost:
            return year
    return None


def discounted_payback_fractional(schedule: CashflowSchedule, rate: float) -> float | None:
    """Discounted payback interpolated linearly inside the crossing year."""
    year = discounted_payback(schedule, rate)
    if year is None or year == 0:
        return None if year is None else 0.0
    before = math.fsum(schedule.benefit(t) / (1 + rate) ** t for t in range(1, year))
    inc = schedule.benefit(year) / (1 + rate) ** year
    return year - 1 + (schedule.initial_cost - before) / inc


# -- case studies -----------------------------------------------------------

CASE1_DEFAULTS = {
    "solar_peak_kw": 5.0,
    "daylight_hours": 12.0,
    "angle_factor": 0.63,
    "cost_per_watt": 2.76,
    "federal_credit": 0.26,
    "net_metering_rate": 0.24,
    "sunny_days": 250,
    "discount_rate": 0.08,
    "horizon_years": 30,
    "round_daily_revenue": 0,
}

CASE2_DEFAULTS = {
    "bess_capacity_kwh": 13.5,
    "bess_power_kw": 5.6,
    "round_trip_efficiency": 0.85,
    "evening_rate": 0.30,
    "bess_device_cost": 8500.0,
    "bess_hardware_cost": 1000.0,
    "bess_installed_cost": 12000.0,
    # Daily benefit used for payback; a negative value selects the computed arbitrage.
    "daily_benefit": 3.50,
    "trading_days": 365,
    "discount_rates": (0.05, 0.08),
    "horizon_years": 40,
}

CASE3_DEFAULTS = {
    "n_homes": 10,
    "home_solar_cost": 10212.0,
    "home_solar_annual_benefit": 2268.0,
    "storage_kwh_per_home": 13.5,
    "storage_cost_per_kwh": 12000.0 / 13.5,
    "economies_of_scale_discount": 0.30,
    "round_trip_efficiency": 0.85,
    "evening_rate": 0.30,
    "trading_days": 365,
    "regulation_revenue_annual": 0.0,
    "discount_rate": 0.05,
    "goal_years": 6.0,
    "horizon_years": 40,
}


@dataclass(frozen=True)
class CaseStudyReport:
    case_id: int
    cost: float
    discount_rates: tuple[float, ...]
    simple_payback_years: float | None
    discounted_payback_years: dict[float, int | None]
    assumptions: dict
    derived: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["discount_rates"] = list(self.discount_rates)
        d["discounted_payback_years"] = {
            f"{r:g}": y for r, y in self.discounted_payback_years.items()
        }
        d["notes"] = list(self.notes)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)

    def table_row(self) -> dict:
        rates = ";".join(f"{100 * r:g}" for r in self.discount_rates)
        years = ";".join(
            "not-reached" if y is None else str(y)
            for y in self.discounted_payback_years.values()
        )
        return {
            "case": self.case_id,
            "cost": f"{self.cost:.6f}",
            "discount_rate_pct": rates,
            "payback_years": years,
        }


TABLE1_COLUMNS = ("case", "cost", "discount_rate_pct", "payback_years")


def table1_csv(reports: Sequence[CaseStudyReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE1_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        w.writerow(rep.table_row())
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _merge(defaults: Mapping, overrides: Mapping | None) -> dict:
    params = dict(defaults)
    for key, val in (overrides or {}).items():
        if key not in defaults:
            raise UsageError(f"unknown parameter {key!r}; known: {', '.join(sorted(defaults))}")
        try:
            if isinstance(defaults[key], tuple):
                if isinstance(val, str):
                    val = val.split(",")
                val = tuple(float(v) for v in (val if isinstance(val, (list, tuple)) else [val]))
            else:
                val = int(float(val)) if isinstance(defaults[key], int) else float(val)
        except ValueError:
            raise UsageError(f"parameter {key!r}: not a number: {val!r}") from None
        params[key] = val
    return params


def case1_daily_energy_kwh(params: Mapping) -> float:
    from .core import TimeGrid, integrate_energy
    from .devices import solar_profile

    spec = SolarArraySpec(
        peak_kw=params["solar_peak_kw"],
        daylight_hours=params["daylight_hours"],
        angle_factor=params["angle_factor"],
    )
    return integrate_energy(solar_profile(spec, TimeGrid.hourly()))


def _case1(params: dict) -> CaseStudyReport:
    gross = params["solar_peak_kw"] * 1000 * params["cost_per_watt"]
    cost = gross * (1 - params["federal_credit"])
    energy = case1_daily_energy_kwh(params)
    daily = energy * params["net_metering_rate"]
    if params["round_daily_revenue"]:
        daily = float(round(daily))
    annual = daily * params["sunny_days"]
    rate = params["discount_rate"]
    sched = CashflowSchedule(cost, annual, int(params["horizon_years"]))
    simple = None if annual <= 0 and cost > 0 else simple_payback(sched)
    return CaseStudyReport(
        case_id=1,
        cost=cost,
        discount_rates=(rate,),
        simple_payback_years=simple,
        discounted_payback_years={rate: discounted_payback(sched, rate)},
        assumptions=params,
        derived={
            "gross_cost": gross,
            "daily_energy_kwh": energy,
            "daily_revenue": daily,
            "annual_benefit": annual,
            "npv_at_horizon": npv(sched.cashflows(), rate),
        },
    )


def case2_daily_arbitrage(params: Mapping) -> float:
    return (
        params["bess_capacity_kwh"] * params["round_trip_efficiency"] * params["evening_rate"]
    )


def _case2(params: dict) -> CaseStudyReport:
    case1 = _case1(dict(CASE1_DEFAULTS))
    bess = BessSpec(
        params["bess_capacity_kwh"], params["bess_power_kw"], params["round_trip_efficiency"]
    )
    arbitrage = case2_daily_arbitrage(params)
    daily = params["daily_benefit"] if params["daily_benefit"] >= 0 else arbitrage
    annual = daily * params["trading_days"]
    cost = params["bess_installed_cost"]
    rates = tuple(params["discount_rates"])
    sched = CashflowSchedule(cost, annual, int(params["horizon_years"]))
    simple = None if annual <= 0 else simple_payback(sched)
    return CaseStudyReport(
        case_id=2,
        cost=case1.cost + cost,
        discount_rates=rates,
        simple_payback_years=simple,
        discounted_payback_years={r: discounted_payback(sched, r) for r in rates},
        assumptions=params,
        derived={
            "incremental_cost": cost,
            "charge_time_h": bess_charge_time(bess),
            "daily_arbitrage": arbitrage,
            "daily_benefit": daily,
            "annual_benefit": annual,
            "simple_payback_days": None if daily <= 0 else cost / daily,
            "discounted_payback_fractional": {
                f"{r:g}": discounted_payback_fractional(sched, r) for r in rates
            },
        },
        notes=(
            "cost column is the combined solar + battery investment; paybacks use the "
            "incremental battery cost against the battery's own arbitrage benefit",
        ),
    )


def _case3(params: dict) -> CaseStudyReport:
    n = int(params["n_homes"])
    storage_kwh = n * params["storage_kwh_per_home"]
    unit = params["storage_cost_per_kwh"] * (1 - params["economies_of_scale_discount"])
    storage_cost = storage_kwh * unit
    cost = n * params["home_solar_cost"] + storage_cost
    arbitrage = (
        storage_kwh
        * params["round_trip_efficiency"]
        * params["evening_rate"]
        * params["trading_days"]
    )
    annual = (
        n * params["home_solar_annual_benefit"]
        + arbitrage
        + params["regulation_revenue_annual"]
    )
    rate = params["discount_rate"]
    sched = CashflowSchedule(cost, annual, int(params["horizon_years"]))
    simple = None if annual <= 0 else simple_payback(sched)
    years = discounted_payback(sched, rate)
    frac = discounted_payback_fractional(sched, rate)
    goal = params["goal_years"]
    return CaseStudyReport(
        case_id=3,
        cost=cost,
        discount_rates=(rate,),
        simple_payback_years=simple,
        discounted_payback_years={rate: years},
        assumptions=params,
        derived={
            "storage_kwh": storage_kwh,
            "storage_cost": storage_cost,
            "storage_unit_cost": unit,
            "annual_benefit": annual,
            "discounted_payback_fractional": frac,
            "goal": f"<{goal:g} years at {100 * rate:g}%",
            "goal_met": frac is not None and frac < goal,
        },
        notes=("parameterised scenario evaluated against a payback goal, not a measured result",),
    )


_CASES = {1: (CASE1_DEFAULTS, _case1), 2: (CASE2_DEFAULTS, _case2), 3: (CASE3_DEFAULTS, _case3)}


def run_case_study(case_id: int, overrides: Mapping | None = None) -> CaseStudyReport:
    """Evaluate case 1 (solar), 2 (solar + home battery) or 3 (community storage)."""
    try:
        defaults, fn = _CASES[int(case_id)]
    except (KeyError, ValueError):
        raise UsageError(f"unknown case id {case_id!r}; expected 1, 2 or 3") from None
    params = _merge(defaults, overrides)
    report = fn(params)
    if report.simple_payback_years is None and report.cost > 0:
        raise NoPaybackError(f"case {case_id}: zero annual benefit, no payback")
    return report


__all__ = [
    "CashflowSchedule",
    "CaseStudyReport",
    "TABLE1_COLUMNS",
    "discounted_payback",
    "discounted_payback_fractional",
    "npv",
    "run_case_study",
    "simple_payback",
    "table1_csv",
]
