"""Neighborhood transactive energy simulator.

Homes with solar, batteries and shiftable loads trade energy over a
community DC grid. A price coordinator iterates until peer supply meets
peer demand, with the utility as the fallback source.
"""

from .core import Direction, TariffKind, TariffSchedule, TimeGrid, TimeSeries, integrate_energy, rate_at
from .dcgrid import FlowSolution, GridTopology, Line, Node, NodeKind, kcl_residuals, solve_flows, validate_topology
from .devices import Appliance, BessSpec, BessState, HomeSpec, SolarArraySpec, bess_charge_time, bess_step, solar_profile
from .economics import (
    CashflowSchedule,
    CaseStudyReport,
    discounted_payback,
    npv,
    run_case_study,
    simple_payback,
)
from .errors import SimError
from .house import HouseProblem, HouseResponse, brute_force_house, respond_to_price, solve_house
from .market import MarketConfig, MarketResult, run_market, settle_ledger
from .scenario import ScenarioConfig, load_config, net_load_curve, parse_config, sample_events, simulate_horizon

__version__ = "0.1.0"

__all__ = [
    "Appliance",
    "BessSpec",
    "BessState",
    "CaseStudyReport",
    "CashflowSchedule",
    "Direction",
    "FlowSolution",
    "GridTopology",
    "HomeSpec",
    "HouseProblem",
    "HouseResponse",
    "Line",
    "MarketConfig",
    "MarketResult",
    "Node",
    "NodeKind",
    "ScenarioConfig",
    "SimError",
    "SolarArraySpec",
    "TariffKind",
    "TariffSchedule",
    "TimeGrid",
    "TimeSeries",
    "bess_charge_time",
    "bess_step",
    "brute_force_house",
    "discounted_payback",
    "integrate_energy",
    "kcl_residuals",
    "load_config",
    "net_load_curve",
    "npv",
    "parse_config",
    "rate_at",
    "respond_to_price",
    "run_case_study",
    "run_market",
    "sample_events",
    "settle_ledger",
    "simple_payback",
    "simulate_horizon",
    "solar_profile",
    "solve_flows",
    "solve_house",
    "validate_topology",
]
