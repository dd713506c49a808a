"""Scenario files, outage sampling and multi-day simulation.

Scenario files are TOML. Every day of the horizon is one market run on the
same time grid; inverter outages zero a home's solar for the whole day and
a P2P network outage makes every home settle with the utility alone.
Identical days (same outage pattern) are solved once and shared.
"""

from __future__ import annotations

import hashlib
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .core import TariffKind, TariffSchedule, TimeGrid, TimeSeries
from .dcgrid import GridTopology, Line, Node, NodeKind, validate_topology
from .devices import Appliance, BessSpec, HomeSpec, SolarArraySpec
from .errors import ConfigError, SimError, UsageError
from .house import HouseProblem, HouseResponse, solve_house
from .market import MarketConfig, MarketResult, PriceSignal, Settlement, band_for, run_market, settle_ledger

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"

# Relative hourly demand of a typical home: morning bump, evening peak at 19:00.
RESIDENTIAL_SHAPE = (
    0.35, 0.30, 0.28, 0.28, 0.30, 0.38, 0.55, 0.65, 0.55, 0.45, 0.40, 0.40,
    0.42, 0.42, 0.45, 0.50, 0.62, 0.80, 0.95, 1.00, 0.95, 0.80, 0.60, 0.45,
)  # fmt: skip

INVERTER_OUTAGE = "solar_inverter_outage"
P2P_OUTAGE = "p2p_network_outage"
COMMUNITY = "community"


@dataclass(frozen=True)
class EventRates:
    solar_inverter_outage_daily_prob: float = 0.0
    p2p_network_outage_daily_prob: float = 0.0


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    grid: TimeGrid
    topology: GridTopology
    homes: tuple[HomeSpec, ...]
    tariff: TariffSchedule
    seed: int
    market: MarketConfig = MarketConfig()
    events: EventRates = EventRates()
    horizon_days: int = 1

    @property
    def islanded(self) -> bool:
        return self.topology.utility_cap_kw == 0

    def home(self, home_id: str) -> HomeSpec:
        return next(h for h in self.homes if h.id == home_id)

    def with_seed(self, seed: int) -> ScenarioConfig:
        return replace(self, seed=int(seed))

    def without_storage(self) -> ScenarioConfig:
        """Same scenario with every battery removed (community storage nodes become idle)."""
        return replace(self, homes=tuple(replace(h, bess=None) for h in self.homes))


# -- parsing ----------------------------------------------------------------

_TOP = {"name", "seed", "horizon_days", "grid", "tariff", "market", "events", "topology", "homes"}
_GRID = {"start_hour", "step", "n_steps", "multi_day"}
_TARIFF = {"kind", "import_rate", "export_rate", "blocks"}
_BLOCK = {"start_hour", "end_hour", "import_rate", "export_rate"}
_MARKET = {"max_iterations", "step_size", "tolerance_kw"}
_EVENTS = {"solar_inverter_outage_daily_prob", "p2p_network_outage_daily_prob"}
_TOPO = {"utility_cap_kw", "nodes", "lines"}
_NODE = {"id", "kind"}
_LINE = {"from", "to", "capacity_kw", "loss_coeff"}
_HOME = {
    "id", "fixed_load_kw", "load_profile", "load_peak_kw", "service_limit_kw",
    "solar", "bess", "appliances",
}  # fmt: skip
_SOLAR = {"peak_kw", "daylight_hours", "angle_factor", "peak_hour", "haze", "measured_kw"}
_BESS = {
    "capacity_kwh", "continuous_power_kw", "round_trip_efficiency",
    "discharge_applies_loss", "initial_soc_kwh",
}  # fmt: skip
_APPLIANCE = {"name", "power_kw", "duration_hours", "window_hours", "interruptible", "discomfort"}


class _Reader:
    """Collects every schema violation instead of stopping at the first."""

    def __init__(self):
        self.errors: list[str] = []

    def err(self, where: str, msg: str):
        self.errors.append(f"{where}: {msg}")

    def table(self, data, where, allowed, required=()):
        if not isinstance(data, Mapping):
            self.err(where, "expected a table")
            return {}
        for key in sorted(set(data) - allowed):
            self.err(f"{where}.{key}" if where else key, "unknown key")
        for key in required:
            if key not in data:
                self.err(f"{where}.{key}" if where else key, "missing required field")
        return data

    def num(self, data, key, where, default=None, lo=None, hi=None, integer=False, required=False):
        loc = f"{where}.{key}" if where else key
        if key not in data:
            if required:
                self.err(loc, "missing required field")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.err(loc, f"expected a number, got {v!r}")
            return default
        if integer and not isinstance(v, int):
            self.err(loc, f"expected an integer, got {v!r}")
            return default
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            self.err(loc, f"{v} outside [{lo}, {hi}]")
            return default
        return v

    def build(self, where, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (UsageError, TypeError, ValueError) as exc:
            self.err(where, str(exc))
            return None


def _series(r: _Reader, grid: TimeGrid, value, where: str):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return TimeSeries.constant(grid, value)
    if isinstance(value, list) and len(value) == grid.n_steps:
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return TimeSeries(grid, value)
    r.err(where, f"expected a number or a list of {grid.n_steps} numbers")
    return None


def residential_load(grid: TimeGrid, peak_kw: float) -> TimeSeries:
    hod = np.floor(np.mod(grid.hours(), 24.0)).astype(int)
    return TimeSeries(grid, peak_kw * np.array(RESIDENTIAL_SHAPE)[hod])


def _parse_home(r: _Reader, data, where: str, grid: TimeGrid):
    data = r.table(data, where, _HOME, required=("id",))
    hid = data.get("id")
    if hid is not None and not isinstance(hid, str):
        r.err(f"{where}.id", "expected a string")
        hid = None
    load = None
    profile = data.get("load_profile")
    if profile is not None:
        if profile != "residential":
            r.err(f"{where}.load_profile", f"unknown profile {profile!r}")
        else:
            peak = r.num(data, "load_peak_kw", where, 3.0, lo=0)
            load = residential_load(grid, peak)
        if "fixed_load_kw" in data:
            r.err(where, "give either fixed_load_kw or load_profile, not both")
    else:
        load = _series(r, grid, data.get("fixed_load_kw", 0.0), f"{where}.fixed_load_kw")
    solar = None
    if "solar" in data:
        s = r.table(data["solar"], f"{where}.solar", _SOLAR)
        haze = measured = None
        if "haze" in s:
            haze = _series(r, grid, s["haze"], f"{where}.solar.haze")
        if "measured_kw" in s:
            measured = _series(r, grid, s["measured_kw"], f"{where}.solar.measured_kw")
        solar = r.build(
            f"{where}.solar",
            SolarArraySpec,
            peak_kw=r.num(s, "peak_kw", f"{where}.solar", 5.0),
            daylight_hours=r.num(s, "daylight_hours", f"{where}.solar", 12.0),
            angle_factor=r.num(s, "angle_factor", f"{where}.solar", 0.63),
            peak_hour=r.num(s, "peak_hour", f"{where}.solar", 15.0),
            haze_factor=haze,
            measured=measured,
        )
    bess, soc0 = None, 0.0
    if "bess" in data:
        b = r.table(data["bess"], f"{where}.bess", _BESS)
        w = f"{where}.bess"
        bess = r.build(
            w,
            BessSpec,
            r.num(b, "capacity_kwh", w, 13.5),
            r.num(b, "continuous_power_kw", w, 5.6),
            r.num(b, "round_trip_efficiency", w, 0.85),
            bool(b.get("discharge_applies_loss", True)),
        )
        soc0 = r.num(b, "initial_soc_kwh", w, 0.0, lo=0)
    apps = []
    for k, a in enumerate(data.get("appliances", [])):
        w = f"{where}.appliances[{k}]"
        a = r.table(a, w, _APPLIANCE, required=("name", "power_kw", "duration_hours", "window_hours"))
        win = a.get("window_hours")
        if not (isinstance(win, list) and len(win) == 2):
            if "window_hours" in a:
                r.err(f"{w}.window_hours", "expected [start_hour, end_hour]")
            continue
        dur = r.num(a, "duration_hours", w, None, lo=0)
        power = r.num(a, "power_kw", w, None, lo=0)
        if dur is None or power is None:
            continue
        try:
            first = grid.index_of(win[0])
            last = grid.index_of(win[1] - grid.step)
            steps = grid.steps_for(dur)
        except UsageError as exc:
            r.err(w, str(exc))
            continue
        app = r.build(
            w,
            Appliance,
            str(a["name"]),
            power,
            steps,
            (first, last),
            bool(a.get("interruptible", False)),
            tuple(a.get("discomfort", ())),
        )
        if app is not None:
            apps.append(app)
    if hid is None or load is None:
        return None
    return r.build(
        where,
        HomeSpec,
        hid,
        load,
        tuple(apps),
        solar,
        bess,
        r.num(data, "service_limit_kw", where, 24.0),
        soc0,
    )


def _parse_tariff(r: _Reader, data, grid: TimeGrid):
    t = r.table(data, "tariff", _TARIFF, required=("kind", "import_rate"))
    kind = t.get("kind")
    try:
        kind = TariffKind(kind)
    except ValueError:
        if "kind" in t:
            r.err("tariff.kind", f"unknown tariff kind {kind!r}")
        return None
    imp = r.num(t, "import_rate", "tariff", None, lo=0)
    exp = r.num(t, "export_rate", "tariff", 0.0, lo=0)
    if imp is None:
        return None
    if kind is TariffKind.NET_METERING:
        if "export_rate" in t and exp != imp:
            r.err("tariff.export_rate", "net metering credits exports at the import rate")
        return r.build("tariff", TariffSchedule.net_metering, grid, imp)
    if kind is TariffKind.FLAT:
        if "blocks" in t:
            r.err("tariff.blocks", "a flat tariff has no blocks")
        return r.build("tariff", TariffSchedule.flat, grid, imp, exp)
    blocks = []
    for k, blk in enumerate(t.get("blocks", [])):
        w = f"tariff.blocks[{k}]"
        blk = r.table(blk, w, _BLOCK, required=("start_hour", "end_hour", "import_rate"))
        vals = [
            r.num(blk, "start_hour", w, None, lo=0, hi=24),
            r.num(blk, "end_hour", w, None, lo=0, hi=24),
            r.num(blk, "import_rate", w, None, lo=0),
        ]
        if "export_rate" in blk:
            vals.append(r.num(blk, "export_rate", w, None, lo=0))
        if None not in vals:
            blocks.append(tuple(vals))
    return r.build("tariff", TariffSchedule.time_of_use, grid, blocks, imp, exp)


def _parse_topology(r: _Reader, data):
    t = r.table(data, "topology", _TOPO, required=("nodes", "lines"))
    nodes, lines = [], []
    for k, n in enumerate(t.get("nodes", [])):
        w = f"topology.nodes[{k}]"
        n = r.table(n, w, _NODE, required=("id",))
        if "id" in n:
            node = r.build(w, Node, str(n["id"]), n.get("kind", "home"))
            if node is not None:
                nodes.append(node)
    for k, ln in enumerate(t.get("lines", [])):
        w = f"topology.lines[{k}]"
        ln = r.table(ln, w, _LINE, required=("from", "to", "capacity_kw"))
        cap = r.num(ln, "capacity_kw", w, None)
        if "from" in ln and "to" in ln and cap is not None:
            lines.append(Line(str(ln["from"]), str(ln["to"]), cap, r.num(ln, "loss_coeff", w, 0.0)))
    cap = r.num(t, "utility_cap_kw", "topology", None, lo=0)
    topo = GridTopology(tuple(nodes), tuple(lines), cap)
    for defect in validate_topology(topo):
        r.err("topology", defect)
    return topo


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate scenario TOML; raises :class:`ConfigError` listing all problems."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    r = _Reader()
    r.table(data, "", _TOP, required=("name", "seed", "tariff", "topology", "homes"))
    seed = data.get("seed")
    if "seed" in data and (isinstance(seed, bool) or not isinstance(seed, int)):
        r.err("seed", f"expected an integer, got {seed!r}")
    elif isinstance(seed, int) and not 0 <= seed < 2**64:
        r.err("seed", "must fit in an unsigned 64-bit integer")
    g = r.table(data.get("grid", {}), "grid", _GRID)
    grid = r.build(
        "grid",
        TimeGrid,
        r.num(g, "start_hour", "grid", 0.0),
        r.num(g, "step", "grid", 1.0),
        r.num(g, "n_steps", "grid", 24, integer=True),
        bool(g.get("multi_day", False)),
    )
    if grid is None:
        raise ConfigError(r.errors)
    tariff = _parse_tariff(r, data.get("tariff", {}), grid) if "tariff" in data else None
    m = r.table(data.get("market", {}), "market", _MARKET)
    market = r.build(
        "market",
        MarketConfig,
        r.num(m, "max_iterations", "market", 500, lo=1, integer=True),
        r.num(m, "step_size", "market", 0.005),
        r.num(m, "tolerance_kw", "market", 1e-6),
    )
    ev = r.table(data.get("events", {}), "events", _EVENTS)
    events = EventRates(
        r.num(ev, "solar_inverter_outage_daily_prob", "events", 0.0, lo=0, hi=1),
        r.num(ev, "p2p_network_outage_daily_prob", "events", 0.0, lo=0, hi=1),
    )
    topo = _parse_topology(r, data["topology"]) if "topology" in data else None
    homes = []
    seen: dict[str, int] = {}
    raw_homes = data.get("homes", [])
    if not isinstance(raw_homes, list):
        r.err("homes", "expected an array of tables")
        raw_homes = []
    for k, h in enumerate(raw_homes):
        home = _parse_home(r, h, f"homes[{k}]", grid)
        hid = h.get("id") if isinstance(h, Mapping) else None
        if isinstance(hid, str):
            if hid in seen:
                r.err(f"homes[{k}].id", f"duplicate home id {hid!r} (first at homes[{seen[hid]}])")
            seen.setdefault(hid, k)
        if home is not None:
            homes.append(home)
    if topo is not None:
        kinds = {n.id: n.kind for n in topo.nodes}
        for k, h in enumerate(homes):
            kind = kinds.get(h.id)
            if kind is None:
                r.err("homes", f"home {h.id!r} does not appear in the topology")
            elif kind not in (NodeKind.HOME, NodeKind.COMMUNITY_STORAGE):
                r.err("homes", f"home {h.id!r} sits on a {kind.value} node")
    horizon = r.num(data, "horizon_days", "", 1, lo=1, integer=True)
    if "name" in data and not isinstance(data["name"], str):
        r.err("name", "expected a string")
    if not raw_homes and "homes" in data:
        r.err("homes", "at least one home is required")
    if r.errors:
        raise ConfigError(r.errors)
    return ScenarioConfig(
        name=data["name"],
        grid=grid,
        topology=topo,
        homes=tuple(homes),
        tariff=tariff,
        seed=seed,
        market=market,
        events=events,
        horizon_days=horizon,
    )


def bundled_scenario(name: str) -> Path:
    path = SCENARIO_DIR / name
    if not path.suffix:
        path = path.with_suffix(".scn")
    return path


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a scenario file; bare names fall back to the bundled scenarios."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario(p.name)
        if bundled.exists():
            p = bundled
        else:
            raise ConfigError([f"{path}: no such scenario file"])
    return parse_config(p.read_text(encoding="utf-8"))


# -- events -----------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Event:
    day: int
    kind: str
    target: str


@dataclass(frozen=True)
class EventTrace:
    events: tuple[Event, ...]
    horizon_days: int

    def on_day(self, day: int) -> list[Event]:
        return [e for e in self.events if e.day == day]

    def outages(self, day: int) -> tuple[frozenset[str], bool]:
        evs = self.on_day(day)
        homes = frozenset(e.target for e in evs if e.kind == INVERTER_OUTAGE)
        return homes, any(e.kind == P2P_OUTAGE for e in evs)

    def count(self, kind: str | None = None, target: str | None = None) -> int:
        return sum(
            (kind is None or e.kind == kind) and (target is None or e.target == target)
            for e in self.events
        )


_KIND_CODES = {INVERTER_OUTAGE: 1, P2P_OUTAGE: 2}


def _stable_hash(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


def event_stream(seed: int, label: str, kind: str) -> np.random.Generator:
    """Independent PCG64 stream per (seed, home id, event kind)."""
    ss = np.random.SeedSequence([seed, _stable_hash(label), _KIND_CODES[kind]])
    return np.random.Generator(np.random.PCG64(ss))


def sample_events(config: ScenarioConfig) -> EventTrace:
    """Daily outage draws; day ``d`` of a stream never depends on the horizon length."""
    days = config.horizon_days
    rates = config.events
    events: list[Event] = []
    draws = [(h.id, INVERTER_OUTAGE, rates.solar_inverter_outage_daily_prob) for h in config.homes]
    draws.append((COMMUNITY, P2P_OUTAGE, rates.p2p_network_outage_daily_prob))
    for label, kind, prob in draws:
        if prob <= 0:
            continue
        hit = event_stream(config.seed, label, kind).random(days) < prob
        events.extend(Event(int(d), kind, label) for d in np.flatnonzero(hit))
    return EventTrace(tuple(sorted(events)), days)


# -- simulation -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DayOutcome:
    """Result of one day's operation, shared by every day with the same events."""

    outages: frozenset[str]
    p2p_outage: bool
    responses: tuple[HouseResponse, ...]
    settlement: Settlement
    prices: np.ndarray
    net_load_kw: np.ndarray
    utility_only_cost: dict[str, float]
    market: MarketResult | None = None
    issues: tuple[str, ...] = ()

    @property
    def home_cost(self) -> dict[str, float]:
        return {hid: self.settlement.total_cost(hid) for hid in sorted(self.settlement.homes)}


@dataclass(frozen=True, eq=False)
class SimulationResult:
    config: ScenarioConfig
    events: EventTrace
    days: tuple[DayOutcome, ...]
    baseline_cost: dict[str, float]

    def day(self, index: int) -> DayOutcome:
        return self.days[index]

    def annual(self) -> dict[str, dict[str, float]]:
        """Per-home totals over the horizon: cost, grid-only cost, benefit."""
        out = {}
        for h in sorted(self.config.homes, key=lambda h: h.id):
            cost = math.fsum(d.home_cost.get(h.id, 0.0) for d in self.days)
            alone = math.fsum(d.utility_only_cost.get(h.id, 0.0) for d in self.days)
            base = self.baseline_cost[h.id] * len(self.days)
            out[h.id] = {
                "cost": cost,
                "utility_only_cost": alone,
                "baseline_cost": base,
                "benefit": base - cost,
            }
        return out

    @property
    def issues(self) -> list[str]:
        return [f"day {i}: {msg}" for i, d in enumerate(self.days) for msg in d.issues]


def _problems(config: ScenarioConfig, outages: frozenset[str]) -> list[HouseProblem]:
    probs = []
    for h in sorted(config.homes, key=lambda h: h.id):
        if h.id in outages and h.solar is not None:
            h = replace(h, solar=None)
        probs.append(HouseProblem(h, config.grid, config.tariff, islanded=config.islanded))
    return probs


def _utility_only(probs: list[HouseProblem]) -> tuple[list[HouseResponse], dict[str, float], list[str]]:
    responses, costs, issues = [], {}, []
    for p in probs:
        try:
            r = solve_house(p)
        except SimError as exc:
            issues.append(f"{exc.code}: {exc}")
            continue
        responses.append(r)
        costs[p.home.id] = r.cost
    return responses, costs, issues


def simulate_day(config: ScenarioConfig, outages: frozenset[str], p2p_outage: bool) -> DayOutcome:
    probs = _problems(config, outages)
    alone, alone_cost, issues = _utility_only(probs)
    grid = config.grid
    if p2p_outage:
        lo, hi = band_for(probs, config.market)
        price = PriceSignal(TimeSeries(grid, 0.5 * (lo + hi)))
        settle = settle_ledger(alone, price, [p.tariff for p in probs if p.home.id in alone_cost])
        net = -np.sum([r.injection.values for r in alone], axis=0) if alone else np.zeros(grid.n_steps)
        return DayOutcome(
            outages, True, tuple(alone), settle, price.prices.values.copy(), net,
            alone_cost, None, tuple(issues),
        )  # fmt: skip
    try:
        res = run_market(probs, config.topology, config.market)
    except SimError as exc:
        issues.append(f"{exc.code}: {exc}")
        lo, hi = band_for(probs, config.market)
        price = PriceSignal(TimeSeries(grid, 0.5 * (lo + hi)))
        settle = settle_ledger(alone, price, [p.tariff for p in probs if p.home.id in alone_cost])
        net = -np.sum([r.injection.values for r in alone], axis=0) if alone else np.zeros(grid.n_steps)
        return DayOutcome(
            outages, p2p_outage, tuple(alone), settle, price.prices.values.copy(), net,
            alone_cost, None, tuple(issues),
        )  # fmt: skip
    slack = res.slack_kw
    fallback = -np.sum([r.injection.values for r in res.responses], axis=0)
    net = np.where(np.isnan(slack), fallback, slack)
    return DayOutcome(
        outages,
        False,
        tuple(res.responses),
        res.settlement,
        res.price.prices.values.copy(),
        net,
        alone_cost,
        res,
        tuple(issues + res.issues),
    )


def _simulate_key(args):
    config, outages, p2p = args
    return simulate_day(config, outages, p2p)


def simulate_horizon(config: ScenarioConfig, workers: int = 1) -> SimulationResult:
    """Run every day of the horizon; output is independent of ``workers``."""
    trace = sample_events(config)
    keys = [trace.outages(d) for d in range(config.horizon_days)]
    unique = list(dict.fromkeys(keys))
    jobs = [(config, o, p) for o, p in unique]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_simulate_key, jobs))
    else:
        outcomes = [_simulate_key(j) for j in jobs]
    by_key = dict(zip(unique, outcomes))
    baseline = {}
    for h in config.homes:
        bare = replace(h, solar=None, bess=None)
        try:
            baseline[h.id] = solve_house(HouseProblem(bare, config.grid, config.tariff)).cost
        except SimError:
            baseline[h.id] = math.nan
    return SimulationResult(config, trace, tuple(by_key[k] for k in keys), baseline)


def net_load_curve(result: SimulationResult, day: int) -> TimeSeries:
    """Utility-node exchange for ``day`` (kW, positive = community imports)."""
    if not 0 <= day < len(result.days):
        raise UsageError(f"day {day} was not simulated (horizon {len(result.days)} days)")
    return TimeSeries(result.config.grid, result.days[day].net_load_kw)


__all__ = [
    "DayOutcome",
    "Event",
    "EventRates",
    "EventTrace",
    "ScenarioConfig",
    "SimulationResult",
    "load_config",
    "net_load_curve",
    "parse_config",
    "residential_load",
    "sample_events",
    "simulate_day",
    "simulate_horizon",
]
