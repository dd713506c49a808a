"""Community price coordination and settlement.

A coordinator broadcasts one P2P price per step. Every home answers with
its best response, the coordinator measures the per-step P2P imbalance and
moves the price against it (projected subgradient on the balance dual),
clamped to the band between the utility export and import rates.

At a band edge the utility is a perfect substitute for the P2P market on
one side: at the export rate sellers are indifferent between exporting and
selling to peers, at the import rate buyers are indifferent. Their P2P
volume is then any amount between zero and their full position, and the
step counts as balanced when zero lies inside the aggregate range. Homes
that cannot reach the utility (islanded) never contribute such slack.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import TimeSeries
from .dcgrid import FlowSolution, GridTopology, NodeKind, solve_flows, validate_topology
from .errors import LineLimitError, NumericError, UsageError
from .house import HouseProblem, HouseResponse, respond_to_price, solve_house

logger = logging.getLogger(__name__)

DIMINISH_AFTER = 50


@dataclass(frozen=True)
class MarketConfig:
    max_iterations: int = 500
    step_size: float = 0.005
    tolerance_kw: float = 1e-6
    # (export, import) arrays; derived from the homes' tariffs when None.
    price_band: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise UsageError("market step_size must be positive")
        if not self.tolerance_kw > 0:
            raise UsageError("market tolerance must be positive")
        if self.max_iterations < 1:
            raise UsageError("market needs at least one iteration")
        if self.price_band is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.price_band)
            if np.any(lo > hi):
                raise UsageError("price band is empty at some step")
            object.__setattr__(self, "price_band", (lo, hi))

    def step_at(self, iteration: int) -> float:
        """Step size for 1-based ``iteration``: constant, then ~ 1/sqrt(k)."""
        if iteration <= DIMINISH_AFTER:
            return self.step_size
        return self.step_size * math.sqrt(DIMINISH_AFTER / iteration)


@dataclass(frozen=True, eq=False)
class PriceSignal:
    prices: TimeSeries


@dataclass(frozen=True, eq=False)
class HomeLedger:
    p2p_bought_kwh: np.ndarray
    p2p_sold_kwh: np.ndarray
    p2p_payment: float
    utility_payment: float
    p2p_payment_by_step: np.ndarray

    @property
    def total(self) -> float:
        return self.p2p_payment + self.utility_payment


@dataclass(frozen=True, eq=False)
class Settlement:
    homes: dict[str, HomeLedger]
    community_storage_allocation: dict[str, float] = field(default_factory=dict)

    def peer_payment_sums(self) -> np.ndarray:
        """Sum over homes of P2P payments, per step (zero when money is conserved)."""
        rows = [led.p2p_payment_by_step for _, led in sorted(self.homes.items())]
        return np.sum(rows, axis=0) if rows else np.zeros(0)

    def total_cost(self, home_id: str) -> float:
        return self.homes[home_id].total + self.community_storage_allocation.get(home_id, 0.0)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    max_imbalance_kw: float
    price_min: float
    price_max: float


@dataclass(frozen=True, eq=False)
class MarketResult:
    price: PriceSignal
    responses: list[HouseResponse]
    flows: list[FlowSolution | None]
    settlement: Settlement
    converged: bool
    iterations: int
    residual_kw: np.ndarray
    trace: list[TraceRow]
    issues: list[str] = field(default_factory=list)

    @property
    def max_residual_kw(self) -> float:
        return float(np.max(np.abs(self.residual_kw))) if self.residual_kw.size else 0.0

    @property
    def slack_kw(self) -> np.ndarray:
        """Utility node injection per step (positive = utility supplies the community)."""
        return np.array([np.nan if f is None else f.slack_injection_kw for f in self.flows])


def band_for(homes: Sequence[HouseProblem], config: MarketConfig):
    if config.price_band is not None:
        return config.price_band
    lo = np.max([h.tariff.export_rate for h in homes], axis=0)
    hi = np.min([h.tariff.import_rate for h in homes], axis=0)
    if np.any(lo > hi + 1e-12):
        raise UsageError("the homes' tariffs leave no common price band")
    return lo, np.maximum(hi, lo)


def update_price(
    price: PriceSignal, imbalance_kw, config: MarketConfig, band=None, iteration: int = 1
) -> PriceSignal:
    """Move prices against the imbalance: surplus lowers, deficit raises."""
    imb = np.asarray(imbalance_kw, dtype=float)
    lo, hi = band if band is not None else config.price_band or (None, None)
    p = price.prices.values - config.step_at(iteration) * imb
    if lo is not None:
        p = np.clip(p, lo, hi)
    return PriceSignal(TimeSeries(price.prices.grid, p))


# -- clearing ---------------------------------------------------------------


@dataclass
class _Clearing:
    imbalance: np.ndarray  # kW, positive = excess P2P supply
    p2p_kw: np.ndarray  # (homes, steps) net P2P purchase, import > 0


def _clear(homes, responses, price: np.ndarray) -> _Clearing:
    """Per-step P2P imbalance and, where possible, a balancing allocation."""
    n_h = len(responses)
    n_t = price.size
    lo = np.zeros((n_h, n_t))  # P2P supply range per home, supply > 0
    hi = np.zeros((n_h, n_t))
    for i, (prob, r) in enumerate(zip(homes, responses)):
        supply = r.injection.values
        flex = not prob.islanded
        at_export = flex & (price <= prob.tariff.export_rate + 1e-12)
        at_import = flex & (price >= prob.tariff.import_rate - 1e-12)
        sell = supply > 0
        buy = supply < 0
        lo[i] = np.where(sell & at_export, 0.0, supply)
        hi[i] = np.where(sell & at_export, supply, supply)
        lo[i] = np.where(buy & at_import, supply, lo[i])
        hi[i] = np.where(buy & at_import, 0.0, hi[i])
    total_lo = lo.sum(axis=0)
    total_hi = hi.sum(axis=0)
    imbalance = np.where(total_lo > 0, total_lo, np.where(total_hi < 0, total_hi, 0.0))
    # Target aggregate supply: the point of [lo, hi] closest to zero.
    target = np.clip(0.0, total_lo, total_hi)
    supply = lo.copy()
    for t in range(n_t):
        fixed = lo[:, t] == hi[:, t]
        need = target[t] - lo[:, t].sum()
        width = hi[:, t] - lo[:, t]
        wsum = width.sum()
        if wsum > 0 and need > 0:
            supply[:, t] = lo[:, t] + width * min(need / wsum, 1.0)
        supply[fixed, t] = lo[fixed, t]
    return _Clearing(imbalance, -supply)


def _dispatch(problem: HouseProblem, resp: HouseResponse, p2p_kw: np.ndarray) -> HouseResponse:
    """Re-route a response so its P2P volume matches the market allocation."""
    s = resp.schedule
    total = s.utility_exchange + s.p2p_exchange
    p2p = np.where(np.abs(p2p_kw) <= np.abs(total) + 1e-12, p2p_kw, total)
    util = total - p2p
    for arr in (p2p, util):
        arr.flags.writeable = False
    sched = replace(s, utility_exchange=util, p2p_exchange=p2p)
    return replace(resp, schedule=sched)


def _solve_all(problems, price: TimeSeries, executor: Executor | None):
    if executor is None:
        return [respond_to_price(p, price) for p in problems]
    return list(executor.map(respond_to_price, problems, [price] * len(problems)))


def run_market(
    homes: Sequence[HouseProblem],
    topo: GridTopology,
    config: MarketConfig = MarketConfig(),
    executor: Executor | None = None,
    initial_price: np.ndarray | None = None,
) -> MarketResult:
    """Iterate price and house responses until the P2P balance clears.

    Homes are processed in id order so aggregation is reproducible. A
    residual left at the iteration cap is settled with the utility and
    reported, not raised.
    """
    if not homes:
        raise UsageError("market needs at least one home")
    homes = sorted(homes, key=lambda p: p.home.id)
    grid = homes[0].grid
    if any(h.grid != grid for h in homes):
        raise UsageError("all homes must share one time grid")
    defects = validate_topology(topo)
    if defects:
        raise UsageError("invalid topology: " + "; ".join(defects))
    node_ids = set(topo.node_ids)
    missing = [h.home.id for h in homes if h.home.id not in node_ids]
    if missing:
        raise UsageError(f"homes missing from topology: {missing}")

    lo, hi = band_for(homes, config)
    alone = _standalone(homes, executor)
    if initial_price is not None:
        start = np.clip(initial_price, lo, hi)
    elif alone is not None:
        # Start at the edge the community leans towards without any trading.
        surplus = np.sum([r.injection.values for r in alone], axis=0)
        start = np.where(surplus > 0, lo, np.where(surplus < 0, hi, 0.5 * (lo + hi)))
    else:
        start = 0.5 * (lo + hi)
    price = PriceSignal(TimeSeries(grid, start))
    if len(homes) == 1 and alone is not None:
        # No peer to trade with: the lone home deals with the utility only.
        return _finish(homes, topo, price, alone, True, 0, np.zeros(grid.n_steps), [], [])
    trace: list[TraceRow] = []
    converged = False
    clearing = None
    responses: list[HouseResponse] = []
    it = 0
    for it in range(1, config.max_iterations + 1):
        responses = _solve_all(homes, price.prices, executor)
        clearing = _clear(homes, responses, price.prices.values)
        worst = float(np.max(np.abs(clearing.imbalance)))
        pv = price.prices.values
        trace.append(TraceRow(it, worst, float(pv.min()), float(pv.max())))
        if worst < config.tolerance_kw:
            converged = True
            break
        nxt = update_price(price, clearing.imbalance, config, (lo, hi), it)
        if np.array_equal(nxt.prices.values, pv):
            # Clamped at the band with a persistent imbalance; more rounds change nothing.
            break
        price = nxt

    issues: list[str] = []
    if not converged:
        fallback = "utility-only dispatch" if alone is not None else "the utility"
        issues.append(
            f"E_NONCONVERGENCE: market stopped after {it} iterations with residual "
            f"{float(np.max(np.abs(clearing.imbalance))):.6f} kW; day settled by {fallback}"
        )
    if converged or alone is None:
        dispatched = [
            _dispatch(p, r, clearing.p2p_kw[i]) for i, (p, r) in enumerate(zip(homes, responses))
        ]
    else:
        # Decisions priced at a P2P rate that never cleared would break individual
        # rationality, so every home falls back to its standalone schedule.
        dispatched = alone
    return _finish(homes, topo, price, dispatched, converged, it, clearing.imbalance, trace, issues)


def _standalone(homes, executor) -> list[HouseResponse] | None:
    """Utility-only responses, or None when some home cannot reach the utility."""
    if any(h.islanded for h in homes):
        return None
    plain = [h.with_price(None) for h in homes]
    if executor is None:
        return [solve_house(p) for p in plain]
    return list(executor.map(solve_house, plain))


def _finish(homes, topo, price, dispatched, converged, it, residual, trace, issues) -> MarketResult:
    grid = homes[0].grid
    flows: list[FlowSolution | None] = []
    for t in range(grid.n_steps):
        inj = {r.home_id: float(r.injection.values[t]) for r in dispatched}
        try:
            flows.append(solve_flows(topo, inj))
        except (LineLimitError, NumericError) as exc:
            hour = grid.hours()[t]
            issues.append(f"{exc.code}: step {t} ({hour:g} h): {exc}")
            flows.append(None)
    kinds = {n.id: n.kind for n in topo.nodes}
    settlement = settle_ledger(
        dispatched,
        price,
        [h.tariff for h in homes],
        storage_ids=[h.home.id for h in homes if kinds[h.home.id] is NodeKind.COMMUNITY_STORAGE],
    )
    return MarketResult(
        price=price,
        responses=list(dispatched),
        flows=flows,
        settlement=settlement,
        converged=converged,
        iterations=it,
        residual_kw=np.asarray(residual, dtype=float),
        trace=trace,
        issues=issues,
    )


def settle_ledger(
    responses: Sequence[HouseResponse],
    price: PriceSignal,
    tariff,
    storage_ids: Sequence[str] = (),
) -> Settlement:
    """Money owed per home at the clearing price and the utility tariff.

    Per step the matched P2P energy is ``min(total sold, total bought)``,
    shared pro rata on each side; matched energy pays the clearing price
    and any unmatched P2P offer settles with the utility. Community storage
    nodes' net cost is passed on to the other homes in proportion to the
    P2P energy they traded while the storage was active.
    ``tariff`` is one schedule for everyone or one per response.
    """
    tariffs = list(tariff) if isinstance(tariff, (list, tuple)) else [tariff] * len(responses)
    p = price.prices.values
    h = price.prices.grid.step
    n_t = p.size
    p2p = np.array([r.schedule.p2p_exchange for r in responses]).reshape(len(responses), n_t)
    buys = np.clip(p2p, 0, None) * h
    sells = np.clip(-p2p, 0, None) * h
    tot_b = buys.sum(axis=0)
    tot_s = sells.sum(axis=0)
    matched = np.minimum(tot_b, tot_s)
    fb = np.divide(matched, tot_b, out=np.zeros(n_t), where=tot_b > 0)
    fs = np.divide(matched, tot_s, out=np.zeros(n_t), where=tot_s > 0)
    ledgers: dict[str, HomeLedger] = {}
    volumes: dict[str, np.ndarray] = {}
    for i, (r, tar) in enumerate(zip(responses, tariffs)):
        bought = buys[i] * fb
        sold = sells[i] * fs
        pay = (bought - sold) * p
        util_kwh = r.schedule.utility_exchange * h + (buys[i] - bought) - (sells[i] - sold)
        util_pay = np.where(util_kwh > 0, util_kwh * tar.import_rate, util_kwh * tar.export_rate)
        for arr in (bought, sold, pay):
            arr.flags.writeable = False
        ledgers[r.home_id] = HomeLedger(
            bought, sold, math.fsum(pay), math.fsum(util_pay), pay
        )
        volumes[r.home_id] = bought + sold
    alloc: dict[str, float] = {}
    storage = [s for s in storage_ids if s in ledgers]
    users = [hid for hid in ledgers if hid not in storage]
    if storage and users:
        active = np.sum([volumes[s] for s in storage], axis=0) > 0
        usage = {u: float(np.sum(volumes[u][active])) for u in users}
        total_use = math.fsum(usage.values())
        bill = math.fsum(ledgers[s].total for s in storage)
        for u in users:
            share = usage[u] / total_use if total_use > 0 else 1.0 / len(users)
            alloc[u] = bill * share
        for s in storage:
            alloc[s] = -ledgers[s].total
    return Settlement(ledgers, alloc)


__all__ = [
    "HomeLedger",
    "MarketConfig",
    "MarketResult",
    "PriceSignal",
    "Settlement",
    "band_for",
    "run_market",
    "settle_ledger",
    "update_price",
]
