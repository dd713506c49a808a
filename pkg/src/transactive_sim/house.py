"""House-level scheduling: appliance start times and battery dispatch.

The integer decisions are the appliance options (start slot, or on-step
set for interruptible loads) and a per-step battery mode bit. For fixed
appliance loads the remaining problem (battery power levels and how each
step's net position is routed between the utility and the P2P market) is
solved exactly by a backward recursion over the battery's state of
charge. Per-step costs are convex piecewise linear in the net position, so
every value function is too, and each backward step is a merge of slope
lists.

Relaxing the mode bit loses nothing: simultaneous charge and discharge
only wastes energy when prices are nonnegative, so the relaxed optimum
already picks one direction per step and the mode bits are read off the
sign of the battery move. Branch-and-bound therefore branches on
appliance options only; a node's bound is the exact dispatch cost with
every open appliance replaced by the load common to all of its remaining
options, valid because cost never decreases with added load.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._pwl import ConvexPWL, argmin_sum, infconv
from .core import TariffSchedule, TimeGrid, TimeSeries
from .devices import Appliance, HomeSpec
from .errors import InfeasibleError, PriceRejectedError, UsageError

BRUTE_FORCE_MAX_BINARIES = 20
BAND_TOL = 1e-12
_X_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HouseProblem:
    home: HomeSpec
    grid: TimeGrid
    tariff: TariffSchedule
    p2p_price: TimeSeries | None = None
    islanded: bool = False
    # None: enforced on multi-day grids only.
    terminal_soc_floor: bool | None = None

    def __post_init__(self):
        if self.home.grid != self.grid or self.tariff.grid != self.grid:
            raise UsageError(f"{self.home.id}: home, tariff and problem grids differ")
        if self.p2p_price is not None and self.p2p_price.grid != self.grid:
            raise UsageError(f"{self.home.id}: P2P price is on a different grid")

    def with_price(self, price: TimeSeries | None) -> HouseProblem:
        return replace(self, p2p_price=price)

    @property
    def binary_count(self) -> int:
        n = sum(a.binary_count for a in self.home.appliances)
        if self.home.bess is not None:
            n += self.grid.n_steps
        return n


@dataclass(frozen=True, eq=False)
class Schedule:
    appliance_steps: tuple[tuple[int, ...], ...]
    bess_commands: np.ndarray
    bess_modes: tuple[str, ...]
    soc_kwh: np.ndarray
    utility_exchange: np.ndarray
    p2p_exchange: np.ndarray
    curtailed_kw: np.ndarray
    appliance_load: np.ndarray

    @property
    def appliance_starts(self) -> tuple[int, ...]:
        return tuple(steps[0] for steps in self.appliance_steps)


@dataclass(frozen=True, eq=False)
class HouseResponse:
    home_id: str
    schedule: Schedule
    injection: TimeSeries
    cost: float
    marginal_value: TimeSeries
    nodes_explored: int = 0

    @property
    def net_position_kw(self) -> np.ndarray:
        """Signed purchase from outside the home (kW, import > 0)."""
        return -self.injection.values


# -- per-step market view ---------------------------------------------------


@dataclass(frozen=True)
class _Prices:
    buy: np.ndarray  # inf when the home cannot buy
    sell: np.ndarray  # 0 when surplus can only be curtailed
    utility: bool
    p2p: np.ndarray | None


def _prices(problem: HouseProblem) -> _Prices:
    n = problem.grid.n_steps
    util = not problem.islanded
    p = problem.p2p_price.values if problem.p2p_price is not None else None
    buy = np.full(n, math.inf)
    sell = np.zeros(n)
    if util:
        buy = problem.tariff.import_rate.copy()
        sell = np.maximum(sell, problem.tariff.export_rate)
    if p is not None:
        buy = np.minimum(buy, p)
        sell = np.maximum(sell, p)
    return _Prices(buy, sell, util, p)


def _step_cost(x: float, buy: float, sell: float) -> float:
    if x > 0:
        return buy * x
    return sell * x


# -- continuous dispatch ----------------------------------------------------


@dataclass
class _Dispatch:
    cost: float
    delta: np.ndarray  # SoC change per step (kWh)
    x: np.ndarray  # net purchase per step (kWh)


class _Dispatcher:
    """Exact battery/market dispatch for one home at fixed integer loads."""

    def __init__(self, problem: HouseProblem):
        self.problem = problem
        home = problem.home
        self.h = problem.grid.step
        self.n = problem.grid.n_steps
        self.prices = _prices(problem)
        self.solar = home.solar_output().values
        self.fixed = home.fixed_load.values
        self.limit = home.service_limit_kw
        b = home.bess
        self.bess = b
        if b is not None:
            self.cap = b.capacity_kwh
            self.a_c = 1.0 / b.charge_efficiency
            self.a_d = b.discharge_efficiency
            self.soc0 = home.bess_initial_soc_kwh
            floor = problem.terminal_soc_floor
            if floor is None:
                floor = problem.grid.multi_day
            self.terminal_lo = self.soc0 if floor else 0.0

    def net_need(self, app_load: np.ndarray) -> np.ndarray:
        return (self.fixed + app_load - self.solar) * self.h

    def stage(self, t: int, e: float, app_kw: float, mode: str | None) -> ConvexPWL | None:
        """Cost of step ``t`` as a function of the SoC change."""
        b = self.bess
        buy, sell = self.prices.buy[t], self.prices.sell[t]
        head = self.limit - self.fixed[t] - app_kw
        c_max = max(0.0, min(b.continuous_power_kw, head)) * self.h / self.a_c
        d_max = b.continuous_power_kw * self.h
        lo = 0.0 if mode == "charge" else -d_max
        hi = 0.0 if mode == "discharge" else c_max
        a_c, a_d = self.a_c, self.a_d
        if math.isinf(buy):
            hi = min(hi, -e / a_c if e <= 0 else -e / a_d)
            if hi < lo - 1e-9:
                return None
            hi = max(hi, lo)

        def xval(d):
            return e + (a_c * d if d > 0 else a_d * d)

        cuts = {lo, hi}
        if lo < 0 < hi:
            cuts.add(0.0)
        zero = -e / a_c if e < 0 else -e / a_d
        if lo < zero < hi:
            cuts.add(zero)
        pts = sorted(cuts)
        segs = []
        for p0, p1 in zip(pts, pts[1:]):
            if p1 - p0 <= 0:
                continue
            mid = 0.5 * (p0 + p1)
            factor = a_c if mid > 0 else a_d
            price = buy if xval(mid) > 0 else sell
            segs.append((p1 - p0, factor * price))
        return ConvexPWL(lo, _step_cost(xval(lo), buy, sell), segs)

    def solve(self, app_load: np.ndarray, modes: Sequence[str | None] | None = None):
        """Optimal dispatch for the given appliance load, or ``None`` if infeasible."""
        e = self.net_need(app_load)
        buy, sell = self.prices.buy, self.prices.sell
        if self.bess is None:
            if np.any(np.isinf(buy) & (e > _X_TOL)):
                return None
            x = np.where(np.isinf(buy) & (e > 0), 0.0, e)
            cost = math.fsum(_step_cost(xi, bi, si) for xi, bi, si in zip(x, buy, sell))
            return _Dispatch(cost, np.zeros(self.n), x)
        stages = []
        for t in range(self.n):
            g = self.stage(t, e[t], app_load[t], modes[t] if modes else None)
            if g is None:
                return None
            stages.append(g)
        values = [None] * (self.n + 1)
        v = ConvexPWL(self.terminal_lo, 0.0, [])
        if self.cap > self.terminal_lo:
            v.segs.append((self.cap - self.terminal_lo, 0.0))
        values[self.n] = v
        for t in range(self.n - 1, -1, -1):
            v = infconv(stages[t].reflect(), v).restrict(0.0, self.cap)
            if v is None:
                return None
            values[t] = v
        if not values[0].lo - 1e-9 <= self.soc0 <= values[0].hi + 1e-9:
            return None
        soc = self.soc0
        delta = np.zeros(self.n)
        for t in range(self.n):
            d = argmin_sum(stages[t], values[t + 1], soc)
            if d is None:
                return None
            delta[t] = d
            soc = min(max(soc + d, 0.0), self.cap)
        x = np.array(
            [e[t] + (self.a_c * d if d > 0 else self.a_d * d) for t, d in enumerate(delta)]
        )
        x = np.where(np.isinf(buy) & (x > 0), 0.0, x)
        cost = math.fsum(_step_cost(xi, bi, si) for xi, bi, si in zip(x, buy, sell))
        return _Dispatch(cost, delta, x)


# -- integer search ---------------------------------------------------------


class _Search:
    def __init__(self, problem: HouseProblem):
        self.problem = problem
        self.disp = _Dispatcher(problem)
        self.apps: tuple[Appliance, ...] = problem.home.appliances
        self.options = [a.options() for a in self.apps]
        self.n = problem.grid.n_steps

    def load_of(self, j: int, steps) -> np.ndarray:
        load = np.zeros(self.n)
        load[list(steps)] = self.apps[j].power_kw
        return load

    @lru_cache(maxsize=None)
    def _common(self, j: int, lo: int, hi: int) -> tuple[frozenset, float]:
        opts = self.options[j][lo:hi]
        common = frozenset(opts[0]).intersection(*opts[1:])
        pen = min(self.apps[j].discomfort_of(o) for o in opts)
        return common, pen

    def bound(self, ranges) -> float | None:
        load = np.zeros(self.n)
        pen = 0.0
        for j, (lo, hi) in enumerate(ranges):
            common, p = self._common(j, lo, hi)
            if common:
                load[list(common)] += self.apps[j].power_kw
            pen += p
        if np.any(self.disp.fixed + load > self.disp.limit + 1e-9):
            return None
        d = self.disp.solve(load)
        if d is None:
            return None
        return d.cost + pen

    def run(self):
        root = tuple((0, len(o)) for o in self.options)
        counter = itertools.count()
        b0 = self.bound(root)
        explored = 1
        if b0 is None:
            raise self.infeasible()
        heap = [(b0, tuple(r[0] for r in root), next(counter), root)]
        while heap:
            bnd, _, _, ranges = heapq.heappop(heap)
            j = next((k for k, (lo, hi) in enumerate(ranges) if hi - lo > 1), None)
            if j is None:
                return tuple(lo for lo, _ in ranges), explored
            lo, hi = ranges[j]
            mid = (lo + hi) // 2
            for part in ((lo, mid), (mid, hi)):
                child = ranges[:j] + (part,) + ranges[j + 1 :]
                explored += 1
                cb = self.bound(child)
                if cb is not None:
                    heapq.heappush(
                        heap, (cb, tuple(r[0] for r in child), next(counter), child)
                    )
        raise self.infeasible()

    def infeasible(self) -> InfeasibleError:
        home = self.problem.home
        fixed = home.fixed_load.values
        for a in self.apps:
            ok = any(
                np.all(fixed[list(o)] + a.power_kw <= home.service_limit_kw + 1e-9)
                for o in a.options()
            )
            if not ok:
                return InfeasibleError(
                    "service_limit",
                    f"{home.id}/{a.name} cannot run inside its window under "
                    f"the {home.service_limit_kw} kW service limit",
                )
        if self.problem.islanded and self.problem.p2p_price is None:
            return InfeasibleError(
                "islanded_balance",
                f"{home.id} cannot cover its load without the utility",
            )
        return InfeasibleError(
            "service_limit",
            f"{home.id}: no appliance combination fits under the service limit",
        )


# -- response assembly ------------------------------------------------------


def _route(problem: HouseProblem, x_kwh: np.ndarray):
    """Split net purchases between utility and P2P; ties go to the utility."""
    h = problem.grid.step
    pr = _prices(problem)
    tar = problem.tariff
    n = problem.grid.n_steps
    util = np.zeros(n)
    p2p = np.zeros(n)
    curtail = np.zeros(n)
    for t in range(n):
        kw = x_kwh[t] / h
        if kw > 0:
            if pr.p2p is not None and (not pr.utility or pr.p2p[t] < tar.import_rate[t]):
                p2p[t] = kw
            else:
                util[t] = kw
        elif kw < 0:
            if pr.p2p is not None and (not pr.utility or pr.p2p[t] > tar.export_rate[t]):
                p2p[t] = kw
            elif pr.utility:
                util[t] = kw
            else:
                curtail[t] = -kw
    return util, p2p, curtail


def _cost_of(problem: HouseProblem, util, p2p, penalty: float) -> float:
    h = problem.grid.step
    tar = problem.tariff
    rate = np.where(util > 0, tar.import_rate, tar.export_rate)
    total = math.fsum(util * rate * h)
    if problem.p2p_price is not None:
        total += math.fsum(p2p * problem.p2p_price.values * h)
    return total + penalty


def _marginal_values(problem, disp: _Dispatcher, load, dispatch: _Dispatch) -> np.ndarray:
    """Right derivative of the optimal dispatch cost w.r.t. demand at each step."""
    pr = disp.prices
    h = problem.grid.step
    out = np.empty(problem.grid.n_steps)
    for t, x in enumerate(dispatch.x):
        if x > 1e-9:
            out[t] = pr.buy[t]
        elif x < -1e-9:
            out[t] = pr.sell[t]
        else:
            bumped = load.copy()
            eps = 1e-6
            bumped[t] += eps / h
            alt = disp.solve(bumped)
            out[t] = math.inf if alt is None else (alt.cost - dispatch.cost) / eps
    return out


def _respond(problem: HouseProblem, choice, explored: int, modes=None) -> HouseResponse:
    search = _Search(problem)
    disp = search.disp
    load = np.zeros(problem.grid.n_steps)
    steps = []
    penalty = 0.0
    for j, k in enumerate(choice):
        opt = search.options[j][k]
        steps.append(opt)
        load += search.load_of(j, opt)
        penalty += search.apps[j].discomfort_of(opt)
    d = disp.solve(load, modes)
    if d is None:
        raise search.infeasible()
    util, p2p, curtail = _route(problem, d.x)
    h = problem.grid.step
    if disp.bess is not None:
        cmd = np.where(d.delta > 0, d.delta * disp.a_c / h, d.delta / h)
        soc = disp.soc0 + np.concatenate([[0.0], np.cumsum(d.delta)])
        soc = np.clip(soc, 0.0, disp.cap)
    else:
        cmd = np.zeros(problem.grid.n_steps)
        soc = np.zeros(problem.grid.n_steps + 1)
    modes_out = tuple(
        "charge" if c > 0 else "discharge" if c < 0 else (modes[t] if modes else "idle")
        for t, c in enumerate(cmd)
    )
    for arr in (cmd, soc, util, p2p, curtail, load):
        arr.flags.writeable = False
    sched = Schedule(tuple(steps), cmd, modes_out, soc, util, p2p, curtail, load)
    injection = TimeSeries(problem.grid, -(util + p2p))
    mv = _marginal_values(problem, disp, load, d)
    mv = np.where(np.isfinite(mv), mv, np.nan)
    return HouseResponse(
        home_id=problem.home.id,
        schedule=sched,
        injection=injection,
        cost=_cost_of(problem, util, p2p, penalty),
        marginal_value=TimeSeries(problem.grid, np.nan_to_num(mv, nan=0.0)),
        nodes_explored=explored,
    )


def solve_house(problem: HouseProblem) -> HouseResponse:
    """Cost-minimising schedule by best-first branch-and-bound."""
    choice, explored = _Search(problem).run()
    return _respond(problem, choice, explored)


def brute_force_house(problem: HouseProblem) -> HouseResponse:
    """Exhaustive search over every integer assignment (small instances only)."""
    nb = problem.binary_count
    if nb > BRUTE_FORCE_MAX_BINARIES:
        raise UsageError(
            f"brute force handles at most {BRUTE_FORCE_MAX_BINARIES} binaries, got {nb}"
        )
    search = _Search(problem)
    disp = search.disp
    n = problem.grid.n_steps
    mode_sets = (
        itertools.product(("charge", "discharge"), repeat=n)
        if disp.bess is not None
        else [None]
    )
    mode_sets = list(mode_sets)
    best = None
    count = 0
    for choice in itertools.product(*(range(len(o)) for o in search.options)):
        load = np.zeros(n)
        pen = 0.0
        for j, k in enumerate(choice):
            opt = search.options[j][k]
            load += search.load_of(j, opt)
            pen += search.apps[j].discomfort_of(opt)
        if np.any(disp.fixed + load > disp.limit + 1e-9):
            continue
        for modes in mode_sets:
            count += 1
            d = disp.solve(load, modes)
            if d is None:
                continue
            if best is None or d.cost + pen < best[0]:
                best = (d.cost + pen, choice, modes)
    if best is None:
        raise search.infeasible()
    return _respond(problem, best[1], count, best[2])


def check_price_band(problem: HouseProblem, price: TimeSeries) -> None:
    tar = problem.tariff
    p = price.values
    low = p < tar.export_rate - BAND_TOL
    high = p > tar.import_rate + BAND_TOL
    if np.any(low | high):
        t = int(np.argmax(low | high))
        raise PriceRejectedError(
            f"{problem.home.id}: P2P price {p[t]:.6f} at step {t} is outside "
            f"[{tar.export_rate[t]:.6f}, {tar.import_rate[t]:.6f}]"
        )


def respond_to_price(problem: HouseProblem, p2p_price: TimeSeries) -> HouseResponse:
    """Best response of one home to a community P2P price."""
    check_price_band(problem, p2p_price)
    return solve_house(problem.with_price(p2p_price))


__all__ = [
    "HouseProblem",
    "HouseResponse",
    "Schedule",
    "brute_force_house",
    "check_price_band",
    "respond_to_price",
    "solve_house",
]
