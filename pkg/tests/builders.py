"""Random instance generators and independent oracles shared by the tests."""

import numpy as np
from scipy.optimize import linprog

from transactive_sim.core import TariffKind, TariffSchedule, TimeGrid, TimeSeries
from transactive_sim.devices import Appliance, BessSpec, HomeSpec, SolarArraySpec
from transactive_sim.house import HouseProblem


def random_problem(rng: np.random.Generator, max_binaries: int = 12, appliances: bool = True):
    """A small random house problem with at most ``max_binaries`` integer choices."""
    while True:
        n = int(rng.integers(2, 9))
        step = float(rng.choice([0.5, 1.0]))
        grid = TimeGrid(8.0, step, n)
        imp = rng.uniform(0.05, 0.40, n).round(3)
        exp = (imp * rng.uniform(0, 1, n)).round(3)
        tariff = TariffSchedule(TariffKind.TIME_OF_USE, grid, imp, exp)
        load = TimeSeries(grid, rng.uniform(0, 3, n).round(2))
        solar = None
        if rng.random() < 0.5:
            solar = SolarArraySpec(measured=TimeSeries(grid, rng.uniform(0, 5, n).round(2)))
        bess, soc0 = None, 0.0
        if rng.random() < 0.5:
            cap = float(rng.uniform(1, 10))
            bess = BessSpec(cap, float(rng.uniform(0.5, 4)), float(rng.uniform(0.7, 1.0)), bool(rng.random() < 0.7))
            soc0 = float(rng.uniform(0, cap))
        apps = []
        if appliances:
            for k in range(int(rng.integers(0, 3))):
                d = int(rng.integers(1, 3))
                lo = int(rng.integers(0, n - d + 1))
                hi = int(rng.integers(lo + d - 1, n))
                pen = tuple(rng.uniform(0, 0.2, n).round(3)) if rng.random() < 0.3 else ()
                apps.append(
                    Appliance(f"a{k}", float(rng.uniform(0.5, 5)), d, (lo, hi), bool(rng.random() < 0.3), pen)
                )
        limit = float(rng.choice([24.0, 24.0, 6.0]))
        if float(load.values.max()) > limit:
            continue
        home = HomeSpec("h", load, tuple(apps), solar, bess, limit, soc0)
        price = None
        if rng.random() < 0.5:
            price = TimeSeries(grid, (exp + (imp - exp) * rng.uniform(0, 1, n)).round(4))
        islanded = price is not None and rng.random() < 0.2
        prob = HouseProblem(home, grid, tariff, price, islanded)
        if prob.binary_count <= max_binaries:
            return prob


def lp_dispatch_cost(problem: HouseProblem, app_load=None) -> float | None:
    """Optimal continuous cost for fixed appliance load, by a general LP solver.

    Variables per step: buy, sell, charge (bus side), drawn (cell side) and
    the state of charge after the step. Returns None when infeasible.
    """
    grid = problem.grid
    n, h = grid.n_steps, grid.step
    home = problem.home
    app = np.zeros(n) if app_load is None else np.asarray(app_load, float)
    net = home.fixed_load.values + app - home.solar_output().values
    tar = problem.tariff
    p2p = problem.p2p_price.values if problem.p2p_price is not None else None
    if problem.islanded:
        buy = np.full(n, np.inf) if p2p is None else p2p.copy()
        sell = np.zeros(n) if p2p is None else np.maximum(p2p, 0)
    else:
        buy = tar.import_rate if p2p is None else np.minimum(tar.import_rate, p2p)
        sell = tar.export_rate if p2p is None else np.maximum(tar.export_rate, p2p)
    b = home.bess
    nv = 5 * n
    ib, is_, ic, idr, isoc = (np.arange(n) + k * n for k in range(5))
    c = np.zeros(nv)
    c[ib] = np.where(np.isfinite(buy), buy, 0) * h
    c[is_] = -sell * h
    bounds = []
    for t in range(n):
        bounds.append((0, None if np.isfinite(buy[t]) else 0))
    bounds += [(0, None)] * n
    if b is None:
        bounds += [(0, 0)] * n + [(0, 0)] * n + [(0, 0)] * n
    else:
        cap_lo = home.bess_initial_soc_kwh if grid.multi_day else 0.0
        bounds += [(0, b.continuous_power_kw)] * n + [(0, b.continuous_power_kw)] * n
        bounds += [(0, b.capacity_kwh)] * (n - 1) + [(cap_lo, b.capacity_kwh)]
    a_eq, b_eq = [], []
    for t in range(n):
        row = np.zeros(nv)
        # buy - sell - charge + eta_d * drawn = net demand
        row[ib[t]], row[is_[t]], row[ic[t]] = 1, -1, -1
        if b is not None:
            row[idr[t]] = b.discharge_efficiency
        a_eq.append(row)
        b_eq.append(net[t])
        if b is not None:
            row = np.zeros(nv)
            row[isoc[t]] = 1
            row[ic[t]] = -b.charge_efficiency * h
            row[idr[t]] = h
            if t > 0:
                row[isoc[t - 1]] = -1
            a_eq.append(row)
            b_eq.append(home.bess_initial_soc_kwh if t == 0 else 0.0)
    a_ub, b_ub = [], []
    for t in range(n):
        row = np.zeros(nv)
        row[ic[t]] = 1
        a_ub.append(row)
        b_ub.append(home.service_limit_kw - home.fixed_load.values[t] - app[t])
    res = linprog(c, A_ub=np.array(a_ub), b_ub=b_ub, A_eq=np.array(a_eq), b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return None
    assert res.status == 0, res.message
    return float(res.fun)
