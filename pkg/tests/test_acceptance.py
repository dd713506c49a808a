"""End-to-end acceptance checks, one per criterion, each printing PASS or FAIL.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
"""

import math
import time

import numpy as np
import pytest
from builders import random_problem
from test_dcgrid import incidence_oracle

from transactive_sim.cli import main
from transactive_sim.dcgrid import GridTopology, Line, Node, NodeKind, solve_flows
from transactive_sim.economics import (
    CashflowSchedule,
    discounted_payback,
    npv,
    run_case_study,
    simple_payback,
)
from transactive_sim.errors import SimError
from transactive_sim.house import brute_force_house, respond_to_price, solve_house
from transactive_sim.market import run_market
from transactive_sim.scenario import (
    _problems,
    bundled_scenario,
    load_config,
    net_load_curve,
    simulate_horizon,
)


def verdict(number, checks):
    """Print one line for the criterion and fail with the names of broken checks."""
    failed = [name for name, ok in checks.items() if not ok]
    status = "PASS" if not failed else "FAIL"
    print(f"\ncriterion {number}: {status}" + (f" ({', '.join(failed)})" if failed else ""))
    assert not failed, failed


def oracle_payback(cost, benefit, rate, horizon=40):
    total = 0.0
    for year in range(1, horizon + 1):
        total += benefit / (1 + rate) ** year
        if total >= cost:
            return year
    return None


def test_criterion_1_case1():
    t0 = time.perf_counter()
    rep = run_case_study(1)
    elapsed = time.perf_counter() - t0
    d = rep.derived
    verdict(1, {
        "energy 37.8 kWh": abs(d["daily_energy_kwh"] - 37.8) < 1e-9,
        "revenue within $0.10 of $9.00": abs(d["daily_revenue"] - 9.00) <= 0.10,
        "annual within 2% of $2250": abs(d["annual_benefit"] - 2250) / 2250 <= 0.02,
        "simple payback within 0.1 of 4.5": abs(rep.simple_payback_years - 4.5) <= 0.1,
        "discounted payback 6 at 8%": rep.discounted_payback_years[0.08] == 6,
        "runtime < 1 s": elapsed < 1.0,
    })  # fmt: skip


def test_criterion_2_case2():
    t0 = time.perf_counter()
    rep = run_case_study(2)
    elapsed = time.perf_counter() - t0
    d = rep.derived
    annual = d["daily_benefit"] * 365
    verdict(2, {
        "charge time within 0.05 of 2.4 h": abs(d["charge_time_h"] - 2.4) <= 0.05,
        "arbitrage within $0.10 of $3.50": abs(d["daily_arbitrage"] - 3.50) <= 0.10,
        "payback within 5 of 3430 days": abs(d["simple_payback_days"] - 3430) <= 5,
        "5% within 1 yr of 14": abs(rep.discounted_payback_years[0.05] - 14) <= 1,
        "8% within 1 yr of 20": abs(rep.discounted_payback_years[0.08] - 20) <= 1,
        "5% matches cumulative oracle":
            rep.discounted_payback_years[0.05] == oracle_payback(rep.cost - 10212, annual, 0.05),
        "8% matches cumulative oracle":
            rep.discounted_payback_years[0.08] == oracle_payback(rep.cost - 10212, annual, 0.08),
        "runtime < 1 s": elapsed < 1.0,
    })  # fmt: skip


def test_criterion_3_case3():
    rep = run_case_study(3)
    units = np.linspace(1500, 100, 15)
    paybacks = [
        run_case_study(3, {"storage_cost_per_kwh": u}).derived["discounted_payback_fractional"]
        for u in units
    ]
    verdict(3, {
        "cost > $100,000": rep.cost > 100_000,
        "goal echoed": rep.derived["goal"].startswith("<6"),
        "payback finite": all(p is not None for p in paybacks),
        "cheaper storage pays back sooner": all(b < a for a, b in zip(paybacks, paybacks[1:])),
    })  # fmt: skip


def test_criterion_4_optimizer_oracle():
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    while count < 500:
        prob = random_problem(rng, max_binaries=12)
        try:
            fast = solve_house(prob)
        except SimError as exc:  # infeasible instances must fail in both
            with pytest.raises(type(exc)):
                brute_force_house(prob)
            continue
        slow = brute_force_house(prob)
        worst = max(worst, abs(fast.cost - slow.cost))
        count += 1
    elapsed = time.perf_counter() - t0
    verdict(4, {"costs equal to 1e-9": worst <= 1e-9, "runtime < 60 s": elapsed < 60})


def random_tree(rng, loss):
    n = int(rng.integers(2, 9))
    ids = ["U"] + [f"n{i}" for i in range(1, n)]
    order = [ids[i] for i in rng.permutation(n)]
    lines = []
    for k in range(1, n):
        parent, child = order[int(rng.integers(0, k))], order[k]
        a, b = (child, parent) if rng.random() < 0.5 else (parent, child)
        lines.append(Line(a, b, 1e6, float(rng.uniform(0, 0.002)) if loss else 0.0))
    nodes = tuple(Node(i, NodeKind.UTILITY if i == "U" else NodeKind.HOME) for i in ids)
    inj = {i: float(rng.uniform(-20, 20)) for i in ids if i != "U"}
    return GridTopology(nodes, tuple(lines)), inj


def test_criterion_5_kcl():
    rng = np.random.default_rng(5)
    worst_flow = worst_balance = 0.0
    for _ in range(1000):
        topo, inj = random_tree(rng, loss=False)
        sol = solve_flows(topo, inj)
        ref = incidence_oracle(topo, inj)
        got = np.array([sol.line_flows[ln.name] for ln in topo.lines])
        worst_flow = max(worst_flow, float(np.max(np.abs(got - ref))))
        for t in (topo, random_tree(rng, loss=True)[0]):
            inj_t = {n.id: float(rng.uniform(-20, 20)) for n in t.nodes if n.id != "U"}
            s = solve_flows(t, inj_t)
            balance = math.fsum(inj_t.values()) + s.slack_injection_kw - s.losses_kw
            worst_balance = max(worst_balance, abs(balance))
    verdict(5, {
        "flows match incidence solve to 1e-9 kW": worst_flow <= 1e-9,
        "injections + slack - losses = 0": worst_balance <= 1e-9,
    })  # fmt: skip


def market_checks(name):
    cfg = load_config(bundled_scenario(name))
    probs = _problems(cfg, frozenset())
    res = run_market(probs, cfg.topology, cfg.market)
    by_id = {r.home_id: r for r in res.responses}
    drift = max(
        float(np.max(np.abs(respond_to_price(p, res.price.prices).injection.values
                            - by_id[p.home.id].injection.values)))
        for p in probs
    )  # fmt: skip
    rational = all(
        res.settlement.total_cost(p.home.id) <= solve_house(p).cost + 1e-9 for p in probs
    )
    return {
        f"{name} converged": res.converged,
        f"{name} imbalance < 1e-6 kW": res.max_residual_kw < 1e-6,
        f"{name} fixed point": drift < 1e-6,
        f"{name} individually rational": rational,
        f"{name} peer payments sum to zero":
            float(np.max(np.abs(res.settlement.peer_payment_sums()))) < 1e-9,
    }  # fmt: skip


def test_criterion_6_market():
    verdict(6, {**market_checks("p2p2"), **market_checks("p2p5")})


def test_criterion_7_duck_curve():
    cfg = load_config(bundled_scenario("duckcurve"))
    with_bess = net_load_curve(simulate_horizon(cfg), 0)
    without = net_load_curve(simulate_horizon(cfg.without_storage()), 0)
    ramp_with = with_bess.at_hour(18) - with_bess.at_hour(15)
    ramp_without = without.at_hour(18) - without.at_hour(15)
    verdict(7, {
        "15:00 below 09:00": with_bess.at_hour(15) < with_bess.at_hour(9),
        "BESS shrinks the 15:00-18:00 ramp": ramp_with < ramp_without,
    })  # fmt: skip


def test_criterion_8_determinism(tmp_path, capsys):
    scn = str(bundled_scenario("duckcurve"))

    def run(tag, *extra):
        out = tmp_path / tag
        assert main(["simulate", scn, "--out", str(out), "--verbose", "--seed", "3", *extra]) in (0, 2)
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    a, b, c = run("a"), run("b"), run("c", "--workers", "4")
    capsys.readouterr()
    verdict(8, {"repeat runs identical": a == b, "worker count irrelevant": a == c})


def test_criterion_9_npv():
    rng = np.random.default_rng(9)
    exact = ceil_ok = monotone = True
    for _ in range(100):
        cost = float(rng.uniform(0, 50_000))
        benefit = float(rng.uniform(1, 10_000))
        sched = CashflowSchedule(cost, benefit, int(rng.integers(1, 60)))
        cfs = sched.cashflows()
        exact &= npv(cfs, 0) == math.fsum(cfs)
        want = math.ceil(simple_payback(sched))
        ceil_ok &= discounted_payback(sched, 0) == (want if want <= sched.horizon_years else None)
        years = [discounted_payback(sched, r) for r in np.linspace(0, 0.2, 21)]
        reached = [y for y in years if y is not None]
        monotone &= reached == sorted(reached) and years[: len(reached)] == reached
    verdict(9, {
        "npv at rate 0 is the sum": exact,
        "rate-0 payback = ceil(simple)": ceil_ok,
        "payback monotone in rate": monotone,
    })  # fmt: skip
