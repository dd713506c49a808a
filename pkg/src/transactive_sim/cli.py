"""Command-line front end: ``transactive-sim <command> ...``.

Exit codes: 0 success, 1 usage or schema error, 2 simulation-level problem
(congestion, non-convergence) with reports still written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .economics import run_case_study, table1_csv
from .errors import ConfigError, SimError, UsageError
from .scenario import ScenarioConfig, SimulationResult, load_config, net_load_curve, simulate_horizon

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SIMULATION = 2

TIMESERIES_COLUMNS = (
    "day", "hour", "kind", "id", "injection_kw", "price_per_kwh", "flow_kw", "slack_kw",
)  # fmt: skip
CONVERGENCE_COLUMNS = ("day", "iteration", "max_imbalance_kw", "price_min", "price_max")


def fmt(x: float) -> str:
    """Six-decimal rendering without a negative zero."""
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _round(x):
    if isinstance(x, float):
        return float(fmt(x))
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return x


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="transactive-sim", description="Neighborhood transactive energy simulator.")
    p.add_argument(
        "--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"), type=str.upper
    )
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sim = sub.add_parser("simulate", help="run every day of a scenario")
    sim.add_argument("scenario")
    sim.add_argument("--out", default="out", help="output directory (created if absent)")
    sim.add_argument("--verbose", action="store_true", help="also write convergence.csv")
    sim.add_argument("--seed", type=int, help="override the scenario seed")
    sim.add_argument("--workers", type=int, default=1, help="worker processes for distinct days")

    case = sub.add_parser("case-study", help="cost-benefit report for case 1, 2 or 3")
    case.add_argument("case", type=int, choices=(1, 2, 3))
    case.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a parameter"
    )
    case.add_argument("--out", help="directory for table1.csv and report.json")

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("scenario")

    duck = sub.add_parser("duck-curve", help="net load at the utility node as hour,kW CSV")
    duck.add_argument("scenario")
    duck.add_argument("--day", type=int, default=0)
    duck.add_argument("--seed", type=int, help="override the scenario seed")
    duck.add_argument("--out", help="write the CSV here instead of stdout")
    return p


def _styled(text: str, code: str, stream) -> str:
    if os.environ.get("NO_COLOR") is not None or not getattr(stream, "isatty", lambda: False)():
        return text
    return f"\033[{code}m{text}\033[0m"


def _report_error(code: str, message: str) -> None:
    # One line per error so the output stays greppable.
    line = " ".join(str(message).split())
    print(f"{_styled(f'error[{code}]', '1;31', sys.stderr)}: {line}", file=sys.stderr)


def _warn(message: str) -> None:
    print(f"{_styled('warning', '1;33', sys.stderr)}: {message}", file=sys.stderr)


def _load(path: str, seed: int | None) -> ScenarioConfig:
    cfg = load_config(path)
    return cfg if seed is None else cfg.with_seed(seed)


def timeseries_csv(result: SimulationResult) -> str:
    grid = result.config.grid
    topo = result.config.topology
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMESERIES_COLUMNS)
    hours = grid.hours()
    for d, day in enumerate(result.days):
        flows = day.market.flows if day.market is not None else [None] * grid.n_steps
        for t in range(grid.n_steps):
            hour = fmt(float(hours[t]))
            price = fmt(float(day.prices[t]))
            for r in sorted(day.responses, key=lambda r: r.home_id):
                w.writerow((d, hour, "node", r.home_id, fmt(float(r.injection.values[t])), price, "", ""))
            sol = flows[t]
            for line in topo.lines:
                flow = "" if sol is None else fmt(sol.line_flows[line.name])
                w.writerow((d, hour, "line", line.name, "", "", flow, ""))
            w.writerow((d, hour, "slack", topo.slack.id, "", price, "", fmt(float(day.net_load_kw[t]))))
    return buf.getvalue()


def convergence_csv(result: SimulationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONVERGENCE_COLUMNS)
    for d, day in enumerate(result.days):
        if day.market is None:
            continue
        for row in day.market.trace:
            w.writerow(
                (d, row.iteration, fmt(row.max_imbalance_kw), fmt(row.price_min), fmt(row.price_max))
            )
    return buf.getvalue()


def summary(result: SimulationResult) -> dict:
    cfg = result.config
    annual = result.annual()
    homes = {}
    for hid, vals in annual.items():
        bought = sold = 0.0
        for day in result.days:
            led = day.settlement.homes.get(hid)
            if led is not None:
                bought += float(led.p2p_bought_kwh.sum())
                sold += float(led.p2p_sold_kwh.sum())
        homes[hid] = dict(vals, p2p_bought_kwh=bought, p2p_sold_kwh=sold)
    markets = [d.market for d in result.days if d.market is not None]
    trace = result.events
    return _round(
        {
            "scenario": cfg.name,
            "seed": cfg.seed,
            "horizon_days": cfg.horizon_days,
            "homes": homes,
            "market": {
                "days_run": len(markets),
                "days_converged": sum(m.converged for m in markets),
                "max_iterations": max((m.iterations for m in markets), default=0),
                "max_residual_kw": max((m.max_residual_kw for m in markets), default=0.0),
            },
            "events": {
                "solar_inverter_outage": trace.count("solar_inverter_outage"),
                "p2p_network_outage": trace.count("p2p_network_outage"),
            },
            "issues": result.issues,
        }
    )


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    cfg = _load(args.scenario, args.seed)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    result = simulate_horizon(cfg, workers=args.workers)
    out = Path(args.out)
    _write(out / "summary.json", json.dumps(summary(result), indent=2, sort_keys=True) + "\n")
    _write(out / "timeseries.csv", timeseries_csv(result))
    if args.verbose:
        _write(out / "convergence.csv", convergence_csv(result))
    for hid, vals in result.annual().items():
        print(f"{hid}: cost {fmt(vals['cost'])} benefit {fmt(vals['benefit'])}")
    for issue in result.issues:
        code = issue.split(": ", 2)[1] if issue.count(": ") >= 2 else "E_SIM"
        _report_error(code, issue)
    print(f"wrote {out}")
    return EXIT_SIMULATION if result.issues else EXIT_OK


def _parse_sets(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def cmd_case_study(args) -> int:
    report = run_case_study(args.case, _parse_sets(args.set))
    table = table1_csv([report])
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        _write(out / "table1.csv", table)
        _write(out / "report.json", report.to_json() + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    load_config(args.scenario)
    print("OK")
    return EXIT_OK


def cmd_duck_curve(args) -> int:
    cfg = _load(args.scenario, args.seed)
    if not 0 <= args.day < cfg.horizon_days:
        raise UsageError(f"--day {args.day} outside the {cfg.horizon_days}-day horizon")
    # Only days up to the requested one are needed.
    result = simulate_horizon(replace(cfg, horizon_days=args.day + 1))
    curve = net_load_curve(result, args.day)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("hour", "kw"))
    for h, v in zip(curve.grid.hours(), curve.values):
        w.writerow((fmt(float(h)), fmt(float(v))))
    if args.out:
        _write(Path(args.out), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    for issue in result.issues:
        _warn(issue)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "case-study": cmd_case_study,
    "validate": cmd_validate,
    "duck-curve": cmd_duck_curve,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for msg in exc.errors:
            _report_error(exc.code, msg)
        return EXIT_USAGE
    except UsageError as exc:
        _report_error(exc.code, exc)
        return EXIT_USAGE
    except SimError as exc:
        _report_error(exc.code, exc)
        return EXIT_SIMULATION
    except OSError as exc:
        _report_error("E_IO", exc)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
