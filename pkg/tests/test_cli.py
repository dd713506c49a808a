import csv
import io
import json
import subprocess
import sys

import pytest

from transactive_sim.cli import fmt, main

SCN = "src/transactive_sim/scenarios"


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_fmt_has_no_negative_zero():
    assert fmt(-1e-9) == "0.000000"
    assert fmt(1.5) == "1.500000"


def test_validate(capsys):
    code, out, _ = run(["validate", "examples/case1.scn"], capsys)
    assert (code, out) == (0, "OK\n")


def test_validate_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text('name = "x"\nseed = 1\nwat = 2\n')
    code, _, err = run(["validate", str(bad)], capsys)
    assert code == 1
    lines = err.strip().splitlines()
    assert len(lines) >= 2
    assert all(line.startswith("error[E_") for line in lines)


@pytest.mark.parametrize(
    "case, row",
    [("1", "1,10212.000000,8,6"), ("2", "2,22212.000000,5;8,13;19")],
)
def test_case_study(case, row, capsys, tmp_path):
    code, out, _ = run(["case-study", case, "--out", str(tmp_path)], capsys)
    assert code == 0
    assert out.splitlines()[1] == row
    assert (tmp_path / "table1.csv").read_text() == out
    assert json.loads((tmp_path / "report.json").read_text())["case_id"] == int(case)


def test_case_study_override(capsys):
    code, out, _ = run(["case-study", "3", "--set", "storage_cost_per_kwh=500"], capsys)
    assert code == 0
    assert out.splitlines()[1].startswith("3,149370.000000")


def test_case_study_no_payback_exits_two(capsys):
    code, _, err = run(["case-study", "1", "--set", "sunny_days=0"], capsys)
    assert code == 2
    assert err.startswith("error[")


@pytest.mark.parametrize(
    "argv",
    [["frobnicate"], ["case-study", "1", "--set", "bogus=1"], ["case-study", "1", "--set", "x"]],
)
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert err.startswith("error[E_USAGE]: ")
    assert len(err.strip().splitlines()) == 1


def test_no_color_on_pipes(capsys, monkeypatch):
    monkeypatch.setenv("NO_COLOR", "1")
    _, _, err = run(["frobnicate"], capsys)
    assert "\033[" not in err


def _simulate(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["simulate", f"{SCN}/p2p5.scn", "--out", str(out), "--verbose", *extra]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_simulate_deterministic(tmp_path, capsys):
    a = _simulate(tmp_path, "a")
    b = _simulate(tmp_path, "b")
    c = _simulate(tmp_path, "c", "--workers", "3")
    assert set(a) == {"summary.json", "timeseries.csv", "convergence.csv"}
    assert a == b == c


def test_simulate_outputs(tmp_path, capsys):
    files = _simulate(tmp_path, "o")
    summary = json.loads(files["summary.json"])
    assert summary["market"]["days_converged"] == 1
    assert set(summary["homes"]) == {"h1", "h2", "h3", "h4", "h5"}
    rows = list(csv.DictReader(io.StringIO(files["timeseries.csv"].decode())))
    assert {r["kind"] for r in rows} == {"node", "line", "slack"}
    assert "-0.000000" not in files["timeseries.csv"].decode()


def test_simulate_bad_workers(tmp_path, capsys):
    code, _, err = run(["simulate", f"{SCN}/p2p2.scn", "--out", str(tmp_path), "--workers", "0"], capsys)
    assert code == 1


def test_duck_curve(tmp_path, capsys):
    code, out, _ = run(["duck-curve", f"{SCN}/duckcurve.scn"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["hour", "kw"]
    kw = {float(h): float(v) for h, v in rows[1:]}
    assert len(kw) == 24
    assert kw[15.0] < kw[9.0]
    target = tmp_path / "duck.csv"
    assert main(["duck-curve", f"{SCN}/duckcurve.scn", "--out", str(target)]) == 0
    assert target.read_text() == out


def test_duck_curve_day_out_of_range(capsys):
    code, _, err = run(["duck-curve", f"{SCN}/duckcurve.scn", "--day", "5"], capsys)
    assert code == 1
    assert "error[E_USAGE]" in err


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "transactive_sim", "validate", f"{SCN}/p2p2.scn"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout == "OK\n"
