import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transactive_sim.dcgrid import (
    GridTopology,
    Line,
    Node,
    NodeKind,
    kcl_residuals,
    solve_flows,
    validate_topology,
)
from transactive_sim.errors import LineLimitError, NumericError, UsageError

U = Node("U", NodeKind.UTILITY)


def path(cap=10.0, loss=0.0):
    return GridTopology(
        (Node("A"), Node("B"), U),
        (Line("A", "B", cap, loss), Line("B", "U", cap, loss)),
    )


def incidence_oracle(topo, inj):
    """Direct solve of the reduced incidence system A f = p on a tree."""
    ids = [n.id for n in topo.nodes]
    a = np.zeros((len(ids), len(topo.lines)))
    for j, ln in enumerate(topo.lines):
        a[ids.index(ln.from_node), j] = 1.0
        a[ids.index(ln.to_node), j] = -1.0
    keep = [i for i, nid in enumerate(ids) if nid != topo.slack.id]
    p = np.array([inj.get(ids[i], 0.0) for i in keep])
    return np.linalg.solve(a[keep], p)


@st.composite
def trees(draw, max_nodes=8):
    n = draw(st.integers(2, max_nodes))
    ids = ["U"] + [f"n{i}" for i in range(1, n)]
    order = draw(st.permutations(ids))
    lines = []
    for k in range(1, n):
        parent = order[draw(st.integers(0, k - 1))]
        child = order[k]
        a, b = (child, parent) if draw(st.booleans()) else (parent, child)
        lines.append(Line(a, b, 1e6))
    nodes = tuple(Node(i, NodeKind.UTILITY if i == "U" else NodeKind.HOME) for i in ids)
    inj = {i: draw(st.floats(-20, 20)) for i in ids if i != "U"}
    return GridTopology(nodes, tuple(lines)), inj


class TestValidate:
    def test_path_ok(self):
        assert validate_topology(path()) == []

    def test_missing_slack(self):
        topo = GridTopology((Node("A"), Node("B")), (Line("A", "B", 1),))
        assert any("missing slack" in d for d in validate_topology(topo))

    def test_disconnected_home(self):
        topo = GridTopology((Node("A"), Node("B"), U), (Line("A", "U", 1),))
        assert any("disconnected" in d and "'B'" in d for d in validate_topology(topo))

    def test_collects_everything(self):
        topo = GridTopology(
            (Node("A"), Node("A"), U, Node("V", NodeKind.UTILITY)),
            (Line("A", "A", 1), Line("A", "U", 0), Line("A", "Z", 1)),
        )
        defects = " | ".join(validate_topology(topo))
        for word in ("duplicate", "multiple slack", "self-loop", "nonpositive", "unknown node"):
            assert word in defects


class TestSolve:
    def test_local_balance(self):
        sol = solve_flows(path(), {"A": 2.0, "B": -2.0})
        assert sol.line_flows == {"A-B": 2.0, "B-U": 0.0}
        assert sol.slack_injection_kw == 0.0

    def test_single_exporter(self):
        topo = GridTopology((Node("A"), U), (Line("A", "U", 10),))
        assert solve_flows(topo, {"A": 5.0}).slack_injection_kw == -5.0

    def test_star_matches_oracle(self):
        hub = Node("hub", NodeKind.JUNCTION)
        topo = GridTopology(
            (Node("a"), Node("b"), Node("c"), hub, U),
            (Line("a", "hub", 10), Line("b", "hub", 10), Line("c", "hub", 10), Line("hub", "U", 10)),
        )
        inj = {"a": 3.0, "b": -1.0, "c": -1.0}
        sol = solve_flows(topo, inj)
        assert sol.slack_injection_kw == pytest.approx(-1.0)
        np.testing.assert_allclose(
            list(sol.line_flows.values()), incidence_oracle(topo, inj), atol=1e-12
        )

    def test_line_limit(self):
        topo = GridTopology((Node("A"), Node("B"), U), (Line("A", "B", 1), Line("B", "U", 10)))
        with pytest.raises(LineLimitError) as err:
            solve_flows(topo, {"A": 2.0, "B": -2.0})
        assert err.value.line == "A-B"
        assert err.value.overload_kw == pytest.approx(1.0)

    def test_utility_cap(self):
        topo = GridTopology((Node("A"), U), (Line("A", "U", 10),), utility_cap_kw=0.0)
        with pytest.raises(LineLimitError):
            solve_flows(topo, {"A": -1.0})

    def test_invalid_topology(self):
        with pytest.raises(UsageError):
            solve_flows(GridTopology((Node("A"),), ()), {})

    def test_lossy_balance(self):
        sol = solve_flows(path(loss=0.01), {"A": 4.0, "B": -1.0})
        assert sol.losses_kw > 0
        assert 4.0 - 1.0 + sol.slack_injection_kw - sol.losses_kw == pytest.approx(0, abs=1e-9)
        res = kcl_residuals(path(loss=0.01), sol)
        assert max(abs(v) for k, v in res.items() if k != "U") < 1e-8

    def test_runaway_losses(self):
        with pytest.raises(NumericError):
            solve_flows(path(cap=1e9, loss=1.0), {"A": 10.0})

    def test_mesh_splits_by_capacity(self):
        topo = GridTopology(
            (Node("A"), Node("B"), U),
            (Line("A", "U", 30), Line("A", "B", 10), Line("B", "U", 10)),
        )
        sol = solve_flows(topo, {"A": 6.0})
        # Series A-B-U behaves like one line of capacity 5 against the direct 30.
        assert sol.line_flows["A-U"] == pytest.approx(6 * 30 / 35)
        assert sol.line_flows["A-B"] == pytest.approx(6 * 5 / 35)
        res = kcl_residuals(topo, sol)
        assert max(abs(v) for v in res.values()) < 1e-9

    @given(trees())
    def test_radial_matches_incidence_solve(self, case):
        topo, inj = case
        sol = solve_flows(topo, inj)
        np.testing.assert_allclose(
            [sol.line_flows[ln.name] for ln in topo.lines], incidence_oracle(topo, inj), atol=1e-9
        )
        assert sum(inj.values()) + sol.slack_injection_kw - sol.losses_kw == pytest.approx(0, abs=1e-9)
        assert sol.losses_kw == 0.0

    @given(trees(), st.floats(0.1, 5))
    def test_lossless_scaling(self, case, k):
        topo, inj = case
        a = solve_flows(topo, inj)
        b = solve_flows(topo, {n: k * v for n, v in inj.items()})
        for name, f in a.line_flows.items():
            assert b.line_flows[name] == pytest.approx(k * f, abs=1e-9)
