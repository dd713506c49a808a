"""Community DC network: topology checks and KCL flow solving.

Flows are in kW, signed positive from ``from`` to ``to``. Node injections
are positive for production. The single utility node is the slack: it
absorbs whatever the rest of the network does not balance.

Radial networks have exactly one KCL solution, found here by accumulating
subtree injections towards the slack. On meshed networks the flows
minimise ``sum(flow**2 / capacity)`` subject to KCL, which is the weighted
minimum-norm solution of the incidence system.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import LineLimitError, NumericError, UsageError

logger = logging.getLogger(__name__)

KCL_TOL = 1e-9
MAX_LOSS_ROUNDS = 100


class NodeKind(str, Enum):
    HOME = "home"
    COMMUNITY_STORAGE = "community_storage"
    UTILITY = "utility"
    JUNCTION = "junction"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind = NodeKind.HOME

    def __post_init__(self):
        object.__setattr__(self, "kind", NodeKind(self.kind))


@dataclass(frozen=True)
class Line:
    from_node: str
    to_node: str
    capacity_kw: float
    loss_coeff: float = 0.0

    @property
    def name(self) -> str:
        return f"{self.from_node}-{self.to_node}"


@dataclass(frozen=True)
class GridTopology:
    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    # None leaves the utility uncapped; 0 islands the community.
    utility_cap_kw: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def slack(self) -> Node:
        utils = [n for n in self.nodes if n.kind is NodeKind.UTILITY]
        if len(utils) != 1:
            raise UsageError("topology needs exactly one utility node")
        return utils[0]

    def line_names(self) -> list[str]:
        return [ln.name for ln in self.lines]

    def is_radial(self) -> bool:
        return len(self.lines) == len(self.nodes) - 1

    def incidence(self) -> np.ndarray:
        """Node-by-line incidence: +1 at the sending end, -1 at the receiving end."""
        index = {nid: i for i, nid in enumerate(self.node_ids)}
        a = np.zeros((len(self.nodes), len(self.lines)))
        for j, ln in enumerate(self.lines):
            a[index[ln.from_node], j] = 1.0
            a[index[ln.to_node], j] = -1.0
        return a


@dataclass(frozen=True)
class FlowSolution:
    line_flows: dict[str, float]
    slack_injection_kw: float
    losses_kw: float = 0.0
    node_injections: dict[str, float] = field(default_factory=dict)


def validate_topology(topo: GridTopology) -> list[str]:
    """All invariant violations of ``topo``; an empty list means valid."""
    defects: list[str] = []
    seen: set[str] = set()
    for n in topo.nodes:
        if n.id in seen:
            defects.append(f"duplicate node id {n.id!r}")
        seen.add(n.id)
    n_util = sum(n.kind is NodeKind.UTILITY for n in topo.nodes)
    if n_util == 0:
        defects.append("missing slack: no utility node")
    elif n_util > 1:
        defects.append(f"multiple slack: {n_util} utility nodes")
    adj: dict[str, set[str]] = {nid: set() for nid in seen}
    for j, ln in enumerate(topo.lines):
        where = f"line {j} ({ln.name})"
        if not ln.capacity_kw > 0:
            defects.append(f"nonpositive capacity on {where}")
        if ln.loss_coeff < 0:
            defects.append(f"negative loss coefficient on {where}")
        if ln.from_node == ln.to_node:
            defects.append(f"self-loop on {where}")
        missing = [x for x in (ln.from_node, ln.to_node) if x not in seen]
        if missing:
            defects.append(f"unknown node {missing[0]!r} on {where}")
            continue
        adj[ln.from_node].add(ln.to_node)
        adj[ln.to_node].add(ln.from_node)
    if topo.utility_cap_kw is not None and topo.utility_cap_kw < 0:
        defects.append("negative utility cap")
    if seen:
        roots = [n.id for n in topo.nodes if n.kind is NodeKind.UTILITY] or [topo.nodes[0].id]
        reached = {roots[0]}
        queue = deque(reached)
        while queue:
            for nb in adj[queue.popleft()]:
                if nb not in reached:
                    reached.add(nb)
                    queue.append(nb)
        for n in topo.nodes:
            if n.id not in reached:
                defects.append(f"disconnected: node {n.id!r} is not reachable from {roots[0]!r}")
    return defects


def _radial_flows(topo: GridTopology, inj: Mapping[str, float], slack: str) -> np.ndarray:
    """Unique KCL flows on a tree: each line carries its subtree's net injection."""
    children: dict[str, list[tuple[int, str]]] = {nid: [] for nid in topo.node_ids}
    for j, ln in enumerate(topo.lines):
        children[ln.from_node].append((j, ln.to_node))
        children[ln.to_node].append((j, ln.from_node))
    order, parent_line = [], {}
    seen = {slack}
    queue = deque([slack])
    while queue:
        u = queue.popleft()
        order.append(u)
        for j, v in children[u]:
            if v not in seen:
                seen.add(v)
                parent_line[v] = j
                queue.append(v)
    flows = np.zeros(len(topo.lines))
    subtotal = {nid: inj.get(nid, 0.0) for nid in topo.node_ids}
    for v in reversed(order[1:]):
        j = parent_line[v]
        ln = topo.lines[j]
        # Subtree surplus leaves v through its parent line.
        flows[j] = subtotal[v] if ln.from_node == v else -subtotal[v]
        parent = ln.to_node if ln.from_node == v else ln.from_node
        subtotal[parent] += subtotal[v]
    return flows


def _meshed_flows(topo: GridTopology, inj: Mapping[str, float], slack: str) -> np.ndarray:
    ids = topo.node_ids
    keep = [i for i, nid in enumerate(ids) if nid != slack]
    a = topo.incidence()[keep]
    w = np.array([ln.capacity_kw for ln in topo.lines])
    b = np.array([inj.get(ids[i], 0.0) for i in keep])
    lam = np.linalg.solve((a * w) @ a.T, b)
    return w * (a.T @ lam)


def solve_flows(topo: GridTopology, injections: Mapping[str, float]) -> FlowSolution:
    """Line flows and slack injection for non-slack ``injections`` (kW).

    With lossy lines each line's loss ``loss_coeff * flow**2`` is drawn at
    its receiving end; losses are iterated to a fixed point.
    """
    defects = validate_topology(topo)
    if defects:
        raise UsageError("invalid topology: " + "; ".join(defects))
    slack = topo.slack.id
    unknown = set(injections) - set(topo.node_ids)
    if unknown:
        raise UsageError(f"injections for unknown nodes: {sorted(unknown)}")
    if slack in injections and injections[slack] != 0:
        raise UsageError("the utility node's injection is determined by the solve")
    base = {nid: float(injections.get(nid, 0.0)) for nid in topo.node_ids if nid != slack}
    if not all(np.isfinite(v) for v in base.values()):
        raise UsageError("injections must be finite")
    solver = _radial_flows if topo.is_radial() else _meshed_flows
    coeff = np.array([ln.loss_coeff for ln in topo.lines])
    lossy = bool(np.any(coeff > 0))

    line_losses = np.zeros(len(topo.lines))
    flows = solver(topo, base, slack)
    prev_slack = None
    rounds = 0
    while lossy:
        with np.errstate(over="ignore", invalid="ignore"):
            line_losses = coeff * flows**2
        eff = dict(base)
        for j, ln in enumerate(topo.lines):
            recv = ln.to_node if flows[j] >= 0 else ln.from_node
            if recv != slack:
                eff[recv] -= line_losses[j]
        flows = solver(topo, eff, slack)
        with np.errstate(over="ignore", invalid="ignore"):
            slack_inj = -sum(base.values()) + float(np.sum(coeff * flows**2))
        rounds += 1
        if not np.isfinite(slack_inj):
            raise NumericError(f"loss iteration diverged after {rounds} rounds")
        if prev_slack is not None and abs(slack_inj - prev_slack) < KCL_TOL:
            break
        if rounds >= MAX_LOSS_ROUNDS:
            raise NumericError(
                f"loss iteration did not settle after {MAX_LOSS_ROUNDS} rounds "
                f"(last change {abs(slack_inj - prev_slack):.3e} kW)"
            )
        prev_slack = slack_inj
    line_losses = coeff * flows**2 if lossy else line_losses
    losses = float(np.sum(line_losses))
    slack_inj = -sum(base.values()) + losses

    for j, ln in enumerate(topo.lines):
        if abs(flows[j]) > ln.capacity_kw + KCL_TOL:
            raise LineLimitError(ln.name, float(flows[j]), ln.capacity_kw)
    cap = topo.utility_cap_kw
    if cap is not None and abs(slack_inj) > cap + KCL_TOL:
        raise LineLimitError(
            f"utility:{slack}",
            slack_inj,
            cap,
            f"utility exchange {abs(slack_inj):.6f} kW exceeds its {cap:.6f} kW cap",
        )
    node_inj = dict(base)
    node_inj[slack] = slack_inj
    return FlowSolution(
        line_flows={ln.name: float(f) for ln, f in zip(topo.lines, flows)},
        slack_injection_kw=float(slack_inj),
        losses_kw=losses,
        node_injections=node_inj,
    )


def kcl_residuals(topo: GridTopology, sol: FlowSolution) -> dict[str, float]:
    """Per-node KCL mismatch of ``sol`` (kW), losses drawn at receiving ends."""
    res = {nid: -sol.node_injections.get(nid, 0.0) for nid in topo.node_ids}
    for ln in topo.lines:
        f = sol.line_flows[ln.name]
        loss = ln.loss_coeff * f * f
        if f >= 0:
            res[ln.from_node] += f
            res[ln.to_node] -= f - loss
        else:
            res[ln.to_node] += -f
            res[ln.from_node] -= -f - loss
    return res


__all__ = [
    "FlowSolution",
    "GridTopology",
    "Line",
    "Node",
    "NodeKind",
    "kcl_residuals",
    "solve_flows",
    "validate_topology",
]
