"""Equilibrium backlogs and delays.

Backlogs beta_j and delays delta_i are optimal duals of the transportation LP.
The minimum-delay pair is read off a residual graph of an optimal assignment:
-beta_j and -delta_i are shortest-path distances from a root that reaches
every FC with a zero-weight arc.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import product

import networkx as nx
import numpy as np

from .assignment import (
    Assignment,
    assignment_from_matrix,
    check_feasible,
    enumerate_assignments,
    min_cost_assignment,
    split_demands,
)
from .core import (
    BoundExceededError,
    FulfillmentError,
    Instance,
    InternalInvariantError,
    format_units,
)

ROOT = ("r",)
DELAY_ORACLE_MAX_DEMAND = 8
DELAY_ORACLE_MAX_FCS = 3
DELAY_ORACLE_MAX_GRID = 2_000_000


class NegativeCycleError(InternalInvariantError):
    """The residual graph has a negative cycle, so the assignment was not optimal."""


class NotOptimalError(FulfillmentError, ValueError):
    pass


@dataclass(frozen=True)
class EquilibriumSolution:
    assignment: Assignment
    backlogs: dict[str, int]
    delays: dict[str, int]
    total_delay: int

    def beta(self, instance: Instance) -> np.ndarray:
        return np.array([self.backlogs[j] for j in instance.fc_ids], dtype=np.int64)

    def delta(self, instance: Instance) -> np.ndarray:
        return np.array([self.delays[i] for i in instance.demand_ids], dtype=np.int64)


@dataclass
class ResidualGraph:
    """Root + FCs + demands.  Arcs r->j (0), j->i (-l_ij) for assigned pairs,
    i->j (+l_ij) for unassigned pairs.  Vertices are ("F", id) / ("D", id)."""

    vertices: list
    arcs: dict = field(default_factory=dict)

    def add_arc(self, u, v, w: int) -> None:
        self.arcs.setdefault(u, []).append((v, w))

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.vertices)
        for u, out in self.arcs.items():
            for v, w in out:
                g.add_edge(u, v, weight=w)
        return g


def build_residual_graph(instance: Instance, assigned_fc: dict[str, str]) -> ResidualGraph:
    """Residual graph for an assignment in which each demand uses exactly one FC."""
    L = instance.distances
    g = ResidualGraph([ROOT] + [("F", j) for j in instance.fc_ids] + [("D", i) for i in instance.demand_ids])
    for j in instance.fc_ids:
        g.add_arc(ROOT, ("F", j), 0)
    for a, s in enumerate(instance.demands):
        home = assigned_fc.get(s.id)
        for b, f in enumerate(instance.fcs):
            if f.id == home:
                g.add_arc(("F", f.id), ("D", s.id), -int(L[a, b]))
            else:
                g.add_arc(("D", s.id), ("F", f.id), int(L[a, b]))
    return g


def shortest_paths(graph: ResidualGraph, source) -> dict:
    """FIFO label-correcting single-source shortest paths, exact integers.

    A vertex relaxed |V| times lies on (or behind) a negative cycle, which is
    reported as NegativeCycleError.  Unreachable vertices are omitted.
    """
    dist = {source: 0}
    in_queue = {source}
    count = {source: 0}
    queue = deque([source])
    limit = len(graph.vertices)
    while queue:
        u = queue.popleft()
        in_queue.discard(u)
        du = dist[u]
        for v, w in graph.arcs.get(u, ()):
            nd = du + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                if v not in in_queue:
                    count[v] = count.get(v, 0) + 1
                    if count[v] > limit:
                        raise NegativeCycleError(f"negative cycle through {v}")
                    in_queue.add(v)
                    queue.append(v)
    return dist


def _duals_from_assignment(instance: Instance, x: Assignment) -> EquilibriumSolution:
    split = split_demands(instance, x)
    sub = split.instance
    graph = build_residual_graph(sub, split.assigned_fc)
    dist = shortest_paths(graph, ROOT)
    beta = {}
    for j in instance.fc_ids:
        if ("F", j) not in dist:
            raise InternalInvariantError(f"fc {j} unreachable from root")
        beta[j] = -dist[("F", j)]
    delays: dict[str, int] = {}
    for s in sub.demands:
        if s.id not in split.assigned_fc:
            continue
        d = -dist[("D", s.id)]
        orig = split.origin[s.id]
        if orig in delays and delays[orig] != d:
            raise InternalInvariantError(
                f"split parts of demand {orig} disagree on delay ({delays[orig]} vs {d})"
            )
        delays[orig] = d
    L = instance.distances
    b = np.array([beta[j] for j in instance.fc_ids], dtype=np.int64)
    for a, s in enumerate(instance.demands):
        if s.id not in delays:
            # zero-demand node: delay is its best offer, it carries no weight
            delays[s.id] = int((L[a] + b).min()) if instance.k else 0
    total = sum(s.qty * delays[s.id] for s in instance.demands)
    return EquilibriumSolution(x, beta, {i: delays[i] for i in instance.demand_ids}, total)


def min_delay_equilibrium(instance: Instance) -> EquilibriumSolution:
    """Minimum-delay equilibrium: optimal assignment plus shortest-path duals."""
    return _duals_from_assignment(instance, min_cost_assignment(instance))


def equilibrium_delay_of(instance: Instance, x: Assignment) -> EquilibriumSolution:
    """Minimum-delay duals paired with a given optimal assignment ``x``."""
    problems = check_feasible(instance, x)
    if problems:
        raise NotOptimalError("assignment infeasible: " + "; ".join(problems))
    best = min_cost_assignment(instance).cost
    if x.cost != best:
        raise NotOptimalError(f"assignment cost {x.cost} exceeds the optimum {best}")
    return _duals_from_assignment(instance, x)


@dataclass(frozen=True)
class Verdict:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def verify_equilibrium(instance: Instance, sol: EquilibriumSolution, check_optimal: bool = True) -> Verdict:
    """Exact check of the equilibrium conditions plus dual feasibility and optimality."""
    out = list(check_feasible(instance, sol.assignment))
    missing_f = [j for j in instance.fc_ids if j not in sol.backlogs]
    missing_d = [i for i in instance.demand_ids if i not in sol.delays]
    if missing_f or missing_d:
        out.append(f"missing backlogs for {missing_f} / delays for {missing_d}")
        return Verdict(tuple(out))
    if out:
        return Verdict(tuple(out))
    L = instance.distances
    beta = sol.beta(instance)
    delta = sol.delta(instance)
    x = sol.assignment.matrix(instance)
    offer = L + beta[None, :]
    best = offer.min(axis=1) if instance.k else np.zeros(instance.n, dtype=np.int64)
    for b, j in enumerate(instance.fc_ids):
        if beta[b] < 0:
            out.append(f"fc {j}: negative backlog {int(beta[b])}")
        load = int(x[:, b].sum())
        if load < instance.capacity[b] and beta[b] != 0:
            out.append(f"fc {j}: slack ({load} < {int(instance.capacity[b])}) but backlog {int(beta[b])} != 0")
    for a, i in enumerate(instance.demand_ids):
        for b, j in enumerate(instance.fc_ids):
            if delta[a] - beta[b] > L[a, b]:
                out.append(f"dual infeasible at ({i}, {j}): delta - beta = {int(delta[a] - beta[b])} > l = {int(L[a, b])}")
            if x[a, b] > 0 and offer[a, b] != best[a]:
                out.append(f"demand {i} served by {j} outside its argmin (offer {int(offer[a, b])} > {int(best[a])})")
            if x[a, b] > 0 and delta[a] != offer[a, b]:
                out.append(f"support ({i}, {j}) not tight: delta {int(delta[a])} != l + beta {int(offer[a, b])}")
        if delta[a] != best[a]:
            out.append(f"demand {i}: delay {int(delta[a])} != min_j (l_ij + beta_j) = {int(best[a])}")
    total = int(sum(int(q) * int(d) for q, d in zip(instance.demand_qty, delta)))
    if total != sol.total_delay:
        out.append(f"recorded total delay {sol.total_delay} != sum D_i delta_i = {total}")
    if check_optimal:
        opt = min_cost_assignment(instance).cost
        if sol.assignment.cost != opt:
            out.append(f"assignment cost {sol.assignment.cost} is not minimum ({opt})")
    return Verdict(tuple(out))


@dataclass(frozen=True)
class TightEdgeGraph:
    edges: frozenset[tuple[str, str]]
    demand_ids: tuple[str, ...]
    fc_ids: tuple[str, ...]

    def components(self) -> list[tuple[set[str], set[str]]]:
        """Connected components as (demand ids, fc ids); isolated nodes included."""
        g = nx.Graph()
        g.add_nodes_from(("D", i) for i in self.demand_ids)
        g.add_nodes_from(("F", j) for j in self.fc_ids)
        g.add_edges_from((("D", i), ("F", j)) for i, j in self.edges)
        comps = []
        for comp in nx.connected_components(g):
            comps.append(({v for t, v in comp if t == "D"}, {v for t, v in comp if t == "F"}))
        comps.sort(key=lambda c: (sorted(c[0]), sorted(c[1])))
        return comps


def tight_edges(instance: Instance, sol: EquilibriumSolution) -> TightEdgeGraph:
    L = instance.distances
    offer = L + sol.beta(instance)[None, :]
    delta = sol.delta(instance)
    hits = np.argwhere(offer == delta[:, None])
    edges = frozenset((instance.demands[a].id, instance.fcs[b].id) for a, b in hits)
    return TightEdgeGraph(edges, tuple(instance.demand_ids), tuple(instance.fc_ids))


# --------------------------------------------------------------------------
# brute-force oracle


@dataclass(frozen=True)
class EquilibriumTable:
    """Every grid backlog vector that supports an equilibrium, with its delays."""

    betas: np.ndarray
    deltas: np.ndarray
    totals: np.ndarray
    witness: list
    step: int


def enumerate_equilibria(instance: Instance) -> EquilibriumTable:
    """Exhaustive search over integral backlog vectors on a bounded grid.

    Grid step is gcd(scale, all distances); each backlog ranges over
    [0, max_l * max(|D|, k - 1)].  A vector qualifies when some capacity-feasible
    assignment lives on its argmin edges and fills every FC with positive backlog.
    """
    n, k = instance.n, instance.k
    if instance.total_demand > DELAY_ORACLE_MAX_DEMAND or k > DELAY_ORACLE_MAX_FCS:
        raise BoundExceededError(
            f"delay oracle bound: total demand <= {DELAY_ORACLE_MAX_DEMAND}, FCs <= {DELAY_ORACLE_MAX_FCS}"
        )
    L = instance.distances
    step = math.gcd(instance.scale, *[int(v) for v in L.ravel()])
    max_l = int(L.max()) if L.size else 0
    top = max_l * max(n, k - 1)
    steps = top // step + 1
    if steps**k > DELAY_ORACLE_MAX_GRID:
        raise BoundExceededError(f"backlog grid of {steps}^{k} points is too large")

    # distinct (support, full-FC set) patterns over all feasible assignments
    patterns: dict[tuple[int, int], np.ndarray] = {}
    cap = instance.capacity
    bit = (1 << np.arange(n * k, dtype=np.int64)).reshape(n, k) if n * k else np.zeros((n, k), dtype=np.int64)
    for x in enumerate_assignments(instance):
        supp = int(bit[x > 0].sum())
        full = int(sum(1 << b for b in range(k) if x[:, b].sum() == cap[b]))
        patterns.setdefault((supp, full), x)
    if not patterns:
        raise InternalInvariantError("no feasible assignment in oracle")
    pat = np.array(list(patterns.keys()), dtype=np.int64)

    axis = np.arange(steps, dtype=np.int64) * step
    betas = np.array(list(product(axis, repeat=k)), dtype=np.int64).reshape(-1, k)
    offer = L[None, :, :] + betas[:, None, :]
    delta = offer.min(axis=2) if k else np.zeros((len(betas), n), dtype=np.int64)
    tight = (offer == delta[:, :, None])
    tight_bits = (tight * bit[None]).reshape(len(betas), -1).sum(axis=1)
    pos_bits = ((betas > 0) * (1 << np.arange(k, dtype=np.int64))[None, :]).sum(axis=1)
    ok = np.zeros(len(betas), dtype=bool)
    which = np.full(len(betas), -1, dtype=np.int64)
    for idx, (supp, full) in enumerate(pat):
        fits = ((supp & ~tight_bits) == 0) & ((pos_bits & ~full) == 0) & ~ok
        which[fits] = idx
        ok |= fits
    keys = list(patterns.keys())
    sel = np.flatnonzero(ok)
    totals = delta[sel] @ instance.demand_qty
    witness = [patterns[keys[which[s]]] for s in sel]
    return EquilibriumTable(betas[sel], delta[sel], totals, witness, step)


def brute_force_min_delay(instance: Instance) -> EquilibriumSolution:
    """Oracle: the minimum-total-delay equilibrium found on the backlog grid."""
    table = enumerate_equilibria(instance)
    if len(table.totals) == 0:
        raise InternalInvariantError("oracle grid contains no equilibrium")
    best = int(np.argmin(table.totals))
    x = assignment_from_matrix(instance, table.witness[best])
    return EquilibriumSolution(
        x,
        {j: int(v) for j, v in zip(instance.fc_ids, table.betas[best])},
        {i: int(v) for i, v in zip(instance.demand_ids, table.deltas[best])},
        int(table.totals[best]),
    )


# --------------------------------------------------------------------------
# export


def backlogs_csv(instance: Instance, sol: EquilibriumSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fc_id", "backlog"])
    for j in instance.fc_ids:
        w.writerow([j, format_units(sol.backlogs[j], instance.scale)])
    return buf.getvalue()


def delays_csv(instance: Instance, sol: EquilibriumSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["demand_id", "delay", "assigned_fcs"])
    for i in instance.demand_ids:
        w.writerow([i, format_units(sol.delays[i], instance.scale), ";".join(sol.assignment.fcs_of(i))])
    return buf.getvalue()


def solution_to_dict(instance: Instance, sol: EquilibriumSolution) -> dict:
    """Full dump in exact scale units (integers)."""
    return {
        "scale": instance.scale,
        "cost": sol.assignment.cost,
        "total_delay": sol.total_delay,
        "backlogs": {j: sol.backlogs[j] for j in instance.fc_ids},
        "delays": {i: sol.delays[i] for i in instance.demand_ids},
        "flows": [
            {"demand": i, "fc": j, "flow": v}
            for (i, j), v in sorted(sol.assignment.flows.items(), key=lambda kv: (instance.demand_index[kv[0][0]], instance.fc_index[kv[0][1]]))
        ],
    }


def solution_from_dict(instance: Instance, doc: dict) -> EquilibriumSolution:
    if doc.get("scale", instance.scale) != instance.scale:
        raise FulfillmentError(f"solution scale {doc['scale']} differs from instance scale {instance.scale}")
    flows = {(f["demand"], f["fc"]): int(f["flow"]) for f in doc["flows"] if int(f["flow"])}
    cost = doc.get("cost")
    if cost is None:
        cost = sum(v * int(instance.distances[instance.demand_index[i], instance.fc_index[j]]) for (i, j), v in flows.items())
    return EquilibriumSolution(
        Assignment(flows, int(cost)),
        {j: int(v) for j, v in doc["backlogs"].items()},
        {i: int(v) for i, v in doc["delays"].items()},
        int(doc["total_delay"]),
    )


def solution_json(instance: Instance, sol: EquilibriumSolution) -> str:
    return json.dumps(solution_to_dict(instance, sol), indent=2, sort_keys=True) + "\n"
