"""Minimum-cost transportation: demands to FCs, exact integers.

The solver is successive shortest augmenting paths with FC potentials.  Paths
in the residual graph alternate FC -> demand -> FC, so Dijkstra runs on the k
FC nodes only, with the demand hop folded into each arc weight.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .core import (
    BoundExceededError,
    InfeasibleError,
    InstanceError,
    Instance,
    InternalInvariantError,
    Site,
    format_units,
)

ORACLE_MAX_DEMAND = 12
ORACLE_MAX_FCS = 4


@dataclass(frozen=True)
class Assignment:
    """Flows x_ij keyed by (demand id, fc id); only positive entries stored."""

    flows: dict[tuple[str, str], int]
    cost: int

    def matrix(self, instance: Instance) -> np.ndarray:
        x = np.zeros((instance.n, instance.k), dtype=np.int64)
        for (i, j), v in self.flows.items():
            x[instance.demand_index[i], instance.fc_index[j]] = v
        return x

    def load(self, fc_id: str) -> int:
        return sum(v for (_, j), v in self.flows.items() if j == fc_id)

    def fcs_of(self, demand_id: str) -> list[str]:
        return [j for (i, j), v in self.flows.items() if i == demand_id and v > 0]


def assignment_from_matrix(instance: Instance, x: np.ndarray) -> Assignment:
    flows = {}
    for a, b in zip(*np.nonzero(x)):
        flows[(instance.demands[a].id, instance.fcs[b].id)] = int(x[a, b])
    cost = int(sum(int(x[a, b]) * int(instance.distances[a, b]) for a, b in zip(*np.nonzero(x))))
    return Assignment(flows, cost)


def check_feasible(instance: Instance, x: Assignment) -> list[str]:
    """Primal feasibility problems of ``x`` (empty list when feasible)."""
    problems = []
    for (i, j), v in x.flows.items():
        if i not in instance.demand_index or j not in instance.fc_index:
            problems.append(f"flow references unknown pair ({i}, {j})")
        elif not isinstance(v, (int, np.integer)) or v < 0:
            problems.append(f"flow ({i}, {j}) = {v!r} is not a nonnegative integer")
    if problems:
        return problems
    m = x.matrix(instance)
    for a, s in enumerate(instance.demands):
        if int(m[a].sum()) != s.qty:
            problems.append(f"demand {s.id}: assigned {int(m[a].sum())} != D_i = {s.qty}")
    for b, s in enumerate(instance.fcs):
        if int(m[:, b].sum()) > s.qty:
            problems.append(f"fc {s.id}: load {int(m[:, b].sum())} exceeds C_j = {s.qty}")
    true_cost = int((m * instance.distances).sum())
    if true_cost != x.cost:
        problems.append(f"recorded cost {x.cost} != sum of l_ij x_ij = {true_cost}")
    return problems


def _dijkstra_fc(L, x, pi, src):
    """Shortest paths from demand ``src`` to every FC in the compressed residual graph.

    Returns true distances and, per FC, the predecessor (prev_fc, via_demand);
    prev_fc == -1 marks the direct arc from the source demand.
    """
    k = L.shape[1]
    label = L[src] - pi
    pred_fc = np.full(k, -1, dtype=np.int64)
    pred_dem = np.full(k, src, dtype=np.int64)
    done = np.zeros(k, dtype=bool)
    for _ in range(k):
        open_ = np.where(done, np.iinfo(np.int64).max, label)
        j = int(np.argmin(open_))
        done[j] = True
        rows = np.flatnonzero(x[:, j])
        if rows.size == 0:
            continue
        hop = L[rows] - L[rows, j][:, None]
        best = np.argmin(hop, axis=0)
        w = hop[best, np.arange(k)] + pi[j] - pi
        if __debug__ and (w[~done] < 0).any():
            raise InternalInvariantError("negative reduced cost in residual graph")
        cand = label[j] + w
        better = (cand < label) & ~done
        label = np.where(better, cand, label)
        pred_fc = np.where(better, j, pred_fc)
        pred_dem = np.where(better, rows[best], pred_dem)
    return label + pi, pred_fc, pred_dem


def min_cost_assignment(instance: Instance) -> Assignment:
    """Integral optimum of the transportation LP.

    Demands are routed one at a time in instance order; each unit batch takes a
    shortest augmenting path to the nearest FC with spare capacity.  Ties go to
    the lowest FC index and to the direct (earliest-found) path.
    """
    if instance.total_demand > instance.total_capacity:
        raise InfeasibleError(
            f"total demand {instance.total_demand} exceeds capacity {instance.total_capacity}"
        )
    n, k = instance.n, instance.k
    L = instance.distances
    x = np.zeros((n, k), dtype=np.int64)
    spare = instance.capacity.copy()
    pi = np.zeros(k, dtype=np.int64)
    for src in range(n):
        need = int(instance.demand_qty[src])
        while need > 0:
            dist, pred_fc, pred_dem = _dijkstra_fc(L, x, pi, src)
            pi = dist
            open_ = np.where(spare > 0, dist, np.iinfo(np.int64).max)
            t = int(np.argmin(open_))
            if spare[t] <= 0:
                raise InternalInvariantError("no FC with spare capacity although supply suffices")
            # walk back to collect the path and its bottleneck
            path = []
            amount = min(need, int(spare[t]))
            j = t
            while pred_fc[j] != -1:
                i, jp = int(pred_dem[j]), int(pred_fc[j])
                path.append((i, jp, j))
                amount = min(amount, int(x[i, jp]))
                j = jp
            x[src, j] += amount
            for i, jp, jn in path:
                x[i, jp] -= amount
                x[i, jn] += amount
            spare[t] -= amount
            need -= amount
    return assignment_from_matrix(instance, x)


def brute_force_min_cost(instance: Instance) -> Assignment:
    """Exhaustive optimum over unit-parcel assignments (test oracle).

    Parcels of one demand are interchangeable, so the enumeration runs over how
    many of each demand's parcels go to each FC, memoized on remaining capacity.
    """
    D = instance.total_demand
    if D > ORACLE_MAX_DEMAND or instance.k > ORACLE_MAX_FCS:
        raise BoundExceededError(
            f"oracle bound: need total demand <= {ORACLE_MAX_DEMAND} and <= {ORACLE_MAX_FCS} FCs "
            f"(got {D}, {instance.k})"
        )
    if D > instance.total_capacity:
        raise InfeasibleError("total demand exceeds capacity")
    n, k = instance.n, instance.k
    L = instance.distances.tolist()
    qty = [int(v) for v in instance.demand_qty]

    def splits(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in splits(total - first, parts - 1):
                yield (first,) + rest

    @lru_cache(maxsize=None)
    def best(a: int, caps: tuple[int, ...]):
        if a == n:
            return 0, ()
        result = None
        for split in splits(qty[a], k) if k else [()]:
            if any(s > c for s, c in zip(split, caps)):
                continue
            here = sum(s * L[a][b] for b, s in enumerate(split))
            sub = best(a + 1, tuple(c - s for c, s in zip(caps, split)))
            if sub is None:
                continue
            total = here + sub[0]
            if result is None or total < result[0]:
                result = (total, (split,) + sub[1])
        return result

    if n and k == 0:
        raise InfeasibleError("no FCs")
    caps0 = tuple(min(int(c), D) for c in instance.capacity)
    res = best(0, caps0)
    if res is None:
        raise InfeasibleError("no feasible assignment")
    x = np.array(res[1], dtype=np.int64).reshape(n, k)
    out = assignment_from_matrix(instance, x)
    if out.cost != res[0]:
        raise InternalInvariantError("oracle cost bookkeeping mismatch")
    return out


def enumerate_assignments(instance: Instance):
    """Yield every capacity-feasible integral assignment matrix (tiny instances only)."""
    if instance.total_demand > ORACLE_MAX_DEMAND or instance.k > ORACLE_MAX_FCS:
        raise BoundExceededError("instance exceeds the enumeration bound")
    n, k = instance.n, instance.k
    qty = [int(v) for v in instance.demand_qty]
    cap = [int(v) for v in instance.capacity]
    per_demand = []
    for a in range(n):
        opts = [s for s in product(range(qty[a] + 1), repeat=k) if sum(s) == qty[a]]
        per_demand.append(opts)

    def rec(a, load, rows):
        if a == n:
            yield np.array(rows, dtype=np.int64).reshape(n, k)
            return
        for s in per_demand[a]:
            nl = [l + v for l, v in zip(load, s)]
            if all(v <= c for v, c in zip(nl, cap)):
                yield from rec(a + 1, nl, rows + [s])

    yield from rec(0, [0] * k, [])


@dataclass(frozen=True)
class SplitInstance:
    """Result of splitting demands along an integral assignment.

    ``origin`` maps each new demand id to its original id and ``assigned_fc``
    to the single FC that serves it.
    """

    instance: Instance
    assignment: Assignment
    origin: dict[str, str]
    assigned_fc: dict[str, str]


def split_demands(instance: Instance, x: Assignment) -> SplitInstance:
    """Break every demand into one part per FC serving it (D_part = x_ij)."""
    for (i, j), v in x.flows.items():
        if not isinstance(v, (int, np.integer)):
            raise InstanceError(f"split_demands needs an integral assignment; x[{i},{j}] = {v!r}")
    problems = check_feasible(instance, x)
    if problems:
        raise InstanceError("split_demands: assignment infeasible: " + "; ".join(problems))
    taken = set(instance.demand_ids) | set(instance.fc_ids)
    new_sites: list[Site] = []
    origin, assigned, flows = {}, {}, {}
    for s in instance.demands:
        served = [(j, x.flows[(s.id, j)]) for j in instance.fc_ids if x.flows.get((s.id, j), 0) > 0]
        if len(served) == 1:
            j, v = served[0]
            new_sites.append(s)
            origin[s.id], assigned[s.id] = s.id, j
            flows[(s.id, j)] = v
            continue
        if not served:
            # zero demand: nothing to route; it keeps its own identity
            new_sites.append(s)
            origin[s.id] = s.id
            continue
        for j, v in served:
            nid = f"{s.id}@{j}"
            while nid in taken:
                nid += "'"
            taken.add(nid)
            new_sites.append(Site(nid, s.loc, v))
            origin[nid], assigned[nid] = s.id, j
            flows[(nid, j)] = v
    split = instance.replace_sites(demands=new_sites)
    if "distances" in instance.__dict__:
        rows = [instance.demand_index[origin[s.id]] for s in new_sites]
        m = instance.distances[rows].copy()
        m.setflags(write=False)
        split.__dict__["distances"] = m
    return SplitInstance(split, Assignment(flows, x.cost), origin, assigned)


def assignment_csv(instance: Instance, x: Assignment) -> str:
    """Rows (demand_id, fc_id, flow, distance) plus a totals footer."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["demand_id", "fc_id", "flow", "distance"])
    total = 0
    for i in instance.demand_ids:
        for j in instance.fc_ids:
            v = x.flows.get((i, j), 0)
            if v:
                total += v
                w.writerow([i, j, v, format_units(int(instance.distances[instance.demand_index[i], instance.fc_index[j]]), instance.scale)])
    w.writerow(["total", "", total, format_units(x.cost, instance.scale)])
    return buf.getvalue()
