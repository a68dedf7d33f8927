"""Regionalizations: paired partitions of demands and FCs solved region by region."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .assignment import min_cost_assignment
from .core import (
    BoundExceededError,
    EuclideanMetric,
    FulfillmentError,
    Instance,
    InstanceError,
    LineMetric,
    TreeMetric,
    UnknownIdError,
    format_units,
)
from .equilibrium import EquilibriumSolution, Verdict, min_delay_equilibrium

GROUPING_MAX_FCS = 10


class RegionInfeasibleError(FulfillmentError, ValueError):
    """A region's demand exceeds its supply, or the parts do not cover the instance."""


@dataclass(frozen=True)
class Part:
    demands: tuple[str, ...]
    fcs: tuple[str, ...]


@dataclass(frozen=True)
class ScaleBucket:
    """Demands matched at a distance in [2^(d-1), 2^d) (normalized); d = 0 holds zero distances."""

    d: int
    members: dict[str, str]


@dataclass(frozen=True)
class Regionalization:
    parts: tuple[Part, ...]
    # scale decompositions only: demand id -> (d, s_1, ..., s_q) segment key
    segments: dict[str, tuple[int, ...]] | None = None
    buckets: tuple[ScaleBucket, ...] = ()

    @property
    def nonempty(self) -> int:
        return sum(1 for p in self.parts if p.demands)

    def demand_parts(self) -> list[set[str]]:
        return [set(p.demands) for p in self.parts]


def make_regionalization(parts: Iterable[tuple[Iterable[str], Iterable[str]]]) -> Regionalization:
    return Regionalization(tuple(Part(tuple(d), tuple(f)) for d, f in parts))


def validate_regionalization(instance: Instance, reg: Regionalization) -> None:
    seen_d: dict[str, int] = {}
    seen_f: dict[str, int] = {}
    for p, part in enumerate(reg.parts):
        for i in part.demands:
            if i not in instance.demand_index:
                raise UnknownIdError(f"part {p}: unknown demand {i!r}")
            if i in seen_d:
                raise RegionInfeasibleError(f"demand {i} appears in parts {seen_d[i]} and {p}")
            seen_d[i] = p
        for j in part.fcs:
            if j not in instance.fc_index:
                raise UnknownIdError(f"part {p}: unknown fc {j!r}")
            if j in seen_f:
                raise RegionInfeasibleError(f"fc {j} appears in parts {seen_f[j]} and {p}")
            seen_f[j] = p
        dem = sum(instance.demands[instance.demand_index[i]].qty for i in part.demands)
        sup = sum(instance.fcs[instance.fc_index[j]].qty for j in part.fcs)
        if dem > sup:
            raise RegionInfeasibleError(f"part {p}: demand {dem} exceeds supply {sup}")
    missing = [i for i in instance.demand_ids if i not in seen_d]
    if missing:
        raise RegionInfeasibleError(f"demands not covered by any part: {missing}")


@dataclass(frozen=True)
class RegionalizedSolution:
    regionalization: Regionalization
    instances: tuple[Instance, ...]
    solutions: tuple[EquilibriumSolution, ...]
    total_delay: int

    @property
    def backlogs(self) -> dict[str, int]:
        out = {}
        for sol in self.solutions:
            out.update(sol.backlogs)
        return out

    @property
    def delays(self) -> dict[str, int]:
        out = {}
        for sol in self.solutions:
            out.update(sol.delays)
        return out


def solve_regionalized(instance: Instance, reg: Regionalization) -> RegionalizedSolution:
    """Independent minimum-delay equilibrium in every part; delays add up."""
    validate_regionalization(instance, reg)
    subs, sols = [], []
    for part in reg.parts:
        sub = instance.restrict(part.demands, part.fcs)
        subs.append(sub)
        sols.append(min_delay_equilibrium(sub))
    return RegionalizedSolution(reg, tuple(subs), tuple(sols), sum(s.total_delay for s in sols))


def trivial_regionalization(instance: Instance) -> Regionalization:
    return make_regionalization([(instance.demand_ids, instance.fc_ids)])


def k_regionalization(instance: Instance) -> Regionalization:
    """One part per FC, holding the demands a minimum-cost assignment sends there."""
    bad = [s.id for s in instance.demands if s.qty != 1]
    if bad:
        raise InstanceError(f"k-regionalization needs unit demands; non-unit: {bad[:5]}")
    x = min_cost_assignment(instance)
    by_fc: dict[str, list[str]] = {j: [] for j in instance.fc_ids}
    for (i, j), v in x.flows.items():
        by_fc[j].append(i)
    return make_regionalization(
        (sorted(by_fc[j], key=instance.demand_index.__getitem__), [j]) for j in instance.fc_ids
    )


# --------------------------------------------------------------------------
# scale decompositions


def _ceil_sqrt(q: int) -> int:
    r = math.isqrt(q)
    return r if r * r == q else r + 1


def _scale_decomposition(instance: Instance, period: int) -> Regionalization:
    bad = [s.id for s in instance.demands + instance.fcs if s.qty != 1]
    if bad:
        raise InstanceError(f"scale decomposition needs unit demands and capacities; non-unit: {bad[:5]}")
    x = min_cost_assignment(instance)
    match = {i: j for (i, j) in x.flows}
    L = instance.distances
    nz = L[L > 0]
    unit = int(nz.min()) if nz.size else 1
    sites = instance.demands + instance.fcs
    dim = len(instance.coords(sites[0])) if sites else 1
    origin = tuple(min(instance.coords(s)[c] for s in sites) for c in range(dim)) if sites else (0,)

    groups: dict[tuple[int, ...], list[str]] = {}
    segments: dict[str, tuple[int, ...]] = {}
    buckets: dict[int, dict[str, str]] = {}
    for a, s in enumerate(instance.demands):
        j = match[s.id]
        dist = int(L[a, instance.fc_index[j]])
        d = (dist // unit).bit_length() if dist > 0 else 0
        side = unit << (d + 1)
        seg = tuple((c - o) // side for c, o in zip(instance.coords(s), origin))
        segments[s.id] = (d,) + seg
        key = (d,) + ((0,) * dim if d == 0 else tuple(v % period for v in seg))
        groups.setdefault(key, []).append(s.id)
        buckets.setdefault(d, {})[s.id] = j

    parts = []
    for key in sorted(groups):
        dem = groups[key]
        parts.append(Part(tuple(dem), tuple(match[i] for i in dem)))
    used = set(match.values())
    sink = tuple(j for j in instance.fc_ids if j not in used)
    if sink:
        parts.append(Part((), sink))
    return Regionalization(
        tuple(parts),
        segments,
        tuple(ScaleBucket(d, buckets[d]) for d in sorted(buckets)),
    )


def line_scale_decomposition(instance: Instance) -> Regionalization:
    """3 regions per distance scale: segments of length 2^(d+1) grouped mod 3."""
    metric = instance.metric
    if not (isinstance(metric, LineMetric) or (isinstance(metric, EuclideanMetric) and metric.dim == 1)):
        raise InstanceError(f"line decomposition needs a line metric, got {metric.kind}")
    return _scale_decomposition(instance, 3)


def euclidean_scale_decomposition(instance: Instance) -> Regionalization:
    """B^q regions per distance scale with B = 2 + ceil(sqrt(q)): hypercubes grouped mod B."""
    metric = instance.metric
    if isinstance(metric, LineMetric):
        q = 1
    elif isinstance(metric, EuclideanMetric):
        q = metric.dim
    else:
        raise InstanceError(f"euclidean decomposition needs a euclidean metric, got {metric.kind}")
    return _scale_decomposition(instance, 2 + _ceil_sqrt(q))


def region_bound(instance: Instance) -> int:
    """(2 + ceil(sqrt q))^q * ceil(log2 rho): the advertised region budget."""
    from .core import aspect_ratio

    q = instance.metric.dim if isinstance(instance.metric, EuclideanMetric) else 1
    rho = aspect_ratio(instance)
    log = 0
    while Fraction(2**log) < rho:
        log += 1
    return (2 + _ceil_sqrt(q)) ** q * log


def within_factor(delay: int, opt: int, q: int) -> bool:
    """Exact test of delay <= (4 sqrt(q) + 2) * opt."""
    lhs = delay - 2 * opt
    return lhs <= 0 or lhs * lhs <= 16 * q * opt * opt


def zero_beta_per_segment_check(
    instance: Instance, reg: Regionalization, sol: RegionalizedSolution
) -> Verdict:
    """Every occupied segment of every region has a demand served by a zero-backlog FC."""
    if reg.segments is None:
        return Verdict(("regionalization carries no segment structure",))
    out = []
    for p, (part, region_sol) in enumerate(zip(reg.parts, sol.solutions)):
        by_seg: dict[tuple, list[str]] = {}
        for i in part.demands:
            by_seg.setdefault(reg.segments[i], []).append(i)
        for seg, members in sorted(by_seg.items()):
            if not any(
                region_sol.backlogs[j] == 0
                for i in members
                for j in region_sol.assignment.fcs_of(i)
            ):
                out.append(f"part {p}, segment {seg}: no demand served by a zero-backlog FC")
    return Verdict(tuple(out))


# --------------------------------------------------------------------------
# FC grouping for a fixed demand partition


def _demand_sets(instance: Instance, demand_parts: Sequence[Iterable[str]]) -> list[tuple[str, ...]]:
    parts = [tuple(sorted(p, key=instance.demand_index.__getitem__)) for p in demand_parts]
    covered = [i for p in parts for i in p]
    if sorted(covered) != sorted(instance.demand_ids):
        raise RegionInfeasibleError("demand parts must partition the demands")
    return parts


def global_fc_grouping(instance: Instance, demand_parts: Sequence[Iterable[str]]) -> Regionalization:
    """FCs join the part whose demands they serve in the global min-cost assignment.

    An FC serving several parts goes to the one it sends the most flow to
    (lowest part on ties); FCs left idle join no part.
    """
    parts = _demand_sets(instance, demand_parts)
    owner = {i: p for p, ds in enumerate(parts) for i in ds}
    x = min_cost_assignment(instance)
    flow = {j: [0] * len(parts) for j in instance.fc_ids}
    for (i, j), v in x.flows.items():
        flow[j][owner[i]] += v
    fcs: list[list[str]] = [[] for _ in parts]
    for j in instance.fc_ids:
        if max(flow[j], default=0) > 0:
            fcs[max(range(len(parts)), key=lambda p: (flow[j][p], -p))].append(j)
    return make_regionalization(zip(parts, fcs))


def search_best_fc_grouping(instance: Instance, demand_parts: Sequence[Iterable[str]]) -> Regionalization:
    """Exhaustive FC-to-part allocation minimizing total regional delay.

    Each FC goes to one part or to none.  Every (part, FC subset) pair is
    solved once and a DP over parts combines disjoint subsets, so the work is
    2^k equilibria per part.  Ties keep the allocation whose FC masks, read
    part by part, come first in increasing mask order.
    """
    k = instance.k
    if k > GROUPING_MAX_FCS:
        raise BoundExceededError(f"grouping search limited to {GROUPING_MAX_FCS} FCs, got {k}")
    parts = _demand_sets(instance, demand_parts)
    need = [sum(instance.demands[instance.demand_index[i]].qty for i in ds) for ds in parts]
    cap = [s.qty for s in instance.fcs]
    full = 1 << k
    supply = [sum(cap[b] for b in range(k) if m >> b & 1) for m in range(full)]

    def fcs_of(mask: int) -> tuple[str, ...]:
        return tuple(instance.fc_ids[b] for b in range(k) if mask >> b & 1)

    # delay[p][mask]; None when the subset cannot supply the part
    delay: list[list[int | None]] = []
    for p, ds in enumerate(parts):
        row: list[int | None] = []
        for m in range(full):
            if supply[m] < need[p]:
                row.append(None)
            elif not ds:
                row.append(0)
            else:
                row.append(min_delay_equilibrium(instance.restrict(ds, fcs_of(m))).total_delay)
        delay.append(row)
    # best[used] after placing parts 0..p-1, with the chosen masks
    best: dict[int, tuple[int, tuple[int, ...]]] = {0: (0, ())}
    for p in range(len(parts)):
        nxt: dict[int, tuple[int, tuple[int, ...]]] = {}
        for used, (tot, masks) in sorted(best.items()):
            free = (full - 1) & ~used
            sub = free
            options = []
            while True:
                options.append(sub)
                if sub == 0:
                    break
                sub = (sub - 1) & free
            for m in sorted(options):
                d = delay[p][m]
                if d is None:
                    continue
                cand = (tot + d, masks + (m,))
                key = used | m
                if key not in nxt or cand < nxt[key]:
                    nxt[key] = cand
        best = nxt
    if not best:
        raise RegionInfeasibleError("no FC allocation gives every part enough supply")
    _, masks = min(best.values())
    return make_regionalization(zip(parts, (fcs_of(m) for m in masks)))


def is_contiguous(instance: Instance, demand_parts: Sequence[Iterable[str]]) -> bool:
    """Tree metrics: the subtrees spanned by each part's demand nodes share no edge."""
    metric = instance.metric
    if not isinstance(metric, TreeMetric):
        raise InstanceError("contiguity is defined for tree metrics")
    used: set[frozenset] = set()
    for part in demand_parts:
        nodes = sorted({instance.demands[instance.demand_index[i]].loc for i in part})
        edges: set[frozenset] = set()
        for other in nodes[1:]:
            edges |= metric.path_edges(nodes[0], other)
        if edges & used:
            return False
        used |= edges
    return True


def _weighted_median(vals: list[int], weights: list[int]) -> int:
    order = np.argsort(vals, kind="stable")
    cum = np.cumsum(np.asarray(weights, dtype=np.int64)[order])
    return int(np.asarray(vals)[order][np.searchsorted(cum, cum[-1] / 2)])


def grid_regionalization(
    instance: Instance,
    x_cut: int | None = None,
    y_cut: int | None = None,
    fc_rule: str = "flow",
) -> Regionalization:
    """Four geographic regions cut at x = x_cut and y = y_cut (scale units).

    Cuts default to the demand-weighted medians; demands join the cell they sit
    in (points on a cut go to the lower cell).  With ``fc_rule="flow"`` an FC
    joins the cell it sends most min-cost flow to (idle FCs: their own cell);
    with ``"location"`` it joins the cell it sits in.  A cell short of supply
    then hands demand nodes to cells with spare supply, nearest-first.
    """
    metric = instance.metric
    if not isinstance(metric, EuclideanMetric) or metric.dim != 2:
        raise InstanceError("grid split needs a 2-d euclidean metric")
    if fc_rule not in ("flow", "location"):
        raise InstanceError(f"unknown fc rule {fc_rule!r}")
    if instance.n == 0 or instance.total_demand == 0:
        return trivial_regionalization(instance)
    w = [s.qty for s in instance.demands]
    if x_cut is None:
        x_cut = _weighted_median([s.loc[0] for s in instance.demands], w)
    if y_cut is None:
        y_cut = _weighted_median([s.loc[1] for s in instance.demands], w)

    def cell(loc) -> int:
        return (loc[0] > x_cut) * 2 + (loc[1] > y_cut)

    home = {s.id: cell(s.loc) for s in instance.demands}
    fc_cell = [cell(s.loc) for s in instance.fcs]
    if fc_rule == "flow":
        flow = [[0] * 4 for _ in instance.fcs]
        for (i, j), v in min_cost_assignment(instance).flows.items():
            flow[instance.fc_index[j]][home[i]] += v
        for b, f in enumerate(flow):
            if max(f) > 0:
                fc_cell[b] = max(range(4), key=lambda c: (f[c], -c))
    supply = [0] * 4
    for b, s in enumerate(instance.fcs):
        supply[fc_cell[b]] += s.qty
    need = [0] * 4
    for s in instance.demands:
        need[home[s.id]] += s.qty
    L = instance.distances
    for _ in range(instance.n):
        short = [c for c in range(4) if need[c] > supply[c]]
        if not short:
            break
        c = short[0]
        best = None
        for a, s in enumerate(instance.demands):
            if home[s.id] != c:
                continue
            for b in range(instance.k):
                t = fc_cell[b]
                if t != c and supply[t] - need[t] >= s.qty:
                    key = (int(L[a, b]), a, b)
                    if best is None or key < best[0]:
                        best = (key, s, t)
        if best is None:
            raise RegionInfeasibleError(f"grid cell {c} cannot be balanced")
        _, s, t = best
        home[s.id] = t
        need[c] -= s.qty
        need[t] += s.qty
    parts = [
        ([i for i in instance.demand_ids if home[i] == c], [j for b, j in enumerate(instance.fc_ids) if fc_cell[b] == c])
        for c in range(4)
    ]
    return make_regionalization(p for p in parts if p[0] or p[1])


# --------------------------------------------------------------------------
# files


def regionalization_to_dict(reg: Regionalization) -> dict:
    doc: dict = {"parts": [{"demands": list(p.demands), "fcs": list(p.fcs)} for p in reg.parts]}
    if reg.segments is not None:
        doc["segments"] = {i: list(v) for i, v in reg.segments.items()}
    return doc


def regionalization_from_dict(doc: dict) -> Regionalization:
    if not isinstance(doc, dict) or not isinstance(doc.get("parts"), list):
        raise InstanceError("regionalization document needs a 'parts' list")
    parts = []
    for p, raw in enumerate(doc["parts"]):
        if not isinstance(raw, dict):
            raise InstanceError(f"part {p}: expected an object")
        parts.append(Part(tuple(str(i) for i in raw.get("demands", [])), tuple(str(j) for j in raw.get("fcs", []))))
    segs = doc.get("segments")
    return Regionalization(tuple(parts), None if segs is None else {i: tuple(v) for i, v in segs.items()})


def load_regionalization(path: str) -> Regionalization:
    with open(path, "rb") as fh:
        try:
            doc = json.loads(fh.read().decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InstanceError(f"cannot parse regionalization: {exc}") from None
    return regionalization_from_dict(doc)


def regional_csv(instance: Instance, sol: RegionalizedSolution) -> str:
    """One row per region plus a summary row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region", "demands", "fcs", "demand", "supply", "cost", "total_delay"])
    for p, (sub, s) in enumerate(zip(sol.instances, sol.solutions)):
        w.writerow([p, sub.n, sub.k, sub.total_demand, sub.total_capacity,
                    format_units(s.assignment.cost, instance.scale), format_units(s.total_delay, instance.scale)])
    w.writerow(["total", instance.n, sum(sub.k for sub in sol.instances), instance.total_demand,
                sum(sub.total_capacity for sub in sol.instances),
                format_units(sum(s.assignment.cost for s in sol.solutions), instance.scale),
                format_units(sol.total_delay, instance.scale)])
    return buf.getvalue()
