"""Deterministic instance builders: worked line and tree examples plus a synthetic planar family."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    EuclideanMetric,
    FulfillmentError,
    Instance,
    InstanceError,
    LineMetric,
    Site,
    TreeMetric,
    default_scale,
    quantize,
)


class ReconstructionMismatch(FulfillmentError):
    """A generated example does not reproduce its reference values."""

    def __init__(self, name: str, rows: list[tuple[str, int, int]], scale: int):
        self.name = name
        self.rows = rows
        lines = [f"{name}: reconstruction mismatch"]
        for label, want, got in rows:
            flag = "ok" if want == got else "MISMATCH"
            lines.append(f"  {label}: expected {Fraction(want, scale)} got {Fraction(got, scale)} [{flag}]")
        super().__init__("\n".join(lines))


def _check(name: str, rows: list[tuple[str, int, int]], scale: int) -> None:
    if any(want != got for _, want, got in rows):
        raise ReconstructionMismatch(name, rows, scale)


def _ids(prefix: str, count: int) -> list[str]:
    # zero padded so lexicographic and instance order agree
    width = len(str(count))
    return [f"{prefix}{t + 1:0{width}d}" for t in range(count)]


# --------------------------------------------------------------------------
# line examples


def generate_continuous_line(n: int, scale: int | None = None) -> Instance:
    """n unit demands at (t + 1/2)/n on [0, 1]; FCs at 0 and 0.4 with capacity n/2 each."""
    if not isinstance(n, int) or n <= 0 or n % 2:
        raise InstanceError(f"continuous line needs an even positive n, got {n!r}")
    scale = default_scale() if scale is None else scale
    demands = [
        Site(i, quantize(Fraction(2 * t + 1, 2 * n), scale, f"position of {i}"), 1)
        for t, i in enumerate(_ids("i", n))
    ]
    fcs = [Site("fc0", 0, n // 2), Site("fc04", quantize("0.4", scale), n // 2)]
    return Instance(demands, fcs, LineMetric(), scale)


def continuous_line_split(instance: Instance) -> list[list[str]]:
    """The two-region split at 0.5: [demands left of it] + [the rest]."""
    half = quantize("0.5", instance.scale)
    left = [s.id for s in instance.demands if s.loc < half]
    right = [s.id for s in instance.demands if s.loc >= half]
    return [left, right]


def generate_line_lb(k: int, dprime: int, L, scale: int | None = None) -> Instance:
    """Chain instance where one region pays a factor of order D' more than k regions.

    Segments [0,1], [1,2], ..., [k-2,k-1] have unit length and the last one
    [k-1, k+L] has length L+1.  Demand i_s sits at the left end of segment s
    and FC j_s at its right end; i_1 has D' units and j_1 capacity D', all
    other sites are unit.
    """
    if not isinstance(k, int) or k < 2:
        raise InstanceError(f"line-lb needs k >= 2, got {k!r}")
    if not isinstance(dprime, int) or dprime < 1:
        raise InstanceError(f"line-lb needs D' >= 1, got {dprime!r}")
    scale = default_scale() if scale is None else scale
    length = quantize(L, scale, "L")
    if length < 0:
        raise InstanceError("L must be nonnegative")
    dem_ids, fc_ids = _ids("i", k), _ids("j", k)
    demands = [Site(dem_ids[s], s * scale, dprime if s == 0 else 1) for s in range(k)]
    fcs = [Site(fc_ids[s], (s + 1) * scale, dprime if s == 0 else 1) for s in range(k - 1)]
    fcs.append(Site(fc_ids[k - 1], k * scale + length, 1))
    return Instance(demands, fcs, LineMetric(), scale)


def line_lb_formulas(k: int, dprime: int, L: Fraction | int) -> tuple[Fraction, Fraction]:
    """Closed-form (1-region delay, k-region delay) for generate_line_lb."""
    L = Fraction(L)
    one = dprime * (L + k) + (k - 1) * (L + 1) + Fraction((k - 1) * (k - 2), 2)
    return one, dprime + k - 1 + L


def line_lb_regions(instance: Instance) -> list[tuple[list[str], list[str]]]:
    """The k pairs (i_s, j_s) as separate regions."""
    return [([d.id], [f.id]) for d, f in zip(instance.demands, instance.fcs)]


def generate_line_noncontig(scale: int | None = None) -> tuple[Instance, list[list[str]]]:
    """Three unit demands and FCs where regrouping FCs beats the global assignment.

    Demands at 0, 2, 3 and FCs at 1, 3, 6.  The fixed demand partition puts the
    left demand alone and the right two together.  Grouping FCs as the global
    min-cost assignment does gives delay 8; the best grouping gives 7.
    """
    scale = default_scale() if scale is None else scale
    demands = [Site(i, p * scale, 1) for i, p in zip(("i1", "i2", "i3"), (0, 2, 3))]
    fcs = [Site(j, p * scale, 1) for j, p in zip(("j1", "j2", "j3"), (1, 3, 6))]
    inst = Instance(demands, fcs, LineMetric(), scale)
    parts = [["i1"], ["i2", "i3"]]
    verify_line_noncontig(inst, parts)
    return inst, parts


def verify_line_noncontig(inst: Instance, parts: list[list[str]]) -> None:
    from .regionalize import global_fc_grouping, search_best_fc_grouping, solve_regionalized

    glob = solve_regionalized(inst, global_fc_grouping(inst, parts)).total_delay
    best = solve_regionalized(inst, search_best_fc_grouping(inst, parts)).total_delay
    _check("line-non-contig", [("global grouping", 8 * inst.scale, glob), ("best grouping", 7 * inst.scale, best)], inst.scale)


# --------------------------------------------------------------------------
# tree examples

# Demands are a<g> and e<g>_<h>, FCs z<g> and f<g>_<h>, for clusters g = 1..r
# and h = 1..r-1.  Cluster g alone, with the FCs the global assignment gives
# it, is the natural contiguous region.


def _tree_lengths(L, eps, scale: int) -> tuple[int, int]:
    big, small = quantize(L, scale, "L"), quantize(eps, scale, "eps")
    if not 0 < small < big:
        raise InstanceError(f"tree examples need 0 < eps < L, got eps={eps}, L={L}")
    return big, small


def _unit_tree_instance(nodes, edges, demand_nodes, fc_nodes, scale: int) -> Instance:
    metric = TreeMetric(tuple(nodes), tuple(edges))
    demands = [Site(v, v, 1) for v in demand_nodes]
    fcs = [Site(v, v, 1) for v in fc_nodes]
    return Instance(demands, fcs, metric, scale)


def generate_tree2(L=100, eps=1, scale: int | None = None, verify: bool = True) -> Instance:
    """Two clusters on a path where regrouping FCs halves the natural regional delay.

    Path a1 - f1_1 - e1_1 - m - a2 - f2_1 - e2_1 with eps edges; z1 hangs off
    a1 at L and z2 off m at L - eps.  The global assignment (unique) sends a_g
    to z_g and e_g_1 to f_g_1.  The natural regions pay 4L; handing both z's
    to cluster 1 and both f's to cluster 2 pays 2L + 6 eps.
    """
    scale = default_scale() if scale is None else scale
    big, small = _tree_lengths(L, eps, scale)
    path = ["a1", "f1_1", "e1_1", "m", "a2", "f2_1", "e2_1"]
    edges = [(u, v, small) for u, v in zip(path, path[1:])]
    edges += [("a1", "z1", big), ("m", "z2", big - small)]
    inst = _unit_tree_instance(path + ["z1", "z2"], edges, ["a1", "e1_1", "a2", "e2_1"], ["z1", "z2", "f1_1", "f2_1"], scale)
    if verify:
        verify_tree2(inst, Fraction(big, scale), Fraction(small, scale))
    return inst


def generate_tree_r(r: int, L=100, eps=1, scale: int | None = None, verify: bool = True) -> Instance:
    """r clusters whose natural regions pay r^2 L while regrouped FCs pay about r L.

    Cluster g is the eps-path a<g> - f<g>_1 - e<g>_1 - ... - f<g>_<r-1> -
    e<g>_<r-1>, with z<g> hanging off a<g> at L.  For g >= 2, a<g> hangs off
    node g-2 of cluster 1's path by an eps edge.  All other lengths are eps.
    """
    if not isinstance(r, int) or r < 2:
        raise InstanceError(f"tree-r needs r >= 2, got {r!r}")
    scale = default_scale() if scale is None else scale
    big, small = _tree_lengths(L, eps, scale)
    nodes, edges, dem = [], [], []
    chains = []
    for g in range(1, r + 1):
        chain = [f"a{g}"] + [x for h in range(1, r) for x in (f"f{g}_{h}", f"e{g}_{h}")]
        chains.append(chain)
        nodes += chain + [f"z{g}"]
        edges += [(u, v, small) for u, v in zip(chain, chain[1:])]
        edges.append((f"a{g}", f"z{g}", big))
        dem += [f"a{g}"] + [f"e{g}_{h}" for h in range(1, r)]
    for g in range(2, r + 1):
        edges.append((chains[0][g - 2], f"a{g}", small))
    fcs = [f"z{g}" for g in range(1, r + 1)] + [f"f{g}_{h}" for g in range(1, r + 1) for h in range(1, r)]
    inst = _unit_tree_instance(nodes, edges, dem, fcs, scale)
    if verify:
        verify_tree_r(inst, r, Fraction(big, scale), Fraction(small, scale))
    return inst


def tree_clusters(r: int) -> list[list[str]]:
    """The natural contiguous demand partition: one part per cluster."""
    return [[f"a{g}"] + [f"e{g}_{h}" for h in range(1, r)] for g in range(1, r + 1)]


def tree_layers(r: int) -> list[list[str]]:
    """Non-contiguous partition: all a's together, then the h-th e of every cluster."""
    return [[f"a{g}" for g in range(1, r + 1)]] + [[f"e{g}_{h}" for g in range(1, r + 1)] for h in range(1, r)]


def tree_alternate_fcs(r: int) -> list[list[str]]:
    """FC grouping for the natural partition: cluster 1 takes every z, cluster g
    keeps its f's and borrows f1_<g-1>."""
    return [[f"z{g}" for g in range(1, r + 1)]] + [
        [f"f1_{g - 1}"] + [f"f{g}_{h}" for h in range(1, r)] for g in range(2, r + 1)
    ]


def tree_r_formulas(r: int, L, eps) -> dict[str, Fraction]:
    """Reference delays: natural regions with global FCs, the regrouped FCs, and the layers."""
    L, eps = Fraction(L), Fraction(eps)
    return {
        "natural-global": r * r * L,
        "natural-alternate": r * L + Fraction(r * (r * r + 3 * r - 2), 2) * eps,
        "layers-global": r * L + r * (r - 1) * eps,
    }


def _tree_measure(inst: Instance, r: int, alternate_fcs: list[list[str]]) -> dict[str, int]:
    from .regionalize import global_fc_grouping, make_regionalization, solve_regionalized

    nat = tree_clusters(r)
    return {
        "natural-global": solve_regionalized(inst, global_fc_grouping(inst, nat)).total_delay,
        "natural-alternate": solve_regionalized(inst, make_regionalization(zip(nat, alternate_fcs))).total_delay,
        "layers-global": solve_regionalized(inst, global_fc_grouping(inst, tree_layers(r))).total_delay,
    }


def verify_tree_r(inst: Instance, r: int, L, eps) -> None:
    from .regionalize import is_contiguous

    want = tree_r_formulas(r, L, eps)
    got = _tree_measure(inst, r, tree_alternate_fcs(r))
    rows = [(name, int(want[name] * inst.scale), got[name]) for name in want]
    if not is_contiguous(inst, tree_clusters(r)):
        rows.append(("natural partition contiguous (1 = yes)", inst.scale, 0))
    _check(f"tree-r (r={r})", rows, inst.scale)


def tree2_formulas(L, eps) -> dict[str, Fraction]:
    L, eps = Fraction(L), Fraction(eps)
    return {
        "natural-global": 4 * L,
        "natural-alternate": 2 * L + 6 * eps,
        "layers-global": 2 * L + 2 * eps,
    }


def verify_tree2(inst: Instance, L, eps) -> None:
    """Check the reference delays, uniqueness of the global optimum, and that
    no other balanced contiguous partition beats 4L with the global FCs."""
    from .assignment import enumerate_assignments
    from .regionalize import global_fc_grouping, is_contiguous, search_best_fc_grouping, solve_regionalized

    want = tree2_formulas(L, eps)
    got = _tree_measure(inst, 2, tree_alternate_fcs(2))
    rows = [(name, int(want[name] * inst.scale), got[name]) for name in want]
    best = solve_regionalized(inst, search_best_fc_grouping(inst, tree_clusters(2))).total_delay
    rows.append(("natural, best FC grouping", int(want["natural-alternate"] * inst.scale), best))
    costs = sorted(int((x * inst.distances).sum()) for x in enumerate_assignments(inst))
    rows.append(("number of optimal global assignments", inst.scale, inst.scale * costs.count(costs[0])))
    ids = inst.demand_ids
    balanced = []
    for other in ids[1:]:
        first = [ids[0], other]
        P = [first, [i for i in ids if i not in first]]
        if is_contiguous(inst, P):
            balanced.append(solve_regionalized(inst, global_fc_grouping(inst, P)).total_delay)
    rows.append(("best balanced contiguous, global FCs", int(want["natural-global"] * inst.scale), min(balanced)))
    _check("tree2", rows, inst.scale)


# --------------------------------------------------------------------------
# synthetic planar family


@dataclass(frozen=True)
class SyntheticConfig:
    """Clustered planar instance; capacities mix Voronoi and equal splits by ``alpha``."""

    seed: int = 7
    n_demands: int = 200
    n_fcs: int = 12
    alpha: Fraction = Fraction(1, 2)
    clusters: int = 6
    spread: float = 4.0
    width: float = 100.0
    height: float = 60.0
    # demand of a node at a cluster centre; falls off exponentially with radius
    peak_demand: int = 40
    fc_offset: tuple[float, float] = (1.5, 4.0)
    # total capacity = ceil((1 + slack) * total demand)
    capacity_slack: Fraction = Fraction(1, 10)

    def __post_init__(self):
        a = Fraction(self.alpha)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "capacity_slack", Fraction(self.capacity_slack))
        if self.capacity_slack < 0:
            raise InstanceError("capacity slack must be nonnegative")
        if not 0 <= a <= 1:
            raise InstanceError(f"alpha must lie in [0, 1], got {a}")
        if self.n_fcs < 1 or self.n_demands < 1 or self.clusters < 1:
            raise InstanceError("synthetic config needs at least one demand, FC and cluster")
        if self.spread <= 0 or self.width <= 0 or self.height <= 0:
            raise InstanceError("spread and extent must be positive")


def _clip(v: float, hi: float) -> float:
    return min(max(v, 0.0), hi)


def _synthetic_sites(cfg: SyntheticConfig, scale: int):
    rng = np.random.default_rng(cfg.seed)
    centres = np.column_stack(
        [rng.uniform(0.1, 0.9, cfg.clusters) * cfg.width, rng.uniform(0.1, 0.9, cfg.clusters) * cfg.height]
    )
    # a few heavy clusters and a long tail, like metro areas
    weight = 1.0 / np.arange(1, cfg.clusters + 1)
    weight /= weight.sum()

    def point(c: int, r: float) -> tuple[int, int]:
        ang = rng.uniform(0.0, 2.0 * math.pi)
        x = _clip(centres[c, 0] + r * math.cos(ang), cfg.width)
        y = _clip(centres[c, 1] + r * math.sin(ang), cfg.height)
        return quantize(f"{x:.3f}", scale), quantize(f"{y:.3f}", scale)

    demands = []
    for i in _ids("d", cfg.n_demands):
        c = int(rng.choice(cfg.clusters, p=weight))
        r = float(rng.exponential(cfg.spread))
        qty = 1 + int(round(cfg.peak_demand * math.exp(-r / cfg.spread)))
        demands.append(Site(i, point(c, r), qty))
    # FCs sit in rings around clusters rather than in their cores; the ring
    # is chosen by the square root of the cluster weight so the densest areas
    # get fewer FCs than their share of demand
    fc_weight = np.sqrt(weight)
    fc_weight /= fc_weight.sum()
    lo, hi = cfg.fc_offset
    fcs = []
    for j in _ids("f", cfg.n_fcs):
        c = int(rng.choice(cfg.clusters, p=fc_weight))
        r = float(rng.uniform(lo, hi)) * cfg.spread
        fcs.append((j, point(c, r)))
    return demands, fcs


def _top_up(caps: list[int], total: int) -> list[int]:
    """Add equal shares of the shortfall to the bottom decile (least capacity, lowest index)."""
    caps = list(caps)
    deficit = total - sum(caps)
    if deficit > 0:
        bottom = sorted(range(len(caps)), key=lambda b: (caps[b], b))[: max(1, math.ceil(len(caps) / 10))]
        share, rest = divmod(deficit, len(bottom))
        for t, b in enumerate(bottom):
            caps[b] += share + (1 if t < rest else 0)
    return caps


def voronoi_capacities(demands: list[Site], fc_locs: list[tuple[int, ...]], total: int) -> list[int]:
    """Each FC gets the demand of the nodes nearest to it (ties to the lowest FC), topped up to ``total``."""
    caps = [0] * len(fc_locs)
    F = np.array(fc_locs, dtype=np.int64)
    for s in demands:
        d2 = ((F - np.array(s.loc, dtype=np.int64)) ** 2).sum(axis=1)
        caps[int(np.argmin(d2))] += s.qty
    return _top_up(caps, total)


def equal_capacities(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [base + (1 if b < extra else 0) for b in range(k)]


def mix_capacities(alpha: Fraction, voronoi: list[int], equal: list[int]) -> list[int]:
    """floor(alpha C^v + (1 - alpha) C^e), with the rounding deficit topped up."""
    alpha = Fraction(alpha)
    caps = [math.floor(alpha * v + (1 - alpha) * e) for v, e in zip(voronoi, equal)]
    return _top_up(caps, sum(equal))


def generate_synthetic_national(cfg: SyntheticConfig, scale: int | None = None) -> Instance:
    """Seeded clustered planar instance with alpha-mixed capacities."""
    scale = default_scale() if scale is None else scale
    demands, fc_sites = _synthetic_sites(cfg, scale)
    total = math.ceil(sum(s.qty for s in demands) * (1 + cfg.capacity_slack))
    locs = [loc for _, loc in fc_sites]
    caps = mix_capacities(cfg.alpha, voronoi_capacities(demands, locs, total), equal_capacities(total, cfg.n_fcs))
    fcs = [Site(j, loc, c) for (j, loc), c in zip(fc_sites, caps)]
    return Instance(demands, fcs, EuclideanMetric(2), scale)
