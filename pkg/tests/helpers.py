"""Seeded random instance builders shared by the unit, property and acceptance tests."""

from __future__ import annotations

import numpy as np

from fulfilleq.core import EuclideanMetric, Instance, LineMetric, MatrixMetric, Site, TreeMetric

SCALE = 10**6
METRICS = ("line", "euclidean", "tree", "matrix")
ORACLE_METRICS = ("line", "tree", "matrix")


def _quantities(rng, count: int, lo: int, hi: int) -> list[int]:
    return [int(v) for v in rng.integers(lo, hi + 1, size=count)]


def _capacities(rng, k: int, total_demand: int, lo: int = 0, hi: int = 6) -> list[int]:
    caps = _quantities(rng, k, lo, hi)
    # keep the instance feasible by padding random FCs
    while sum(caps) < total_demand:
        caps[int(rng.integers(k))] += 1
    return caps


def random_instance(
    rng: np.random.Generator,
    n: int,
    k: int,
    metric: str = "line",
    demand: tuple[int, int] = (0, 4),
    capacity: tuple[int, int] = (0, 6),
    max_coord: int = 20,
    scale: int = SCALE,
) -> Instance:
    """Integer data on a chosen metric; total capacity covers total demand."""
    dq = _quantities(rng, n, *demand)
    cq = _capacities(rng, k, sum(dq), *capacity)
    dids = [f"i{a}" for a in range(n)]
    fids = [f"j{b}" for b in range(k)]
    if metric == "line":
        dl = [int(v) * scale for v in rng.integers(0, max_coord + 1, size=n)]
        fl = [int(v) * scale for v in rng.integers(0, max_coord + 1, size=k)]
        m = LineMetric()
    elif metric == "euclidean":
        dl = [tuple(int(v) * scale for v in rng.integers(0, max_coord + 1, size=2)) for _ in range(n)]
        fl = [tuple(int(v) * scale for v in rng.integers(0, max_coord + 1, size=2)) for _ in range(k)]
        m = EuclideanMetric(2)
    elif metric == "tree":
        size = int(rng.integers(2, 9))
        nodes = tuple(f"v{t}" for t in range(size))
        edges = tuple(
            (nodes[t], nodes[int(rng.integers(t))], int(rng.integers(0, max_coord // 2 + 1)) * scale)
            for t in range(1, size)
        )
        m = TreeMetric(nodes, edges)
        dl = [nodes[int(v)] for v in rng.integers(size, size=n)]
        fl = [nodes[int(v)] for v in rng.integers(size, size=k)]
    elif metric == "matrix":
        m = MatrixMetric(rng.integers(0, max_coord + 1, size=(n, k)).astype(np.int64) * scale)
        dl, fl = list(range(n)), list(range(k))
    else:
        raise ValueError(metric)
    return Instance(
        [Site(i, loc, q) for i, loc, q in zip(dids, dl, dq)],
        [Site(j, loc, c) for j, loc, c in zip(fids, fl, cq)],
        m,
        scale,
    )


def oracle_instance(rng: np.random.Generator, metric: str | None = None) -> Instance:
    """Small enough for the delay oracle: total demand <= 8, at most 3 FCs, short distances."""
    # euclidean distances are irrational, which leaves no usable backlog grid
    metric = metric or ORACLE_METRICS[int(rng.integers(len(ORACLE_METRICS)))]
    n = int(rng.integers(1, 5))
    k = int(rng.integers(1, 4))
    while True:
        inst = random_instance(rng, n, k, metric, demand=(1, 3), capacity=(0, 4), max_coord=4)
        if inst.total_demand <= 8:
            return inst
        n = max(1, n - 1)


def unit_line_instance(rng: np.random.Generator, n: int, k: int, scale: int = SCALE) -> Instance:
    """Unit demands and unit capacities at random 3-decimal positions on [0, 100]."""
    pos_d = rng.integers(0, 100_000 + 1, size=n)
    pos_f = rng.integers(0, 100_000 + 1, size=k)
    step = scale // 1000
    return Instance(
        [Site(f"i{a}", int(p) * step, 1) for a, p in enumerate(pos_d)],
        [Site(f"j{b}", int(p) * step, 1) for b, p in enumerate(pos_f)],
        LineMetric(),
        scale,
    )


def unit_plane_instance(rng: np.random.Generator, n: int, k: int, scale: int = SCALE) -> Instance:
    """Unit demands and capacities at random 3-decimal points of [0, 100]^2."""
    step = scale // 1000
    pts = lambda count: [tuple(int(v) * step for v in rng.integers(0, 100_000 + 1, size=2)) for _ in range(count)]
    return Instance(
        [Site(f"i{a}", p, 1) for a, p in enumerate(pts(n))],
        [Site(f"j{b}", p, 1) for b, p in enumerate(pts(k))],
        EuclideanMetric(2),
        scale,
    )
