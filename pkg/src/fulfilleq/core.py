"""Instances, metrics, exact quantities and the JSON instance format.

Every distance is held as an integer number of scale units (``10**6`` per
base unit unless ``FE_SCALE`` says otherwise); demands and capacities are
plain integers.  Nothing downstream ever compares floats.
"""

from __future__ import annotations

import io
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from functools import cached_property
from typing import IO, Any, Iterable, Sequence

import numpy as np

DEFAULT_SCALE = 10**6
QUANTIZATION_TOLERANCE = Fraction(1, 10**9)


class FulfillmentError(Exception):
    """Base class for all errors raised by this package."""


class InstanceError(FulfillmentError, ValueError):
    """Malformed document or violated instance invariant."""


class QuantizationError(InstanceError):
    pass


class InfeasibleError(FulfillmentError):
    """Demand cannot be covered by the available supply."""


class UnknownIdError(FulfillmentError, KeyError):
    pass


class BoundExceededError(FulfillmentError, ValueError):
    """An exhaustive routine was asked to enumerate too large a space."""


class InternalInvariantError(FulfillmentError, AssertionError):
    """Something that is provably impossible happened; indicates a bug."""


def default_scale() -> int:
    raw = os.environ.get("FE_SCALE")
    if raw is None:
        return DEFAULT_SCALE
    try:
        scale = int(raw)
    except ValueError:
        raise InstanceError(f"FE_SCALE must be an integer power of ten, got {raw!r}") from None
    check_scale(scale)
    return scale


def check_scale(scale: int) -> None:
    s = scale
    while s > 1 and s % 10 == 0:
        s //= 10
    if scale < 1 or s != 1:
        raise InstanceError(f"scale must be a positive power of ten, got {scale}")


def quantize(value: Any, scale: int, what: str = "value") -> int:
    """Convert a decimal string, int or Fraction to integer scale units.

    Rejects inputs whose relative quantization error exceeds 1e-9.
    """
    if isinstance(value, bool):
        raise InstanceError(f"{what}: expected a decimal, got {value!r}")
    if isinstance(value, (int, Fraction)):
        exact = Fraction(value) * scale
    else:
        try:
            dec = Decimal(str(value).strip())
        except InvalidOperation:
            raise InstanceError(f"{what}: not a decimal number: {value!r}") from None
        if not dec.is_finite():
            raise InstanceError(f"{what}: not finite: {value!r}")
        exact = Fraction(dec) * scale
    q = round(exact)
    if exact != 0 and abs(q - exact) / abs(exact) > QUANTIZATION_TOLERANCE:
        raise QuantizationError(
            f"{what}: {value!r} is not representable at scale {scale} "
            f"(relative error {float(abs(q - exact) / abs(exact)):.3g})"
        )
    return int(q)


def format_units(q: int, scale: int) -> str:
    """Exact decimal rendering of ``q`` scale units, e.g. 400000 -> '0.4'."""
    q = int(q)
    sign = "-" if q < 0 else ""
    whole, frac = divmod(abs(q), scale)
    if frac == 0:
        return f"{sign}{whole}"
    width = len(str(scale)) - 1
    digits = str(frac).rjust(width, "0").rstrip("0")
    return f"{sign}{whole}.{digits}"


def parse_quantity(value: Any, what: str) -> int:
    """Demands and capacities: nonnegative integers (ints or integer strings)."""
    if isinstance(value, bool):
        raise InstanceError(f"{what}: expected an integer, got {value!r}")
    if isinstance(value, int):
        q = value
    else:
        try:
            dec = Decimal(str(value).strip())
        except InvalidOperation:
            raise InstanceError(f"{what}: not an integer: {value!r}") from None
        if not dec.is_finite() or dec != dec.to_integral_value():
            raise InstanceError(f"{what}: quantities must be integers, got {value!r}")
        q = int(dec)
    if q < 0:
        raise InstanceError(f"{what}: negative quantity {q}")
    return q


# --------------------------------------------------------------------------
# metrics


def _round_sqrt(s: np.ndarray) -> np.ndarray:
    """Nearest integer to sqrt(s) for nonnegative int64 ``s``, computed exactly."""
    r = np.floor(np.sqrt(s.astype(np.float64))).astype(np.int64)
    r = np.where(r * r > s, r - 1, r)
    r = np.where((r + 1) * (r + 1) <= s, r + 1, r)
    return r + (s - r * r > r)


class Metric:
    kind = "abstract"

    def check_loc(self, loc: Any, role: str, index: int) -> None:
        raise NotImplementedError

    def pairwise(self, dlocs: Sequence[Any], flocs: Sequence[Any]) -> np.ndarray:
        raise NotImplementedError

    def loc_to_json(self, loc: Any, scale: int) -> dict:
        raise NotImplementedError

    def to_json(self, instance: "Instance") -> dict:
        return {"type": self.kind}


@dataclass(frozen=True)
class LineMetric(Metric):
    """Scalar coordinates; distance is the absolute difference."""

    kind = "line"

    def check_loc(self, loc, role, index):
        if not isinstance(loc, int):
            raise InstanceError(f"{role} #{index}: line position must be a scalar")

    def pairwise(self, dlocs, flocs):
        d = np.asarray(dlocs, dtype=np.int64).reshape(-1, 1)
        f = np.asarray(flocs, dtype=np.int64).reshape(1, -1)
        return np.abs(d - f)

    def coords(self, loc: int) -> tuple[int, ...]:
        return (loc,)

    def loc_to_json(self, loc, scale):
        return {"pos": format_units(loc, scale)}


@dataclass(frozen=True)
class EuclideanMetric(Metric):
    """Points in R^dim; distance is the Euclidean norm rounded to the nearest unit."""

    dim: int
    kind = "euclidean"

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise InstanceError(f"euclidean dimension must be >= 1, got {self.dim!r}")

    def check_loc(self, loc, role, index):
        if not isinstance(loc, tuple) or len(loc) != self.dim:
            raise InstanceError(f"{role} #{index}: expected {self.dim} coordinates")

    def pairwise(self, dlocs, flocs):
        n, k = len(dlocs), len(flocs)
        if n == 0 or k == 0:
            return np.zeros((n, k), dtype=np.int64)
        d = np.array(dlocs, dtype=object).reshape(n, self.dim)
        f = np.array(flocs, dtype=object).reshape(k, self.dim)
        span = max(int(np.max(d)), int(np.max(f))) - min(int(np.min(d)), int(np.min(f)))
        if self.dim * span * span < 2**62:
            d64 = d.astype(np.int64)
            f64 = f.astype(np.int64)
            diff = d64[:, None, :] - f64[None, :, :]
            return _round_sqrt(np.sum(diff * diff, axis=2))
        out = np.empty((n, k), dtype=np.int64)
        for a in range(n):
            for b in range(k):
                s = sum((int(x) - int(y)) ** 2 for x, y in zip(d[a], f[b]))
                r = math.isqrt(s)
                out[a, b] = r + (s - r * r > r)
        return out

    def coords(self, loc: tuple[int, ...]) -> tuple[int, ...]:
        return loc

    def loc_to_json(self, loc, scale):
        return {"pos": [format_units(c, scale) for c in loc]}

    def to_json(self, instance):
        return {"type": self.kind, "dim": self.dim}


@dataclass(frozen=True)
class TreeMetric(Metric):
    """Shortest-path metric of a weighted tree; sites sit on named nodes."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, int], ...]
    kind = "tree"
    _adj: dict = field(init=False, repr=False, compare=False, hash=False)
    _cache: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(set(self.nodes)) != len(self.nodes):
            raise InstanceError("tree: duplicate node names")
        adj: dict[str, list[tuple[str, int]]] = {v: [] for v in self.nodes}
        for u, v, w in self.edges:
            if u not in adj or v not in adj:
                raise InstanceError(f"tree: edge ({u}, {v}) references an unknown node")
            if w < 0:
                raise InstanceError(f"tree: negative edge weight on ({u}, {v})")
            if u == v:
                raise InstanceError(f"tree: self-loop at {u}")
            adj[u].append((v, w))
            adj[v].append((u, w))
        if self.nodes:
            if len(self.edges) != len(self.nodes) - 1:
                raise InstanceError(
                    f"tree: {len(self.nodes)} nodes need {len(self.nodes) - 1} edges, "
                    f"got {len(self.edges)} (cyclic or disconnected)"
                )
            if len(self._sssp(self.nodes[0], adj)) != len(self.nodes):
                raise InstanceError("tree: graph is disconnected")
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_cache", {})

    @staticmethod
    def _sssp(src: str, adj: dict) -> dict[str, int]:
        dist = {src: 0}
        todo = deque([src])
        while todo:
            u = todo.popleft()
            for v, w in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + w
                    todo.append(v)
        return dist

    def distances_from(self, node: str) -> dict[str, int]:
        if node not in self._cache:
            self._cache[node] = self._sssp(node, self._adj)
        return self._cache[node]

    def path_edges(self, a: str, b: str) -> set[frozenset]:
        """Edges (as frozensets of endpoints) on the unique a-b path."""
        parent = {a: None}
        todo = deque([a])
        while todo:
            u = todo.popleft()
            if u == b:
                break
            for v, _ in self._adj[u]:
                if v not in parent:
                    parent[v] = u
                    todo.append(v)
        out = set()
        v = b
        while parent[v] is not None:
            out.add(frozenset((v, parent[v])))
            v = parent[v]
        return out

    def check_loc(self, loc, role, index):
        if loc not in self._adj:
            raise InstanceError(f"{role} #{index}: unknown tree node {loc!r}")

    def pairwise(self, dlocs, flocs):
        out = np.zeros((len(dlocs), len(flocs)), dtype=np.int64)
        for b, node in enumerate(flocs):
            dist = self.distances_from(node)
            for a, dnode in enumerate(dlocs):
                out[a, b] = dist[dnode]
        return out

    def loc_to_json(self, loc, scale):
        return {"node": loc}

    def to_json(self, instance):
        return {
            "type": self.kind,
            "nodes": list(self.nodes),
            "edges": [{"u": u, "v": v, "w": format_units(w, instance.scale)} for u, v, w in self.edges],
        }


@dataclass(frozen=True, eq=False)
class MatrixMetric(Metric):
    """Explicit demand x FC table.  Sites refer to rows/columns by index.

    The triangle inequality is not assumed anywhere.
    """

    table: np.ndarray
    kind = "matrix"

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int64)
        if t.ndim != 2:
            raise InstanceError("matrix: expected a 2-d table")
        if (t < 0).any():
            raise InstanceError("matrix: negative distance")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def check_loc(self, loc, role, index):
        axis = 0 if role == "demand" else 1
        if not isinstance(loc, int) or not 0 <= loc < self.table.shape[axis]:
            raise InstanceError(f"{role} #{index}: matrix index out of range")

    def pairwise(self, dlocs, flocs):
        return self.table[np.ix_(list(dlocs), list(flocs))].copy()

    def loc_to_json(self, loc, scale):
        return {}

    def to_json(self, instance):
        rows = instance.distances
        return {
            "type": self.kind,
            "rows": [[format_units(v, instance.scale) for v in row] for row in rows.tolist()],
        }


# --------------------------------------------------------------------------
# instance


@dataclass(frozen=True)
class Site:
    """A demand node (qty = D_i) or an FC (qty = C_j) at a metric location."""

    id: str
    loc: Any
    qty: int


@dataclass(frozen=True, eq=False)
class Instance:
    demands: tuple[Site, ...]
    fcs: tuple[Site, ...]
    metric: Metric
    scale: int = DEFAULT_SCALE

    def __post_init__(self):
        object.__setattr__(self, "demands", tuple(self.demands))
        object.__setattr__(self, "fcs", tuple(self.fcs))
        check_scale(self.scale)
        seen: set[str] = set()
        for role, sites in (("demand", self.demands), ("fc", self.fcs)):
            for idx, s in enumerate(sites):
                if not isinstance(s.id, str) or not s.id:
                    raise InstanceError(f"{role} #{idx}: id must be a nonempty string")
                if s.id in seen:
                    raise InstanceError(f"duplicate id {s.id!r}")
                seen.add(s.id)
                if not isinstance(s.qty, int) or s.qty < 0:
                    raise InstanceError(f"{role} {s.id!r}: negative or non-integer quantity {s.qty!r}")
                self.metric.check_loc(s.loc, role, idx)
        if self.total_demand > self.total_capacity:
            raise InfeasibleError(
                f"total demand {self.total_demand} exceeds total capacity {self.total_capacity}"
            )

    @property
    def k(self) -> int:
        return len(self.fcs)

    @property
    def n(self) -> int:
        return len(self.demands)

    @property
    def demand_ids(self) -> list[str]:
        return [s.id for s in self.demands]

    @property
    def fc_ids(self) -> list[str]:
        return [s.id for s in self.fcs]

    @cached_property
    def demand_index(self) -> dict[str, int]:
        return {s.id: a for a, s in enumerate(self.demands)}

    @cached_property
    def fc_index(self) -> dict[str, int]:
        return {s.id: b for b, s in enumerate(self.fcs)}

    @cached_property
    def demand_qty(self) -> np.ndarray:
        return np.array([s.qty for s in self.demands], dtype=np.int64)

    @cached_property
    def capacity(self) -> np.ndarray:
        return np.array([s.qty for s in self.fcs], dtype=np.int64)

    @property
    def total_demand(self) -> int:
        return sum(s.qty for s in self.demands)

    @property
    def total_capacity(self) -> int:
        return sum(s.qty for s in self.fcs)

    @cached_property
    def distances(self) -> np.ndarray:
        """Dense n x k table of scale-unit distances; computed on first use."""
        m = self.metric.pairwise([s.loc for s in self.demands], [s.loc for s in self.fcs])
        m = np.asarray(m, dtype=np.int64).reshape(self.n, self.k)
        m.setflags(write=False)
        return m

    def restrict(self, demand_ids: Iterable[str], fc_ids: Iterable[str]) -> "Instance":
        """Induced sub-instance on the given ids (order follows this instance)."""
        dset, fset = set(demand_ids), set(fc_ids)
        for i in dset:
            if i not in self.demand_index:
                raise UnknownIdError(f"unknown demand id {i!r}")
        for j in fset:
            if j not in self.fc_index:
                raise UnknownIdError(f"unknown fc id {j!r}")
        rows = [a for a, s in enumerate(self.demands) if s.id in dset]
        cols = [b for b, s in enumerate(self.fcs) if s.id in fset]
        sub = Instance(
            tuple(self.demands[a] for a in rows),
            tuple(self.fcs[b] for b in cols),
            self.metric,
            self.scale,
        )
        if "distances" in self.__dict__:
            m = self.distances[np.ix_(rows, cols)].copy()
            m.setflags(write=False)
            sub.__dict__["distances"] = m
        return sub

    def replace_sites(self, demands: Sequence[Site] | None = None, fcs: Sequence[Site] | None = None) -> "Instance":
        return Instance(
            tuple(self.demands if demands is None else demands),
            tuple(self.fcs if fcs is None else fcs),
            self.metric,
            self.scale,
        )

    def coords(self, site: Site) -> tuple[int, ...]:
        if not hasattr(self.metric, "coords"):
            raise InstanceError(f"{self.metric.kind} metric has no coordinates")
        return self.metric.coords(site.loc)


def distance(instance: Instance, i: str, j: str) -> int:
    """Exact distance in scale units between demand ``i`` and FC ``j``."""
    try:
        a = instance.demand_index[i]
    except KeyError:
        raise UnknownIdError(f"unknown demand id {i!r}") from None
    try:
        b = instance.fc_index[j]
    except KeyError:
        raise UnknownIdError(f"unknown fc id {j!r}") from None
    return int(instance.distances[a, b])


def aspect_ratio(instance: Instance) -> Fraction:
    """Max demand-FC distance over the min nonzero demand-FC distance."""
    m = instance.distances
    nz = m[m > 0]
    if nz.size == 0:
        raise InstanceError("aspect ratio undefined: every demand-FC distance is zero")
    return Fraction(int(nz.max()), int(nz.min()))


# --------------------------------------------------------------------------
# JSON format


def _site_loc(metric: Metric, raw: dict, role: str, index: int, scale: int) -> Any:
    where = f"{role} #{index}"
    if isinstance(metric, LineMetric):
        if "pos" not in raw:
            raise InstanceError(f"{where}: missing 'pos'")
        return quantize(raw["pos"], scale, f"{where} pos")
    if isinstance(metric, EuclideanMetric):
        pos = raw.get("pos")
        if not isinstance(pos, list):
            raise InstanceError(f"{where}: 'pos' must be a list of decimals")
        return tuple(quantize(p, scale, f"{where} pos") for p in pos)
    if isinstance(metric, TreeMetric):
        if "node" not in raw:
            raise InstanceError(f"{where}: missing 'node'")
        return str(raw["node"])
    return index


def _parse_metric(raw: Any, scale: int, n_demands: int, n_fcs: int) -> Metric:
    if not isinstance(raw, dict) or "type" not in raw:
        raise InstanceError("metric: expected an object with a 'type'")
    kind = raw["type"]
    if kind == "line":
        return LineMetric()
    if kind == "euclidean":
        dim = raw.get("dim")
        if not isinstance(dim, int) or isinstance(dim, bool):
            raise InstanceError("euclidean metric needs an integer 'dim'")
        return EuclideanMetric(dim)
    if kind == "tree":
        edges = []
        for e in raw.get("edges", []):
            if isinstance(e, dict):
                u, v, w = e.get("u"), e.get("v"), e.get("w")
            elif isinstance(e, list) and len(e) == 3:
                u, v, w = e
            else:
                raise InstanceError(f"tree: malformed edge {e!r}")
            edges.append((str(u), str(v), quantize(w, scale, f"tree edge ({u}, {v})")))
        nodes = [str(v) for v in raw.get("nodes", [])]
        for u, v, _ in edges:
            for x in (u, v):
                if x not in nodes:
                    nodes.append(x)
        return TreeMetric(tuple(nodes), tuple(edges))
    if kind == "matrix":
        rows = raw.get("rows")
        if not isinstance(rows, list) or len(rows) != n_demands:
            raise InstanceError(f"matrix: expected {n_demands} rows")
        table = []
        for a, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != n_fcs:
                raise InstanceError(f"matrix: row {a} must have {n_fcs} entries")
            table.append([quantize(v, scale, f"matrix[{a}]") for v in row])
        return MatrixMetric(np.array(table, dtype=np.int64).reshape(n_demands, n_fcs))
    raise InstanceError(f"unknown metric type {kind!r}")


def instance_from_dict(doc: Any, scale: int | None = None) -> Instance:
    scale = default_scale() if scale is None else scale
    check_scale(scale)
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    for key in ("metric", "demands", "fcs"):
        if key not in doc:
            raise InstanceError(f"missing top-level field {key!r}")
    raw_d, raw_f = doc["demands"], doc["fcs"]
    if not isinstance(raw_d, list) or not isinstance(raw_f, list):
        raise InstanceError("'demands' and 'fcs' must be lists")
    metric = _parse_metric(doc["metric"], scale, len(raw_d), len(raw_f))
    sites = {}
    for role, raw_list, qkey in (("demand", raw_d, "d"), ("fc", raw_f, "c")):
        out = []
        for idx, raw in enumerate(raw_list):
            if not isinstance(raw, dict) or "id" not in raw or qkey not in raw:
                raise InstanceError(f"{role} #{idx}: needs 'id' and {qkey!r}")
            out.append(
                Site(
                    str(raw["id"]),
                    _site_loc(metric, raw, role, idx, scale),
                    parse_quantity(raw[qkey], f"{role} {raw['id']!r}"),
                )
            )
        sites[role] = tuple(out)
    return Instance(sites["demand"], sites["fc"], metric, scale)


def load_instance(source: bytes | str | IO) -> Instance:
    """Parse an instance document (bytes, text, path-like string or stream)."""
    if hasattr(source, "read"):
        data = source.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, str) and not source.lstrip().startswith("{"):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InstanceError(f"instance is not UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"cannot parse instance JSON: {exc}") from None
    return instance_from_dict(doc)


def instance_to_dict(instance: Instance) -> dict:
    metric = instance.metric
    out = {"metric": metric.to_json(instance), "demands": [], "fcs": []}
    for role, sites, qkey in (("demands", instance.demands, "d"), ("fcs", instance.fcs, "c")):
        for s in sites:
            entry = {"id": s.id, qkey: s.qty}
            entry.update(metric.loc_to_json(s.loc, instance.scale))
            out[role].append(entry)
    return out


def dumps_canonical(doc: Any) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def save_instance(instance: Instance, dest: str | os.PathLike | IO | None = None) -> bytes:
    """Canonical UTF-8 JSON bytes; also written to ``dest`` when given."""
    data = dumps_canonical(instance_to_dict(instance))
    if dest is None:
        return data
    if hasattr(dest, "write"):
        dest.write(data if not isinstance(dest, io.TextIOBase) else data.decode("utf-8"))
    else:
        with open(dest, "wb") as fh:
            fh.write(data)
    return data
