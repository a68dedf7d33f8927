"""Fluid simulation of greedy fulfillment: each demand follows travel time plus backlog.

Demand node i injects D_i units per unit time and FC j clears C_j.  At every
step each demand's rate goes to the FCs minimizing l_ij + beta_j(t), split
evenly on ties, and queues move by q_j <- max(0, q_j + (inflow_j - C_j) dt).
The argmin is taken on integers: beta_j = q_j / C_j is rounded to distance
scale units before it is added to l_ij.  Queues themselves are float64.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .assignment import Assignment
from .core import FulfillmentError, Instance, InternalInvariantError, format_units, quantize
from .equilibrium import EquilibriumSolution

MASS_TOLERANCE = 1e-9


class DynamicsError(FulfillmentError, ValueError):
    """Bad simulation parameters, or a trace compared against the wrong instance."""


@dataclass(frozen=True)
class DynamicsState:
    t: float
    queues: np.ndarray
    backlogs: np.ndarray


@dataclass
class DynamicsTrace:
    fc_ids: list[str]
    capacity: np.ndarray
    scale: int
    dt_units: int
    # sample times in scale units (exact multiples of dt)
    times: list[int] = field(default_factory=list)
    queues: list[np.ndarray] = field(default_factory=list)
    final_routing: np.ndarray | None = None
    floor_events: int = 0
    max_mass_error: float = 0.0
    steps: int = 0

    @property
    def dt(self) -> float:
        return self.dt_units / self.scale

    def state(self, s: int) -> DynamicsState:
        return DynamicsState(self.times[s] / self.scale, self.queues[s].copy(), self.backlogs()[s])

    def backlogs(self) -> np.ndarray:
        """samples x k array of beta_j(t) = q_j / C_j in time units."""
        q = np.array(self.queues, dtype=np.float64).reshape(len(self.queues), len(self.fc_ids))
        cap = self.capacity.astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.where(cap > 0, q / np.where(cap > 0, cap, 1.0), np.where(q > 0, np.inf, 0.0))
        return b

    def residuals(self, target: np.ndarray) -> np.ndarray:
        """max_j |beta_j(t) - target_j| per sample."""
        if len(self.queues) == 0:
            return np.zeros(0)
        return np.abs(self.backlogs() - target[None, :]).max(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "fc_id", "backlog"])
        b = self.backlogs()
        for s, t in enumerate(self.times):
            for c, j in enumerate(self.fc_ids):
                v = b[s, c]
                w.writerow([format_units(t, self.scale), j, "inf" if np.isinf(v) else format_units(int(round(v * self.scale)), self.scale)])
        return buf.getvalue()


def _routing_from_assignment(instance: Instance, x: Assignment) -> np.ndarray:
    m = x.matrix(instance).astype(np.float64)
    qty = instance.demand_qty.astype(np.float64)
    out = np.zeros_like(m)
    nz = qty > 0
    out[nz] = m[nz] / qty[nz, None]
    return out


def _quantized_backlog(q: np.ndarray, cap: np.ndarray, scale: int) -> np.ndarray:
    big = np.iinfo(np.int64).max // 4
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.rint(q / np.where(cap > 0, cap, 1.0) * scale)
    b = np.where(cap > 0, np.minimum(b, big), np.where(q > 0, big, 0))
    return b.astype(np.int64)


def simulate(
    instance: Instance,
    horizon: int,
    dt: float | str = "0.01",
    sample_every: int | None = None,
    routing: str | Assignment = "greedy",
    initial_backlog: dict[str, int] | None = None,
) -> DynamicsTrace:
    """Run ``horizon`` steps of length ``dt`` (time units) and sample the queues.

    ``routing`` is "greedy" (argmin of l_ij + beta_j, even split on ties) or a
    fixed Assignment whose per-demand proportions are used at every step.
    ``initial_backlog`` gives beta_j(0) in scale units; queues start at beta_j C_j.
    """
    scale = instance.scale
    dt_units = quantize(dt, scale, "dt")
    if dt_units <= 0:
        raise DynamicsError(f"time step must be positive, got {dt}")
    dt = dt_units / scale
    if horizon < 0:
        raise DynamicsError("horizon must be nonnegative")
    if sample_every is None:
        sample_every = max(1, horizon // 1000)
    if sample_every < 1:
        raise DynamicsError("sample_every must be positive")
    L = instance.distances
    rate = instance.demand_qty.astype(np.float64)
    cap = instance.capacity.astype(np.float64)
    q = np.zeros(instance.k, dtype=np.float64)
    if initial_backlog:
        for j, b in initial_backlog.items():
            if j not in instance.fc_index:
                raise DynamicsError(f"initial backlog for unknown fc {j!r}")
            q[instance.fc_index[j]] = int(b) * cap[instance.fc_index[j]] / scale
    fixed = fixed_inflow = None
    if isinstance(routing, Assignment):
        fixed = _routing_from_assignment(instance, routing)
        # integer column sums: no rounding from the per-demand proportions
        fixed_inflow = routing.matrix(instance).sum(axis=0).astype(np.float64)
    elif routing != "greedy":
        raise DynamicsError(f"routing must be 'greedy' or an Assignment, got {routing!r}")

    trace = DynamicsTrace(list(instance.fc_ids), instance.capacity.copy(), scale, dt_units)
    trace.times.append(0)
    trace.queues.append(q.copy())
    frac = fixed
    for step in range(1, horizon + 1):
        if fixed is None:
            score = L + _quantized_backlog(q, cap, scale)[None, :]
            mask = score == score.min(axis=1, keepdims=True)
            frac = mask / mask.sum(axis=1, keepdims=True)
            inflow = rate @ frac
        else:
            inflow = fixed_inflow
        raw = q + (inflow - cap) * dt
        new = np.maximum(raw, 0.0)
        if (raw < 0).any():
            trace.floor_events += 1
        # injected - processed - delta q, with processed = C dt minus idle time
        processed = cap * dt - (new - raw)
        err = abs(rate.sum() * dt - processed.sum() - (new - q).sum())
        scale_ref = max(1.0, rate.sum() * dt, float(q.sum()))
        trace.max_mass_error = max(trace.max_mass_error, err / scale_ref)
        q = new
        if step % sample_every == 0 or step == horizon:
            trace.times.append(step * dt_units)
            trace.queues.append(q.copy())
    trace.steps = horizon
    if trace.max_mass_error > MASS_TOLERANCE:
        raise InternalInvariantError(f"mass balance drifted by {trace.max_mass_error:.3g} (relative)")
    trace.final_routing = None if frac is None else np.array(frac, copy=True)
    return trace


@dataclass(frozen=True)
class ConvergenceReport:
    final_residual: float
    mean_residual: float
    oscillating: bool
    final_backlogs: dict[str, float]
    target: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "final_residual": self.final_residual,
                "mean_residual": self.mean_residual,
                "oscillating": self.oscillating,
                "final_backlogs": self.final_backlogs,
                "target": self.target,
            },
            indent=2,
            sort_keys=True,
        )


def compare_to_static(trace: DynamicsTrace, sol: EquilibriumSolution, tolerance: float | None = None) -> ConvergenceReport:
    """Residual max_j |beta_j(t) - beta*_j| against a static solution.

    ``oscillating`` is set when the residual over the last quarter of samples
    neither falls below ``tolerance`` (default: two steps of the largest
    per-step backlog change) nor shrinks relative to the quarter before it.
    """
    if set(sol.backlogs) != set(trace.fc_ids):
        raise DynamicsError("trace and solution cover different FCs")
    target = np.array([sol.backlogs[j] / trace.scale for j in trace.fc_ids], dtype=np.float64)
    res = trace.residuals(target)
    if res.size == 0:
        raise DynamicsError("empty trace")
    if tolerance is None:
        cap = trace.capacity[trace.capacity > 0]
        tolerance = 2.0 * trace.dt * (float(trace.capacity.sum()) / float(cap.min()) if cap.size else 1.0)
    m = res.size
    last = res[(3 * m) // 4 :]
    prev = res[m // 2 : (3 * m) // 4]
    decaying = prev.size == 0 or last.max() < 0.5 * prev.max()
    oscillating = bool(last.max() > tolerance and not decaying)
    final = trace.backlogs()[-1]
    return ConvergenceReport(
        float(res[-1]),
        float(res.mean()),
        oscillating,
        {j: float(v) for j, v in zip(trace.fc_ids, final)},
        {j: float(v) for j, v in zip(trace.fc_ids, target)},
    )
