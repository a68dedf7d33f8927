"""Batch front end: generate instances, solve, split into regions, simulate and sweep.

Every command writes its files under ``--out`` together with a manifest.json
that records the arguments, the seed, and sha256 sums of inputs and outputs.

Exit codes: 0 ok, 2 usage or malformed input, 3 infeasible input or a failed
check, 4 internal invariant violated.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from . import __version__
from .assignment import assignment_csv, min_cost_assignment
from .core import (
    FulfillmentError,
    InfeasibleError,
    Instance,
    InternalInvariantError,
    default_scale,
    dumps_canonical,
    format_units,
    load_instance,
    quantize,
    save_instance,
)
from .dynamics import compare_to_static, simulate
from .equilibrium import (
    NotOptimalError,
    backlogs_csv,
    delays_csv,
    min_delay_equilibrium,
    solution_from_dict,
    solution_json,
    verify_equilibrium,
)
from .generators import (
    ReconstructionMismatch,
    SyntheticConfig,
    continuous_line_split,
    generate_continuous_line,
    generate_line_lb,
    generate_line_noncontig,
    generate_synthetic_national,
    generate_tree2,
    generate_tree_r,
    line_lb_regions,
)
from .regionalize import (
    RegionInfeasibleError,
    euclidean_scale_decomposition,
    global_fc_grouping,
    grid_regionalization,
    k_regionalization,
    line_scale_decomposition,
    load_regionalization,
    make_regionalization,
    regional_csv,
    regionalization_to_dict,
    solve_regionalized,
    trivial_regionalization,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4

DEFAULT_ALPHAS = "0,0.25,0.5,0.75,1"


class CheckFailed(FulfillmentError):
    """A verification command found a violated condition."""


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Run:
    """Collects the files one command writes and emits the manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def read_input(self, path: str) -> bytes:
        with open(path, "rb") as fh:
            data = fh.read()
        self.inputs[path] = _sha256(data)
        return data

    def write(self, name: str, data: str | bytes) -> str:
        if isinstance(data, str):
            data = data.encode("utf-8")
        path = os.path.join(self.out, name)
        with open(path, "wb") as fh:
            fh.write(data)
        self.outputs[path] = _sha256(data)
        return path

    def write_json(self, name: str, doc) -> str:
        return self.write(name, dumps_canonical(doc))

    def manifest(self) -> dict:
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out", "command")}
        return {
            "command": self.args.command,
            "parameters": params,
            "seed": getattr(self.args, "seed", None),
            "scale": default_scale(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": __version__,
        }

    def finish(self) -> None:
        path = os.path.join(self.out, "manifest.json")
        with open(path, "wb") as fh:
            fh.write(dumps_canonical(self.manifest()))


def _load(run: Run, path: str) -> Instance:
    return load_instance(run.read_input(path))


def _load_regions(run: Run, path: str):
    run.read_input(path)
    return load_regionalization(path)


def _mean(total: int, weight: int, scale: int) -> str:
    # per-unit average rounded to the nearest scale unit
    if weight == 0:
        return "0"
    return format_units(round(Fraction(total, weight)), scale)


# --------------------------------------------------------------------------
# generate


def _synthetic_config(args) -> SyntheticConfig:
    return SyntheticConfig(
        seed=args.seed,
        n_demands=args.n_demands,
        n_fcs=args.n_fcs,
        alpha=Fraction(args.alpha),
        clusters=args.clusters,
    )


def cmd_generate(args) -> int:
    run = Run(args)
    kind = args.kind
    regions = None
    if kind == "continuous-line":
        inst = generate_continuous_line(args.n)
        regions = global_fc_grouping(inst, continuous_line_split(inst))
    elif kind == "line-lb":
        inst = generate_line_lb(args.k, args.dprime, Fraction(args.L))
        regions = make_regionalization(line_lb_regions(inst))
    elif kind == "line-noncontig":
        inst, parts = generate_line_noncontig()
        regions = global_fc_grouping(inst, parts)
    elif kind == "tree2":
        inst = generate_tree2(Fraction(args.L), Fraction(args.eps), verify=not args.no_verify)
    elif kind == "tree-r":
        inst = generate_tree_r(args.r, Fraction(args.L), Fraction(args.eps), verify=not args.no_verify)
    elif kind == "synthetic":
        inst = generate_synthetic_national(_synthetic_config(args))
    else:  # argparse choices make this unreachable
        raise InternalInvariantError(f"unknown kind {kind}")
    path = run.write("instance.json", save_instance(inst))
    print(f"{kind}: {inst.n} demands, {inst.k} FCs -> {path}")
    if regions is not None:
        run.write_json("regions.json", regionalization_to_dict(regions))
    run.finish()
    return EXIT_OK


# --------------------------------------------------------------------------
# solve / regionalize / compare


def cmd_solve(args) -> int:
    run = Run(args)
    inst = _load(run, args.instance)
    scale = inst.scale
    mincost = min_cost_assignment(inst).cost
    summary = {
        "demand": inst.total_demand,
        "min_cost": format_units(mincost, scale),
    }
    if args.regions is None:
        sol = min_delay_equilibrium(inst)
        if args.verify:
            verdict = verify_equilibrium(inst, sol)
            if not verdict.ok:
                raise CheckFailed("; ".join(verdict.violations))
        run.write("assignment.csv", assignment_csv(inst, sol.assignment))
        run.write("backlogs.csv", backlogs_csv(inst, sol))
        run.write("delays.csv", delays_csv(inst, sol))
        run.write("solution.json", solution_json(inst, sol))
        summary.update(mode="global", regions=1, total_delay=format_units(sol.total_delay, scale))
        total, backlogs = sol.total_delay, sol.backlogs
    else:
        reg = _load_regions(run, args.regions)
        rsol = solve_regionalized(inst, reg)
        run.write("regions.csv", regional_csv(inst, rsol))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region", "fc_id", "backlog"])
        for p, (sub, s) in enumerate(zip(rsol.instances, rsol.solutions)):
            for j in sub.fc_ids:
                w.writerow([p, j, format_units(s.backlogs[j], scale)])
        run.write("backlogs.csv", buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region", "demand_id", "delay"])
        for p, (sub, s) in enumerate(zip(rsol.instances, rsol.solutions)):
            for i in sub.demand_ids:
                w.writerow([p, i, format_units(s.delays[i], scale)])
        run.write("delays.csv", buf.getvalue())
        summary.update(mode="regionalized", regions=reg.nonempty, total_delay=format_units(rsol.total_delay, scale))
        total, backlogs = rsol.total_delay, rsol.backlogs
    summary["average_delay"] = _mean(total, inst.total_demand, scale)
    summary["max_backlog"] = format_units(max(backlogs.values(), default=0), scale)
    run.write_json("summary.json", summary)
    run.finish()
    for key in ("mode", "regions", "total_delay", "average_delay", "min_cost", "max_backlog"):
        print(f"{key}: {summary[key]}")
    return EXIT_OK


def cmd_regionalize(args) -> int:
    run = Run(args)
    inst = _load(run, args.instance)
    method = args.method
    if method == "trivial":
        reg = trivial_regionalization(inst)
    elif method == "k":
        reg = k_regionalization(inst)
    elif method == "line-scale":
        reg = line_scale_decomposition(inst)
    elif method == "euclidean-scale":
        reg = euclidean_scale_decomposition(inst)
    elif method == "grid":
        x_cut = None if args.x_cut is None else quantize(args.x_cut, inst.scale, "x cut")
        y_cut = None if args.y_cut is None else quantize(args.y_cut, inst.scale, "y cut")
        reg = grid_regionalization(inst, x_cut, y_cut, fc_rule=args.fc_rule)
    else:
        raise InternalInvariantError(f"unknown method {method}")
    path = run.write_json("regions.json", regionalization_to_dict(reg))
    run.finish()
    print(f"{method}: {len(reg.parts)} parts, {reg.nonempty} with demand -> {path}")
    return EXIT_OK


def improvement(global_delay: int, regional_delay: int) -> Fraction:
    """(global - regional) / global; 0 when the global delay is 0."""
    if global_delay == 0:
        return Fraction(0)
    return Fraction(global_delay - regional_delay, global_delay)


def _percent(f: Fraction) -> str:
    return f"{float(f) * 100:.4f}"


def cmd_compare(args) -> int:
    run = Run(args)
    inst = _load(run, args.instance)
    reg = _load_regions(run, args.regions)
    scale = inst.scale
    glob = min_delay_equilibrium(inst).total_delay
    regional = solve_regionalized(inst, reg).total_delay
    gain = improvement(glob, regional)
    report = {
        "global_delay": format_units(glob, scale),
        "regional_delay": format_units(regional, scale),
        "min_cost": format_units(min_cost_assignment(inst).cost, scale),
        "regions": reg.nonempty,
        "improvement": str(gain),
        "improvement_percent": _percent(gain),
    }
    run.write_json("compare.json", report)
    run.finish()
    for key in ("global_delay", "regional_delay", "min_cost", "regions", "improvement_percent"):
        print(f"{key}: {report[key]}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    run = Run(args)
    inst = _load(run, args.instance)
    trace = simulate(inst, args.horizon, args.dt, sample_every=args.sample_every)
    run.write("trace.csv", trace.to_csv())
    sol = min_delay_equilibrium(inst)
    report = compare_to_static(trace, sol)
    doc = json.loads(report.to_json())
    doc.update(steps=trace.steps, dt=format_units(trace.dt_units, inst.scale), floor_events=trace.floor_events,
               max_mass_error=trace.max_mass_error)
    run.write_json("report.json", doc)
    run.finish()
    print(f"final residual: {report.final_residual:.6g}")
    print(f"oscillating: {report.oscillating}")
    return EXIT_OK


# --------------------------------------------------------------------------
# alpha sweep


def _sweep_point(cfg_kwargs: dict, alpha: str) -> tuple[str, int, int, int, int]:
    cfg = SyntheticConfig(alpha=Fraction(alpha), **cfg_kwargs)
    inst = generate_synthetic_national(cfg)
    sol = min_delay_equilibrium(inst)
    cost = min_cost_assignment(inst).cost
    return alpha, sol.total_delay, cost, max(sol.backlogs.values(), default=0), inst.scale


def parse_alphas(text: str) -> list[str]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            a = Fraction(tok)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {tok!r}") from None
        if not 0 <= a <= 1:
            raise argparse.ArgumentTypeError(f"alpha {tok} outside [0, 1]")
        out.append(tok)
    if not out:
        raise argparse.ArgumentTypeError("empty alpha grid")
    return out


def spearman(xs: list[float], ys: list[float]) -> float | None:
    """Rank correlation of delay against alpha; None when either series is constant."""
    from scipy.stats import spearmanr

    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return None
    return float(spearmanr(xs, ys).statistic)


def sweep_svg(rows: list[dict]) -> str:
    """Line chart of total delay and the min-cost baseline against alpha."""
    W, H, pad = 480, 320, 48
    alphas = [float(Fraction(r["alpha"])) for r in rows]
    delay = [float(r["total_delay"]) for r in rows]
    cost = [float(r["min_cost"]) for r in rows]
    lo = min(delay + cost)
    hi = max(delay + cost)
    span = hi - lo or 1.0

    def px(a: float) -> float:
        return pad + a * (W - 2 * pad)

    def py(v: float) -> float:
        return H - pad - (v - lo) / span * (H - 2 * pad)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(W), height=str(H), viewBox=f"0 0 {W} {H}")
    ET.SubElement(svg, "title").text = "Total delay versus alpha"
    ET.SubElement(svg, "line", x1=str(pad), y1=str(H - pad), x2=str(W - pad), y2=str(H - pad), stroke="black")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(pad), x2=str(pad), y2=str(H - pad), stroke="black")
    ET.SubElement(svg, "text", x=str(W // 2), y=str(H - 12), attrib={"text-anchor": "middle"}).text = "alpha"
    for name, key, ys, color in (("total delay", "total_delay", delay, "#1f77b4"), ("min cost", "min_cost", cost, "#ff7f0e")):
        pts = " ".join(f"{px(a):.2f},{py(v):.2f}" for a, v in zip(alphas, ys))
        ET.SubElement(svg, "polyline", points=pts, fill="none", stroke=color, attrib={"data-series": key})
        for r, a, v in zip(rows, alphas, ys):
            pt = ET.SubElement(svg, "circle", cx=f"{px(a):.2f}", cy=f"{py(v):.2f}", r="3", fill=color)
            # exact CSV values ride along for anyone scraping the plot
            pt.set("data-alpha", r["alpha"])
            pt.set("data-value", r[key])
        y_label = 20 if key == "total_delay" else 36
        ET.SubElement(svg, "text", x=str(W - pad), y=str(y_label), fill=color, attrib={"text-anchor": "end"}).text = name
    return ET.tostring(svg, encoding="unicode") + "\n"


def cmd_sweep_alpha(args) -> int:
    run = Run(args)
    cfg_kwargs = {"seed": args.seed, "n_demands": args.n_demands, "n_fcs": args.n_fcs, "clusters": args.clusters}
    alphas = args.alphas
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, [cfg_kwargs] * len(alphas), alphas))
    else:
        results = [_sweep_point(cfg_kwargs, a) for a in alphas]
    rows = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "total_delay", "min_cost", "gap", "max_backlog"])
    for alpha, delay, cost, top, scale in results:
        row = {
            "alpha": alpha,
            "total_delay": format_units(delay, scale),
            "min_cost": format_units(cost, scale),
            "gap": format_units(delay - cost, scale),
            "max_backlog": format_units(top, scale),
        }
        rows.append(row)
        w.writerow([row[c] for c in ("alpha", "total_delay", "min_cost", "gap", "max_backlog")])
    run.write("sweep.csv", buf.getvalue())
    run.write("sweep.svg", sweep_svg(rows))
    rho = spearman([float(Fraction(a)) for a in alphas], [r[1] for r in results])
    run.write_json("trend.json", {"spearman_delay_vs_alpha": rho})
    run.finish()
    sys.stdout.write(buf.getvalue())
    print(f"spearman(delay, alpha): {'n/a' if rho is None else f'{rho:.4f}'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def _verify_figures() -> list[str]:
    lines = []
    for name, build in (
        ("line-noncontig", generate_line_noncontig),
        ("tree2", generate_tree2),
        ("tree-r r=3", lambda: generate_tree_r(3)),
    ):
        build()
        lines.append(f"{name}: ok")
    return lines


def cmd_verify(args) -> int:
    run = Run(args)
    report: dict = {}
    if args.figures:
        try:
            report["figures"] = _verify_figures()
        except ReconstructionMismatch as exc:
            report["figures"] = str(exc).splitlines()
            run.write_json("verify.json", report)
            run.finish()
            raise
        for line in report["figures"]:
            print(line)
    if args.instance is not None:
        inst = _load(run, args.instance)
        if args.solution is not None:
            sol = solution_from_dict(inst, json.loads(run.read_input(args.solution)))
        else:
            sol = min_delay_equilibrium(inst)
        verdict = verify_equilibrium(inst, sol, check_optimal=not args.equilibrium_only)
        report["violations"] = list(verdict.violations)
        print("equilibrium: ok" if verdict.ok else "equilibrium: FAILED")
        for v in verdict.violations:
            print(f"  {v}")
    elif not args.figures:
        raise argparse.ArgumentTypeError("verify needs an instance file or --figures")
    run.write_json("verify.json", report)
    run.finish()
    return EXIT_OK if not report.get("violations") else EXIT_INFEASIBLE


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fulfilleq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a generated instance")
    p.add_argument("kind", choices=["continuous-line", "line-lb", "line-noncontig", "tree2", "tree-r", "synthetic"])
    p.add_argument("--n", type=int, default=1000, help="continuous-line: number of demand nodes")
    p.add_argument("--k", type=int, default=3, help="line-lb: number of FCs")
    p.add_argument("--dprime", type=int, default=10, help="line-lb: demand at the first node")
    p.add_argument("--L", default="100", help="line-lb and trees: long edge length")
    p.add_argument("--eps", default="1", help="trees: short edge length")
    p.add_argument("--r", type=int, default=3, help="tree-r: number of clusters")
    p.add_argument("--no-verify", action="store_true", help="trees: skip the reference value check")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--alpha", default="0.5", help="synthetic: weight of Voronoi capacities")
    p.add_argument("--n-demands", type=int, default=200)
    p.add_argument("--n-fcs", type=int, default=12)
    p.add_argument("--clusters", type=int, default=6)

    p = add("solve", cmd_solve, "minimum-delay equilibrium, global or per region")
    p.add_argument("instance")
    p.add_argument("--regions", help="regionalization JSON; omit for the global solve")
    p.add_argument("--verify", action="store_true", help="check the global solution before writing it")

    p = add("regionalize", cmd_regionalize, "write a regionalization file")
    p.add_argument("instance")
    p.add_argument("--method", required=True, choices=["trivial", "k", "line-scale", "euclidean-scale", "grid"])
    p.add_argument("--x-cut", help="grid: vertical cut (default: demand-weighted median)")
    p.add_argument("--y-cut", help="grid: horizontal cut (default: demand-weighted median)")
    p.add_argument("--fc-rule", choices=["flow", "location"], default="flow")

    p = add("simulate", cmd_simulate, "greedy fluid dynamics compared against the static equilibrium")
    p.add_argument("instance")
    p.add_argument("--horizon", type=int, default=100_000, help="number of steps")
    p.add_argument("--dt", default="0.01", help="step length in time units")
    p.add_argument("--sample-every", type=int)

    p = add("sweep-alpha", cmd_sweep_alpha, "total delay and min-cost baseline across capacity mixes")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--alphas", type=parse_alphas, default=parse_alphas(DEFAULT_ALPHAS))
    p.add_argument("--n-demands", type=int, default=200)
    p.add_argument("--n-fcs", type=int, default=12)
    p.add_argument("--clusters", type=int, default=6)
    p.add_argument("--jobs", type=int, default=1)

    p = add("compare", cmd_compare, "global versus regional delay")
    p.add_argument("instance")
    p.add_argument("--regions", required=True)

    p = add("verify", cmd_verify, "check a solution, or rebuild the worked examples")
    p.add_argument("instance", nargs="?")
    p.add_argument("--solution", help="solution JSON to check (default: solve first)")
    p.add_argument("--equilibrium-only", action="store_true", help="skip the optimality check")
    p.add_argument("--figures", action="store_true", help="rebuild the worked examples and compare reference values")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except InternalInvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (InfeasibleError, RegionInfeasibleError, NotOptimalError, ReconstructionMismatch, CheckFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FulfillmentError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
