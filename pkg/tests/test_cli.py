import csv
import hashlib
import json
import xml.etree.ElementTree as ET
from fractions import Fraction

import numpy as np
import pytest

from helpers import unit_line_instance

from fulfilleq import cli
from fulfilleq.core import InternalInvariantError, save_instance
from fulfilleq.regionalize import make_regionalization, regionalization_to_dict


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


def test_line_lb_global_and_regional(tmp_path):
    gen = tmp_path / "gen"
    assert run("generate", "line-lb", "--k", 3, "--dprime", 10, "--L", 100, "--out", gen) == 0
    assert run("solve", gen / "instance.json", "--verify", "--out", tmp_path / "g") == 0
    summary = read_json(tmp_path / "g" / "summary.json")
    assert summary["total_delay"] == "1233" and summary["min_cost"] == "112"
    backlogs = list(csv.reader((tmp_path / "g" / "backlogs.csv").open()))
    assert backlogs == [["fc_id", "backlog"], ["j1", "102"], ["j2", "101"], ["j3", "0"]]
    assert run("solve", gen / "instance.json", "--regions", gen / "regions.json", "--out", tmp_path / "r") == 0
    assert read_json(tmp_path / "r" / "summary.json")["total_delay"] == "112"


def test_continuous_line_averages(tmp_path):
    gen = tmp_path / "gen"
    assert run("generate", "continuous-line", "--n", 1000, "--out", gen) == 0
    run("solve", gen / "instance.json", "--out", tmp_path / "g")
    run("solve", gen / "instance.json", "--regions", gen / "regions.json", "--out", tmp_path / "r")
    assert read_json(tmp_path / "g" / "summary.json")["average_delay"] == "0.5"
    assert read_json(tmp_path / "r" / "summary.json")["average_delay"] == "0.3"


def test_manifest_records_checksums(tmp_path):
    run("generate", "continuous-line", "--n", 10, "--out", tmp_path)
    man = read_json(tmp_path / "manifest.json")
    assert man["command"] == "generate" and man["parameters"]["n"] == 10
    for path, digest in man["outputs"].items():
        assert hashlib.sha256(open(path, "rb").read()).hexdigest() == digest


def test_synthetic_generation_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "synthetic", "--seed", 7, "--alpha", "0.6", "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "instance.json").read_bytes() == (tmp_path / "b" / "instance.json").read_bytes()
    assert read_json(tmp_path / "a" / "manifest.json")["seed"] == 7


def test_scale_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FE_SCALE", "1000")
    run("generate", "line-lb", "--out", tmp_path)
    assert read_json(tmp_path / "manifest.json")["scale"] == 1000
    monkeypatch.setenv("FE_SCALE", "7")
    assert run("generate", "line-lb", "--out", tmp_path / "bad") == 2


def test_sweep_alpha_outputs(tmp_path):
    assert run("sweep-alpha", "--seed", 7, "--n-demands", 60, "--n-fcs", 6, "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert [r["alpha"] for r in rows] == ["0", "0.25", "0.5", "0.75", "1"]
    assert rows[-1]["gap"] == "0" and rows[-1]["total_delay"] == rows[-1]["min_cost"]
    svg = ET.parse(tmp_path / "sweep.svg").getroot()
    ns = "{http://www.w3.org/2000/svg}"
    values = {(c.get("data-alpha"), c.get("data-value")) for c in svg.iter(f"{ns}circle")}
    for r in rows:
        assert (r["alpha"], r["total_delay"]) in values and (r["alpha"], r["min_cost"]) in values
    # CSV outputs are bit-identical on a rerun
    run("sweep-alpha", "--seed", 7, "--n-demands", 60, "--n-fcs", 6, "--jobs", 2, "--out", tmp_path / "again")
    assert (tmp_path / "again" / "sweep.csv").read_bytes() == (tmp_path / "sweep.csv").read_bytes()


def test_alpha_grid_validation(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("sweep-alpha", "--alphas", "0,1.5", "--out", tmp_path)
    assert exc.value.code == 2


def test_compare_reports_improvement(tmp_path):
    inst = unit_line_instance(np.random.default_rng(2), 30, 32)
    path = tmp_path / "inst.json"
    path.write_bytes(save_instance(inst))
    assert run("regionalize", path, "--method", "trivial", "--out", tmp_path / "t") == 0
    run("compare", path, "--regions", tmp_path / "t" / "regions.json", "--out", tmp_path / "c1")
    assert read_json(tmp_path / "c1" / "compare.json")["improvement"] == "0"
    run("regionalize", path, "--method", "k", "--out", tmp_path / "k")
    run("compare", path, "--regions", tmp_path / "k" / "regions.json", "--out", tmp_path / "c2")
    rep = read_json(tmp_path / "c2" / "compare.json")
    g, opt = Fraction(rep["global_delay"]), Fraction(rep["min_cost"])
    assert Fraction(rep["regional_delay"]) == opt
    assert Fraction(rep["improvement"]) == (g - opt) / g


@pytest.mark.parametrize("method", ["line-scale", "euclidean-scale"])
def test_regionalize_scale_methods(tmp_path, method):
    inst = unit_line_instance(np.random.default_rng(4), 12, 12)
    path = tmp_path / "inst.json"
    path.write_bytes(save_instance(inst))
    assert run("regionalize", path, "--method", method, "--out", tmp_path) == 0
    assert "segments" in read_json(tmp_path / "regions.json")


def test_grid_method_needs_a_plane(tmp_path):
    run("generate", "line-lb", "--out", tmp_path)
    assert run("regionalize", tmp_path / "instance.json", "--method", "grid", "--out", tmp_path / "g") == 2
    run("generate", "synthetic", "--seed", 3, "--out", tmp_path / "s")
    assert run("regionalize", tmp_path / "s" / "instance.json", "--method", "grid", "--x-cut", "50", "--out", tmp_path / "sg") == 0


def test_infeasible_regions_exit_3(tmp_path):
    run("generate", "line-lb", "--out", tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(regionalization_to_dict(make_regionalization([(["i1", "i2", "i3"], ["j1"])]))))
    assert run("solve", tmp_path / "instance.json", "--regions", bad, "--out", tmp_path / "s") == 3


def test_verify_commands(tmp_path):
    assert run("verify", "--figures", "--out", tmp_path / "f") == 0
    run("generate", "line-lb", "--out", tmp_path)
    run("solve", tmp_path / "instance.json", "--out", tmp_path / "s")
    sol = tmp_path / "s" / "solution.json"
    assert run("verify", tmp_path / "instance.json", "--solution", sol, "--out", tmp_path / "v") == 0
    doc = read_json(sol)
    doc["backlogs"]["j3"] = 5
    sol.write_text(json.dumps(doc))
    assert run("verify", tmp_path / "instance.json", "--solution", sol, "--out", tmp_path / "v2") == 3
    assert read_json(tmp_path / "v2" / "verify.json")["violations"]


def test_usage_and_input_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("generate", "bogus", "--out", tmp_path)
    assert exc.value.code == 2
    assert run("solve", tmp_path / "missing.json", "--out", tmp_path) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run("solve", broken, "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("verify", "--out", tmp_path)
    assert exc.value.code == 2


def test_internal_errors_exit_4(tmp_path, monkeypatch):
    run("generate", "line-lb", "--out", tmp_path)

    def boom(_):
        raise InternalInvariantError("negative cycle")

    monkeypatch.setattr(cli, "min_delay_equilibrium", boom)
    assert run("solve", tmp_path / "instance.json", "--out", tmp_path / "s") == 4


def test_simulate_writes_trace(tmp_path):
    run("generate", "continuous-line", "--n", 10, "--out", tmp_path)
    assert run("simulate", tmp_path / "instance.json", "--horizon", 2000, "--dt", "0.01", "--out", tmp_path / "sim") == 0
    report = read_json(tmp_path / "sim" / "report.json")
    assert report["steps"] == 2000 and report["dt"] == "0.01"
    assert (tmp_path / "sim" / "trace.csv").read_text().startswith("t,fc_id,backlog\n0,fc0,0\n")
