import math
from fractions import Fraction

import pytest

from fulfilleq.core import InstanceError, Site, save_instance
from fulfilleq.equilibrium import min_delay_equilibrium
from fulfilleq.generators import (
    ReconstructionMismatch,
    SyntheticConfig,
    equal_capacities,
    generate_continuous_line,
    generate_line_lb,
    generate_synthetic_national,
    generate_tree2,
    generate_tree_r,
    line_lb_formulas,
    line_lb_regions,
    mix_capacities,
    tree_r_formulas,
    voronoi_capacities,
)
from fulfilleq.regionalize import make_regionalization, solve_regionalized


def test_continuous_line_shape():
    inst = generate_continuous_line(10)
    assert inst.n == 10 and inst.fc_ids == ["fc0", "fc04"]
    assert inst.demands[0].loc == 50_000 and inst.capacity.tolist() == [5, 5]
    with pytest.raises(InstanceError):
        generate_continuous_line(7)


@pytest.mark.parametrize("k, dprime, L", [(2, 1, 0), (2, 3, 5), (6, 2, 40)])
def test_line_lb_matches_closed_forms(k, dprime, L):
    inst = generate_line_lb(k, dprime, L)
    one, many = line_lb_formulas(k, dprime, L)
    assert min_delay_equilibrium(inst).total_delay == one * inst.scale
    assert solve_regionalized(inst, make_regionalization(line_lb_regions(inst))).total_delay == many * inst.scale


@pytest.mark.parametrize("r", [2, 3, 4, 5])
@pytest.mark.parametrize("L, eps", [(100, 1), (1000, 3), ("50.5", "0.25")])
def test_tree_r_closed_forms_hold(r, L, eps):
    # generation re-measures every reference delay and raises on any mismatch
    generate_tree_r(r, L, eps)


def test_tree_r_gap_grows_with_r():
    f = tree_r_formulas(6, 100, 1)
    assert f["natural-global"] / f["natural-alternate"] > 4


def test_tree2_other_parameters():
    generate_tree2(1000, 3)
    with pytest.raises(InstanceError):
        generate_tree2(1, 1)


def test_mismatch_report_lists_rows():
    err = ReconstructionMismatch("demo", [("a", 8, 8), ("b", 7, 9)], 1)
    text = str(err)
    assert "a: expected 8 got 8 [ok]" in text and "b: expected 7 got 9 [MISMATCH]" in text


def test_synthetic_is_deterministic():
    cfg = SyntheticConfig(seed=11, alpha="0.6")
    assert save_instance(generate_synthetic_national(cfg)) == save_instance(generate_synthetic_national(cfg))
    other = SyntheticConfig(seed=12, alpha="0.6")
    assert save_instance(generate_synthetic_national(other)) != save_instance(generate_synthetic_national(cfg))


def test_synthetic_capacity_totals():
    for alpha in ("0", "0.35", "1"):
        inst = generate_synthetic_national(SyntheticConfig(seed=4, alpha=alpha))
        assert inst.total_capacity == math.ceil(inst.total_demand * Fraction(11, 10))


def test_capacity_helpers():
    assert equal_capacities(10, 3) == [4, 3, 3]
    demands = [Site("a", (0, 0), 5), Site("b", (10, 0), 2)]
    # a -> first FC, b -> second; the shortfall of 1 lands on the smallest FC
    assert voronoi_capacities(demands, [(1, 0), (9, 0)], 8) == [5, 3]
    assert mix_capacities(Fraction(1), [6, 2], [4, 4]) == [6, 2]
    assert mix_capacities(Fraction(0), [6, 2], [4, 4]) == [4, 4]
    assert mix_capacities(Fraction(1, 2), [7, 1], [4, 4]) == [5, 3]


@pytest.mark.parametrize("bad", [dict(alpha=2), dict(n_fcs=0), dict(spread=0), dict(capacity_slack=-1)])
def test_config_validation(bad):
    with pytest.raises(InstanceError):
        SyntheticConfig(**bad)
