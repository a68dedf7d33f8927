import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_instance, unit_line_instance

from fulfilleq.assignment import min_cost_assignment
from fulfilleq.core import Instance, InstanceError, LineMetric, Site, UnknownIdError
from fulfilleq.equilibrium import min_delay_equilibrium
from fulfilleq.generators import SyntheticConfig, generate_synthetic_national, generate_tree_r, tree_clusters, tree_layers
from fulfilleq.regionalize import (
    RegionInfeasibleError,
    euclidean_scale_decomposition,
    global_fc_grouping,
    grid_regionalization,
    is_contiguous,
    k_regionalization,
    line_scale_decomposition,
    load_regionalization,
    make_regionalization,
    regional_csv,
    regionalization_from_dict,
    regionalization_to_dict,
    search_best_fc_grouping,
    solve_regionalized,
    trivial_regionalization,
    validate_regionalization,
    within_factor,
    zero_beta_per_segment_check,
)

S = 10**6


def pair_line():
    return Instance(
        [Site("a", 0, 1), Site("b", 10 * S, 1)],
        [Site("x", S, 1), Site("y", 9 * S, 1)],
        LineMetric(),
        S,
    )


def test_validation_errors():
    inst = pair_line()
    with pytest.raises(RegionInfeasibleError):
        validate_regionalization(inst, make_regionalization([(["a", "b"], ["x"])]))
    with pytest.raises(RegionInfeasibleError):
        validate_regionalization(inst, make_regionalization([(["a"], ["x"]), (["a", "b"], ["y"])]))
    with pytest.raises(RegionInfeasibleError):
        validate_regionalization(inst, make_regionalization([(["a"], ["x", "y"])]))
    with pytest.raises(UnknownIdError):
        validate_regionalization(inst, make_regionalization([(["a", "zz"], ["x", "y"])]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 4))
def test_trivial_split_equals_global(seed, n, k):
    inst = random_instance(np.random.default_rng(seed), n, k, "euclidean")
    assert solve_regionalized(inst, trivial_regionalization(inst)).total_delay == min_delay_equilibrium(inst).total_delay


@given(st.integers(0, 2**32 - 1), st.integers(1, 15), st.integers(1, 6))
def test_k_regionalization_reaches_min_cost(seed, n, k):
    inst = random_instance(np.random.default_rng(seed), n, k, "tree", demand=(1, 1))
    res = solve_regionalized(inst, k_regionalization(inst))
    assert res.total_delay == min_cost_assignment(inst).cost
    assert set(res.backlogs.values()) <= {0}


def test_k_regionalization_needs_unit_demands():
    inst = Instance([Site("a", 0, 2)], [Site("x", 0, 2)], LineMetric(), S)
    with pytest.raises(InstanceError):
        k_regionalization(inst)


def test_grouping_search_is_exhaustive():
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = random_instance(rng, 5, 4, "line", demand=(1, 2), capacity=(1, 3))
        parts = [inst.demand_ids[:2], inst.demand_ids[2:]]
        best = solve_regionalized(inst, search_best_fc_grouping(inst, parts)).total_delay
        brute = None
        # every FC goes to part 0, part 1 or neither
        for labels in itertools.product((0, 1, 2), repeat=inst.k):
            groups = [[j for j, g in zip(inst.fc_ids, labels) if g == p] for p in (0, 1)]
            reg = make_regionalization(zip(parts, groups))
            try:
                v = solve_regionalized(inst, reg).total_delay
            except RegionInfeasibleError:
                continue
            brute = v if brute is None else min(brute, v)
        assert best == brute


def test_global_grouping_follows_min_cost_flow():
    inst = pair_line()
    reg = global_fc_grouping(inst, [["a"], ["b"]])
    assert [p.fcs for p in reg.parts] == [("x",), ("y",)]


def test_contiguity_on_trees():
    inst = generate_tree_r(3, verify=False)
    assert is_contiguous(inst, tree_clusters(3))
    assert not is_contiguous(inst, tree_layers(3))
    with pytest.raises(InstanceError):
        is_contiguous(pair_line(), [["a"], ["b"]])


def test_scale_decomposition_metric_checks():
    tree = generate_tree_r(2, verify=False)
    with pytest.raises(InstanceError):
        line_scale_decomposition(tree)
    with pytest.raises(InstanceError):
        euclidean_scale_decomposition(tree)


def test_scale_decomposition_segments():
    inst = unit_line_instance(np.random.default_rng(11), 20, 24)
    reg = line_scale_decomposition(inst)
    res = solve_regionalized(inst, reg)
    assert zero_beta_per_segment_check(inst, reg, res).ok
    assert set(reg.segments) == set(inst.demand_ids)
    assert not zero_beta_per_segment_check(inst, trivial_regionalization(inst), res).ok


def test_within_factor_is_exact():
    assert within_factor(6000, 1000, 1) and not within_factor(6001, 1000, 1)
    # 4 sqrt 2 + 2 = 7.65685...
    assert within_factor(7656, 1000, 2) and not within_factor(7657, 1000, 2)
    assert within_factor(0, 0, 2) and not within_factor(1, 0, 2)


def test_grid_split_is_feasible_and_covers():
    inst = generate_synthetic_national(SyntheticConfig(seed=2, alpha="0.6"))
    reg = grid_regionalization(inst)
    validate_regionalization(inst, reg)
    assert len(reg.parts) <= 4
    assert sorted(i for p in reg.parts for i in p.demands) == sorted(inst.demand_ids)
    with pytest.raises(InstanceError):
        grid_regionalization(pair_line())


def test_files_round_trip(tmp_path):
    inst = unit_line_instance(np.random.default_rng(5), 10, 12)
    reg = line_scale_decomposition(inst)
    path = tmp_path / "regions.json"
    path.write_text(json.dumps(regionalization_to_dict(reg)))
    back = load_regionalization(str(path))
    assert back.parts == reg.parts and back.segments == reg.segments
    with pytest.raises(InstanceError):
        regionalization_from_dict({"nope": []})
    text = regional_csv(inst, solve_regionalized(inst, back))
    assert text.splitlines()[-1].startswith("total,10,")


@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(2, 5))
def test_regional_delay_never_beats_min_cost(seed, n, k):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, k, "euclidean", demand=(1, 1), capacity=(1, 3))
    parts = [[i for i in inst.demand_ids if rng.integers(2) == p] for p in (0, 1)]
    try:
        reg = search_best_fc_grouping(inst, parts)
    except RegionInfeasibleError:
        return
    assert solve_regionalized(inst, reg).total_delay >= min_cost_assignment(inst).cost


def _best_with_parts(inst, r):
    best = None
    for dl in itertools.product(range(r), repeat=inst.n):
        for fl in itertools.product(range(r + 1), repeat=inst.k):
            reg = make_regionalization(
                ([i for i, g in zip(inst.demand_ids, dl) if g == p], [j for j, g in zip(inst.fc_ids, fl) if g == p])
                for p in range(r)
            )
            try:
                v = solve_regionalized(inst, reg).total_delay
            except RegionInfeasibleError:
                continue
            best = v if best is None else min(best, v)
    return best


def test_best_delay_is_monotone_in_region_count():
    rng = np.random.default_rng(17)
    for _ in range(6):
        inst = random_instance(rng, 3, 3, "line", demand=(1, 2), capacity=(1, 3), max_coord=6)
        values = [_best_with_parts(inst, r) for r in (1, 2, 3)]
        assert values[0] >= values[1] >= values[2]


def test_line_regions_keep_segments_apart():
    for seed in range(10):
        inst = unit_line_instance(np.random.default_rng(seed), 40, 45)
        reg = line_scale_decomposition(inst)
        L = inst.distances
        unit = int(L[L > 0].min())
        pos = {s.id: s.loc for s in inst.demands}
        for part in reg.parts:
            for a, b in itertools.combinations(part.demands, 2):
                sa, sb = reg.segments[a], reg.segments[b]
                if sa[0] == 0 or sa == sb:
                    continue
                assert sa[0] == sb[0]
                # two demands in different segments of one region are two segment widths apart
                width = unit << (sa[0] + 1)
                assert abs(pos[a] - pos[b]) >= 2 * width
