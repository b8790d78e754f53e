import csv
import dataclasses
import io
import itertools
import json
import math

import numpy as np
import pytest

from iresnet_bounds.adversary import (
    CSV_COLUMNS,
    FoolingFamily,
    SampleTrace,
    audit_membership,
    build_family,
    build_grid,
    ceil_root,
    count_floor,
    filter_grid,
    filter_mask,
    fit_loglog_slope,
    fooling_pair,
    guaranteed_floor,
    lower_bound_constant,
    lower_bound_value,
    mean_error_bound,
    run_experiment,
)
from iresnet_bounds.base_maps import BiLipschitzMap, diagonal_affine_map, identity_map
from iresnet_bounds.errors import BudgetExceeded, EmptyFilteredGrid, ImageTooSmall
from iresnet_bounds.hat import apply_shift
from iresnet_bounds.learners import GridLearner, make_learner
from iresnet_bounds.metrics import INF


def brute_filter(grid, trace):
    """Loop-over-everything oracle: keep z unless some (shifted) sample image is inside its open cube."""
    imgs = [grid.base.forward(x) for x in trace.points]
    if grid.variant == "conv":
        imgs = [apply_shift(y, j) for y in imgs for j in range(grid.d)]
    keep = []
    for z in grid.gamma:
        keep.append(not any(all(abs(y[k] - z[k]) < 1 / grid.M for k in range(grid.d)) for y in imgs))
    return np.array(keep)


def test_ceil_root_exact():
    for d in range(1, 5):
        for n in range(1, 400):
            k = ceil_root(n, d)
            assert k**d >= n and (k - 1) ** d < n


@pytest.mark.parametrize(
    "variant,m,d,K,M,size",
    [("iresnet", 10, 2, 6, 12.0, 36), ("iresnet", 1, 1, 3, 6.0, 3), ("conv", 10, 2, 8, 16.0, 64)],
)
def test_build_grid_examples(variant, m, d, K, M, size):
    g = build_grid(variant, m, identity_map(d))
    assert (g.K, g.M, g.size) == (K, M, size)
    n = 3 * m if variant == "iresnet" else 3 * d * m
    assert n <= g.size <= 2**d * n
    assert np.array_equal(g.x_star, np.full(d, 0.5))


def test_grid_layout_identity_d1():
    g = build_grid("iresnet", 1, identity_map(1))
    assert np.allclose(g.gamma[:, 0], [1 / 6, 1 / 2, 5 / 6], atol=1e-15)


@pytest.mark.parametrize("variant", ["iresnet", "conv"])
def test_grid_cubes_inside_inner_image_box(variant):
    for base in (identity_map(2), diagonal_affine_map([2.0, 3.0], [0.1, -0.2])):
        g = build_grid(variant, 7, base)
        centre = base.forward(g.x_star)
        assert np.all(np.abs(g.gamma - centre) + 1 / g.M <= 1 / (2 * base.C2) + 1e-12)
        # neighbouring centres are exactly 2/M apart, so open cubes tile without overlap
        diffs = np.unique(np.round(np.diff(np.unique(g.gamma[:, 0])), 12))
        assert diffs.size <= 1 and (diffs.size == 0 or diffs[0] == pytest.approx(2 / g.M))


def test_image_too_small_for_understated_constant():
    f = diagonal_affine_map([0.5, 0.5])
    liar = BiLipschitzMap(f.forward, f.inverse, f.C1, 1.0, 2, "liar")  # true C2 is 2
    with pytest.raises(ImageTooSmall):
        build_grid("iresnet", 3, liar)


@pytest.mark.parametrize("variant", ["iresnet", "conv"])
def test_filter_empty_trace_keeps_everything(variant):
    g = build_grid(variant, 5, identity_map(2))
    assert np.array_equal(filter_grid(g, SampleTrace.empty(2)), g.gamma)


def test_filter_one_sample_at_a_centre_removes_exactly_it():
    base = identity_map(2)
    g = build_grid("iresnet", 5, base)
    z = g.gamma[7]
    trace = SampleTrace.record(base.forward, [z])
    keep = filter_mask(g, trace)
    assert keep.sum() == g.size - 1 and not keep[7]


@pytest.mark.parametrize("variant", ["iresnet", "conv"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_filter_matches_brute_force_and_count_floor(variant, d):
    rng = np.random.default_rng(d)
    base = diagonal_affine_map(rng.uniform(0.8, 1.5, d))
    for _ in range(100):
        m = int(rng.integers(1, 12))
        g = build_grid(variant, m, base)
        n = int(rng.integers(0, 2 * m + 1))
        trace = SampleTrace.record(base.forward, rng.uniform(0, 1, (n, d)))
        keep = filter_mask(g, trace)
        assert np.array_equal(keep, brute_filter(g, trace))
        assert keep.sum() >= count_floor(g, n)
        assert keep.sum() >= (m if variant == "iresnet" else d * m)


@pytest.mark.parametrize("variant", ["iresnet", "conv"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_count_floor_with_samples_on_faces_and_corners(variant, d):
    rng = np.random.default_rng(10 + d)
    base = diagonal_affine_map(rng.uniform(0.8, 1.5, d))
    for _ in range(100):
        m = int(rng.integers(1, 12))
        g = build_grid(variant, m, base)
        n = 2 * m
        # images on centres, shared faces and shared corners of neighbouring cubes
        y = g.gamma[rng.integers(0, g.size, n)] + rng.choice([-1.0, 0.0, 1.0], (n, d)) / g.M
        trace = SampleTrace.record(base.forward, np.clip(base.inverse(y), 0, 1))
        keep = filter_mask(g, trace)
        assert keep.sum() >= (m if variant == "iresnet" else d * m)
        family = FoolingFamily(g)
        for z in g.gamma[keep][:10]:
            for v in (1, -1):
                assert np.max(np.abs(family.member(z, v)(trace.points) - trace.values)) <= 1e-15


def test_filter_budget_guard():
    g = build_grid("iresnet", 2, identity_map(1))
    with pytest.raises(BudgetExceeded):
        filter_mask(g, SampleTrace.record(identity_map(1).forward, np.linspace(0, 1, 5)[:, None]))


def test_guaranteed_floor_examples():
    assert guaranteed_floor(build_family("iresnet", 1, identity_map(1)), SampleTrace.empty(1)) == pytest.approx(1 / 36)
    assert guaranteed_floor(build_family("iresnet", 10, identity_map(2)), SampleTrace.empty(2)) == pytest.approx(1 / 144)


def test_guaranteed_floor_empty_filtered_grid():
    # a legal trace cannot empty a full grid, so shrink the grid to one centre
    family = build_family("iresnet", 1, identity_map(1))
    tiny = FoolingFamily(dataclasses.replace(family.grid, K=1, gamma=family.grid.gamma[:1]))
    trace = SampleTrace.record(family.base.forward, family.grid.gamma[:1])
    with pytest.raises(EmptyFilteredGrid):
        guaranteed_floor(tiny, trace)


@pytest.mark.parametrize("variant", ["iresnet", "conv"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_fooling_pair_properties(variant, d):
    base = diagonal_affine_map(np.linspace(0.9, 1.3, d), np.full(d, 0.05))
    family = build_family(variant, 3, base)
    rng = np.random.default_rng(d)
    for z in family.grid.gamma[:: max(1, family.grid.size // 5)]:
        pair = fooling_pair(family, z)
        x0 = family.maximizer(z)
        gap = pair.plus(x0) - pair.minus(x0)
        assert np.max(np.abs(gap)) == pytest.approx(2 * family.c, abs=1e-15)
        if variant == "iresnet":
            assert gap[0] == pytest.approx(2 * family.c, abs=1e-15) and np.all(gap[1:] == 0)
        # points whose image avoids every support cube see the base map
        x = rng.uniform(0, 1, (2000, d))
        y = base.forward(x)
        shifts = [apply_shift(y, j) for j in range(d)] if variant == "conv" else [y]
        far = np.all([np.max(np.abs(s - z), axis=-1) > 1 / family.M for s in shifts], axis=0)
        assert np.array_equal(pair.plus(x[far]), y[far]) and np.array_equal(pair.minus(x[far]), y[far])
        for v in (1, -1):
            assert audit_membership(family.block(z, v), variant, d).ok


def test_indistinguishable_on_trace():
    family = build_family("conv", 4, identity_map(2))
    trace = GridLearner(4, 2).sample(family.base.forward)
    for z in filter_grid(family.grid, trace):
        for v in (1, -1):
            vals = family.member(z, v)(trace.points)
            assert np.max(np.abs(vals - trace.values)) <= 1e-15


def test_mean_error_bound_example():
    family = build_family("iresnet", 1, identity_map(1))
    assert mean_error_bound(family, INF) == pytest.approx(1 / 432)


def test_lower_bound_constant_examples():
    assert lower_bound_constant(1, INF) == pytest.approx(1 / 576)
    assert lower_bound_constant(2, INF) == pytest.approx(1 / 2304)


def test_floor_dominates_proof_bound():
    for d in (1, 2, 3):
        for m in range(1, 200, 7):
            for variant in ("iresnet", "conv"):
                family = build_family(variant, m, identity_map(d))
                assert family.c >= lower_bound_value(variant, d, INF, m)


def test_floor_scaling_band():
    for d in (1, 2, 3):
        ratios = [build_family("iresnet", m, identity_map(d)).c * m ** (1 / d) for m in range(1, 1001, 9)]
        assert 0 < min(ratios) and max(ratios) / min(ratios) <= 2.0 + 1e-12


def test_loglog_slope_closed_form_d1():
    ms = [1, 10, 100]
    floors = [build_family("iresnet", m, identity_map(1)).c for m in ms]
    assert floors == pytest.approx([1 / 36, 1 / 360, 1 / 3600])
    assert fit_loglog_slope(ms, floors) == pytest.approx(-1.0, abs=1e-12)


def test_run_experiment_report_and_csv():
    rep = run_experiment("iresnet", identity_map(2), make_learner("grid"), INF, [4, 16], 2)
    assert rep.checks == {"indistinguishable": True, "floor_respected": True}
    assert [r.m for r in rep.rows] == [4, 4, 16, 16]
    for r in rep.rows:
        assert r.worst_err >= r.floor_c >= r.bound_value
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[-1][4] == "slope:grid" and float(rows[-1][9]) < 0
    assert "\r" not in rep.to_csv()
    doc = json.loads(rep.to_json())
    assert set(doc["rows"][0]) == set(CSV_COLUMNS)


def test_run_experiment_finite_p_mean_bound():
    rep = run_experiment("iresnet", identity_map(1), make_learner("grid"), 1.0, [2, 4], 1)
    for r in rep.rows:
        family = build_family("iresnet", r.m, identity_map(1))
        assert r.mean_err >= mean_error_bound(family, 1.0)


def test_membership_audit_fields():
    family = build_family("iresnet", 2, identity_map(3))
    rep = audit_membership(family.block(family.grid.gamma[0], 1), "iresnet", 3)
    assert rep.architecture == "(3,6,1,3;relu)"
    assert rep.weight_sup <= 1 and rep.lip_bound == pytest.approx(0.5)
    assert math.isfinite(rep.bias_sup)
    crep = audit_membership(build_family("conv", 2, identity_map(3)).block(family.grid.gamma[0], -1), "conv", 3)
    assert crep.architecture == "(3;1,6,1,1;relu)" and crep.ok


def test_all_grid_points_used_by_experiment():
    # every centre in the grid is attacked, so the count in the report matches the grid
    rep = run_experiment("conv", identity_map(2), make_learner("grid"), INF, [4], 1)
    assert rep.rows[0].grid_size == build_grid("conv", 4, identity_map(2)).size
    assert list(itertools.chain(rep.rows))[0].filtered_size <= rep.rows[0].grid_size
