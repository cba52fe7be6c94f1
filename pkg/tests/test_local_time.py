import math

import numpy as np
import pytest

from levyforest import BranchingMechanism, JumpMeasure
from levyforest.exploration import scan_height
from levyforest.local_time import (
    aligned_level_width,
    bin_of,
    default_level_width,
    jump_erosion_residual,
    occupation_below,
    occupation_local_time,
    occupation_profile,
    profile_at_hitting,
    running_local_time,
    tanaka_local_time,
)
from levyforest.paths import Nodes, SimConfig, build_nodes, coarsen_path, sample_path, truncate_at_level

FELLER = BranchingMechanism(0.5, 1.0)
JUMPY = BranchingMechanism(0.5, 0.5, JumpMeasure(atoms=((1.0, 0.5),)))


def test_constant_trajectory_fills_one_bin():
    times = np.arange(11) * 0.1
    heights = np.full(11, 0.33)
    field = occupation_local_time(times, heights, np.arange(0.0, 1.05, 0.1))
    # H = 0.33 sits in (0.3, 0.4]; total time 1.0 over width 0.1
    assert field.values[-1, 3] == pytest.approx(10.0)
    assert np.all(field.values[-1, [j for j in range(10) if j != 3]] == 0.0)


def test_occupation_identity_is_exact():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=2.0, seed=1), path_index=0)
    nodes = build_nodes(p)
    sc = scan_height(nodes, p.beta_eff)
    width = 0.05
    nb = int(np.ceil(sc.height.max() / width)) + 2
    edges = np.arange(nb + 1) * width
    field = occupation_local_time(nodes.times, sc.height, edges)
    rng = np.random.default_rng(0)
    f = rng.random(nb)
    lhs = float((field.values[-1] * width * f).sum())
    bins = bin_of(sc.height, width)
    w = np.append(np.diff(nodes.times), 0.0)
    ok = bins >= 0
    rhs = float((w[ok] * f[bins[ok]]).sum())
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_field_monotone_in_time_and_level_lookup():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=1.0, seed=2), path_index=0)
    nodes = build_nodes(p)
    sc = scan_height(nodes, p.beta_eff)
    field = occupation_local_time(nodes.times, sc.height, np.arange(0.0, 3.0, 0.05))
    assert (np.diff(field.values, axis=0) >= -1e-15).all()
    j = field.level_index(0.25)
    assert field.level_edges[j] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        field.level_index(0.263)


def test_vertices_at_zero_height_belong_to_no_bin():
    times = np.arange(5) * 1.0
    heights = np.array([0.0, 0.2, 0.0, 0.2, 0.0])
    prof = occupation_profile(times, heights, 0.1, 5)
    assert prof.sum() * 0.1 == pytest.approx(2.0)      # only the H=0.2 pieces
    assert bin_of(np.array([0.0]), 0.1)[0] == -1


def test_running_local_time_is_exclusive_and_matches_field():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=1.0, seed=4), path_index=1)
    nodes = build_nodes(p)
    sc = scan_height(nodes, p.beta_eff)
    width = 0.05
    run = running_local_time(nodes.times, sc.height, width)
    edges = np.arange(0.0, sc.height.max() + 3 * width, width)
    field = occupation_local_time(nodes.times, sc.height, edges)
    for i in (10, 250, 700, 999):
        b = bin_of(np.array([sc.height[i]]), width)[0]
        if b >= 0:
            assert run[i] == pytest.approx(field.values[i, b], abs=1e-12)
    assert run[0] == 0.0


def test_occupation_below_trivials_and_consistency():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=1.0, seed=6), path_index=0)
    nodes = build_nodes(p)
    sc = scan_height(nodes, p.beta_eff)
    h_max = sc.height.max()
    total = nodes.times[-1]
    assert occupation_below(nodes.times, sc.height, h_max + 1.0) == pytest.approx(total)
    width = 0.05
    nb = int(np.ceil(h_max / width)) + 1
    prof = occupation_profile(nodes.times, sc.height, width, nb)
    a = 0.25
    below_bins = prof[: int(round(a / width))].sum() * width
    below = occupation_below(nodes.times, sc.height, a)
    at_zero = occupation_below(nodes.times, sc.height, 0.0)
    assert below - at_zero == pytest.approx(below_bins, abs=1e-12)


def test_profile_at_hitting_level_zero_recovers_mass():
    m = 250
    vals = []
    for i in range(m):
        p = sample_path(FELLER, SimConfig(dt=2.5e-4, horizon=30.0, seed=8),
                        path_index=i, stop_level=1.0)
        r = profile_at_hitting(p, 1.0, width=0.05)
        if r is not None:
            vals.append(r[1][0])
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    # estimator tolerance: boundary bias at level zero decays with dt, da
    assert abs(vals.mean() - 1.0) <= 3 * se + 0.10
    assert profile_at_hitting(
        sample_path(FELLER, SimConfig(dt=1e-3, horizon=0.01, seed=8)), 50.0) is None


def test_profile_above_max_height_is_zero():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=20.0, seed=12), stop_level=0.5)
    width, prof, _ = profile_at_hitting(p, 0.5, width=0.05, n_bins=400)
    cut = truncate_at_level(build_nodes(p), 0.5)
    sc = scan_height(cut[0], p.beta_eff)
    top_bin = int(np.ceil(sc.height.max() / width))
    assert np.all(prof[top_bin + 1:] == 0.0)


def test_level_zero_estimate_refines_toward_minus_infimum():
    # mean absolute error of the level-zero bin against -inf(xi) shrinks
    # along a dt ladder with width ~ dt^(1/3) (common driving noise)
    mech = FELLER
    m = 500
    fine = SimConfig(dt=1e-4, horizon=1.0, seed=33)
    errs = {4: [], 2: [], 1: []}
    for i in range(m):
        p = sample_path(mech, fine, path_index=i)
        for r in (4, 2, 1):
            q = coarsen_path(p, r)
            nodes = build_nodes(q)
            sc = scan_height(nodes, q.beta_eff)
            prof = occupation_profile(nodes.times, sc.height, q.dt ** (1 / 3), 1)
            errs[r].append(abs(prof[0] - (-sc.infimum[-1])))
    means = [np.mean(errs[r]) for r in (4, 2, 1)]
    assert means[0] > means[1] > means[2]


# -- Tanaka evaluations --------------------------------------------------------

def test_tanaka_vanishes_above_max_height():
    p = sample_path(JUMPY, SimConfig(dt=1e-3, horizon=2.0, seed=7), path_index=3)
    sc = scan_height(build_nodes(p), p.beta_eff)
    a = float(sc.height.max()) + 0.5
    assert abs(tanaka_local_time(sc, a, "plus")) <= 1e-12
    assert abs(tanaka_local_time(sc, a, "minus")) <= 1e-10


def test_tanaka_plus_minus_pathwise_identity():
    worst = 0.0
    for i in range(20):
        mech = JUMPY if i % 2 else FELLER
        p = sample_path(mech, SimConfig(dt=1e-3, horizon=2.0, seed=7), path_index=i)
        sc = scan_height(build_nodes(p), p.beta_eff)
        for a in (0.0, 0.2, 0.7, 1.5):
            worst = max(worst, abs(tanaka_local_time(sc, a, "plus")
                                   - tanaka_local_time(sc, a, "minus")))
    assert worst <= 1e-9


def test_tanaka_level_zero_recovers_stopped_mass():
    p = sample_path(FELLER, SimConfig(dt=2.5e-4, horizon=30.0, seed=9), stop_level=1.0)
    cut = truncate_at_level(build_nodes(p), 1.0)
    sc = scan_height(cut[0], p.beta_eff)
    val = tanaka_local_time(sc, 0.0, "minus")
    assert val == pytest.approx(1.0, abs=0.15)
    assert tanaka_local_time(sc, 0.0, "plus") == pytest.approx(val, abs=1e-10)


def test_tanaka_agrees_with_occupation_on_average():
    m = 300
    diffs = []
    for i in range(m):
        p = sample_path(FELLER, SimConfig(dt=5e-4, horizon=2.0, seed=10), path_index=i)
        nodes = build_nodes(p)
        sc = scan_height(nodes, p.beta_eff)
        prof = occupation_profile(nodes.times, sc.height, 0.0625, 60)
        a = 0.5
        diffs.append(prof[8] - tanaka_local_time(sc, a, "plus"))
    diffs = np.array(diffs)
    se = diffs.std(ddof=1) / math.sqrt(m)
    assert abs(diffs.mean()) <= 3 * se + 0.05


def test_occupation_field_t_max_clips_weights():
    times = np.arange(5) * 1.0
    heights = np.full(5, 0.15)
    field = occupation_local_time(times, heights, np.arange(0.0, 0.55, 0.1), t_max=2.5)
    assert field.values[-1, 1] == pytest.approx(2.5 / 0.1)


def test_tanaka_local_time_at_windows():
    from levyforest.local_time import tanaka_local_time_at
    p = sample_path(JUMPY, SimConfig(dt=1e-3, horizon=2.0, seed=15), path_index=2)
    full = tanaka_local_time_at(p, 0.3)
    assert full == pytest.approx(tanaka_local_time(
        scan_height(build_nodes(p), p.beta_eff), 0.3, "plus"), abs=1e-12)
    half = tanaka_local_time_at(p, 0.3, t=1.0)
    later = tanaka_local_time_at(p, 0.3, t=2.0)
    assert 0.0 <= half and half != later
    with pytest.raises(ValueError):
        tanaka_local_time_at(p, 0.3, t=1.00033)


def test_tanaka_rejects_bad_arguments():
    p = sample_path(FELLER, SimConfig(dt=1e-2, horizon=1.0, seed=1))
    sc = scan_height(build_nodes(p), p.beta_eff)
    with pytest.raises(ValueError):
        tanaka_local_time(sc, -1.0, "plus")
    with pytest.raises(ValueError):
        tanaka_local_time(sc, 0.5, "bogus")


# -- jump erosion diagnostic ---------------------------------------------------

def test_jump_erosion_residual_vacuous_without_jumps():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=1.0, seed=11))
    sc = scan_height(build_nodes(p), p.beta_eff)
    assert jump_erosion_residual(sc, 0.05) == 0.0


def test_jump_erosion_residual_zero_right_after_the_jump():
    # window ending at the jump vertex: both sides of the identity vanish
    times = np.array([0.0, 1.0, 1.5, 1.5])
    values = np.array([0.0, 1.0, 0.8, 2.8])
    kinds = np.array([0, 0, 1, 2], dtype=np.uint8)
    nodes = Nodes(times=times, values=values, kinds=kinds,
                  jump_post=np.array([3]), jump_sizes=np.array([2.0]),
                  grid_index=np.array([0, 1]))
    sc = scan_height(nodes, 1.0)
    assert jump_erosion_residual(sc, 0.1) == pytest.approx(0.0, abs=1e-12)


def test_jump_erosion_residual_shrinks_under_refinement():
    m = 150
    res = {2: [], 1: []}
    fine = SimConfig(dt=2.5e-4, horizon=2.0, seed=14)
    for i in range(m):
        p = sample_path(JUMPY, fine, path_index=i)
        if not len(p.jumps):
            continue
        for r in (2, 1):
            q = coarsen_path(p, r)
            sc = scan_height(build_nodes(q), q.beta_eff)
            res[r].append(jump_erosion_residual(sc, 2.0 * q.dt ** (1 / 3)))
    assert np.mean(res[2]) > np.mean(res[1])


# -- bandwidth plumbing ---------------------------------------------------------

def test_default_level_width_coupling():
    assert default_level_width(1e-3, 1.0) == pytest.approx(max(0.1, 4 * math.sqrt(1e-3)))
    assert default_level_width(1e-4, 0.5) == pytest.approx(max(1e-4 ** (1 / 3), 8 * 1e-2))


def test_aligned_level_width():
    w = aligned_level_width(0.063, [0.25, 0.5, 1.0])
    assert w == pytest.approx(0.0625)
    for a in (0.25, 0.5, 1.0):
        assert abs(a / w - round(a / w)) < 1e-9


def test_field_csv_long_format():
    import io
    times = np.arange(3) * 0.5
    heights = np.array([0.1, 0.1, 0.3])
    field = occupation_local_time(times, heights, np.arange(0.0, 0.55, 0.1))
    buf = io.StringIO()
    field.write_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "time,level,local_time"
    assert len(lines) == 1 + 3 * 5
