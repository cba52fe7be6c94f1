import io
import math

import numpy as np
import pytest

from levyforest import BranchingMechanism, ConfigurationError, JumpMeasure, PowerLawTail
from levyforest.paths import (
    JumpSet,
    LevyPath,
    SimConfig,
    build_nodes,
    coarsen_path,
    hitting_time,
    reflected_process,
    running_infimum,
    sample_path,
    sim_config_from_config,
    sim_config_to_config,
    supremum_process,
    time_reverse,
    truncate_at_level,
    write_jumps_csv,
    write_path_csv,
)

FELLER = BranchingMechanism(0.5, 1.0)
JUMPY = BranchingMechanism(0.5, 0.5, JumpMeasure(atoms=((1.0, 0.5),)))


def make_path(values, jumps=None, dt=1.0, coeff=1.0):
    """Hand-built deterministic path (values drive everything in tests)."""
    values = np.asarray(values, dtype=float)
    return LevyPath(dt=dt, values=values,
                    brownian_increments=np.diff(values) / coeff if jumps is None
                    else np.zeros(len(values) - 1),
                    jumps=jumps or JumpSet(),
                    applied_drift=0.0, gaussian_coeff=coeff)


def test_null_mechanism_is_identically_zero():
    p = sample_path(BranchingMechanism(0.0, 0.0), SimConfig(dt=0.01, horizon=1.0, seed=3))
    assert np.all(p.values == 0.0)


def test_determinism_bit_exact():
    cfg = SimConfig(dt=1e-3, horizon=2.0, seed=42)
    a = sample_path(JUMPY, cfg, path_index=5)
    b = sample_path(JUMPY, cfg, path_index=5)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.jumps.times, b.jumps.times)
    c = sample_path(JUMPY, cfg, path_index=6)
    assert not np.array_equal(a.values, c.values)


def test_reconstruction_residual():
    cfg = SimConfig(dt=1e-3, horizon=3.0, seed=9)
    for mech in (FELLER, JUMPY):
        p = sample_path(mech, cfg, path_index=1)
        scale = max(1.0, float(np.abs(p.values).max()))
        assert p.reconstruction_residual() <= 1e-12 * scale


def test_stop_level_yields_bit_exact_prefix():
    cfg = SimConfig(dt=1e-3, horizon=6.0, seed=11)
    full = sample_path(JUMPY, cfg, path_index=2)
    stopped = sample_path(JUMPY, cfg, path_index=2, stop_level=0.7)
    n = len(stopped.values)
    assert n <= len(full.values)
    assert np.array_equal(stopped.values, full.values[:n])


def test_compensated_drift_mean():
    cfg = SimConfig(dt=2e-3, horizon=1.5, seed=101)
    m, t_idx = 1200, 700
    vals = np.array([sample_path(JUMPY, cfg, path_index=i).values[t_idx]
                     for i in range(m)])
    t = t_idx * cfg.dt
    se = vals.std(ddof=1) / math.sqrt(m)
    assert abs(vals.mean() - (-JUMPY.alpha * t)) <= 3 * se


def test_jump_counts_are_poisson():
    cfg = SimConfig(dt=2e-3, horizon=2.0, seed=55)
    m = 1200
    counts = np.array([len(sample_path(JUMPY, cfg, path_index=i).jumps)
                       for i in range(m)])
    lam = 0.5 * cfg.horizon
    se_mean = counts.std(ddof=1) / math.sqrt(m)
    assert abs(counts.mean() - lam) <= 3 * se_mean
    # variance must track the mean as well
    se_var = math.sqrt(2.0 / m) * lam * 2.0
    assert abs(counts.var(ddof=1) - lam) <= 3 * se_var


def test_empirical_laplace_matches_truncated_exponent():
    # the grid law is exact in distribution, so a coarse step suffices
    cfg = SimConfig(dt=0.01, horizon=1.01, seed=77)
    m, lam, t_idx = 1500, 0.8, 100
    vals = np.array([sample_path(JUMPY, cfg, path_index=i).values[t_idx]
                     for i in range(m)])
    samples = np.exp(-lam * vals)
    target = math.exp(1.0 * JUMPY.truncated_exponent(lam, 0.0))
    se = samples.std(ddof=1) / math.sqrt(m)
    assert abs(samples.mean() - target) <= 3 * se


def test_gaussian_correction_moves_the_exponent():
    mech = BranchingMechanism(0.2, 0.3, JumpMeasure(
        power_law=PowerLawTail(c=0.5, sigma=1.5, z_min=0.0, z_max=2.0)))
    cfg = SimConfig(dt=0.01, horizon=1.01, seed=13, truncation_delta=0.2,
                    small_jump_mode="gaussian_correction")
    m, lam, t_idx = 1500, 1.0, 100
    vals = np.array([sample_path(mech, cfg, path_index=i).values[t_idx]
                     for i in range(m)])
    samples = np.exp(-lam * vals)
    target = math.exp(mech.truncated_exponent(lam, 0.2, gaussian_correction=True))
    se = samples.std(ddof=1) / math.sqrt(m)
    assert abs(samples.mean() - target) <= 3 * se
    # and the path records the folded coefficient
    p = sample_path(mech, cfg, path_index=0)
    assert p.beta_eff == pytest.approx(mech.beta + 0.5 * mech.jumps.m2_below(0.2))


def test_power_law_to_zero_requires_truncation():
    mech = BranchingMechanism(0.0, 0.0, JumpMeasure(
        power_law=PowerLawTail(c=1.0, sigma=1.5, z_min=0.0)))
    with pytest.raises(ConfigurationError):
        sample_path(mech, SimConfig(dt=1e-3, horizon=1.0, seed=1))


def test_supremum_sawtooth():
    p = make_path([0.0, 1.0, -1.0, 2.0])
    assert np.array_equal(supremum_process(p), [0.0, 1.0, 1.0, 2.0])
    assert (reflected_process(p) >= 0.0).all()


def test_supremum_includes_intra_cell_jump_top():
    # cell 1 carries cont -0.5 and a jump of 2 at frac 0.5: peak 2.75 inside
    jumps = JumpSet(times=np.array([1.5]), sizes=np.array([2.0]),
                    pre_values=np.array([0.75]), cells=np.array([1]),
                    fracs=np.array([0.5]))
    p = LevyPath(dt=1.0, values=np.array([0.0, 1.0, 2.5]),
                 brownian_increments=np.array([1.0, -0.5]), jumps=jumps,
                 applied_drift=0.0, gaussian_coeff=1.0)
    s = supremum_process(p)
    assert np.array_equal(s, [0.0, 1.0, 2.75])
    # jump increment of the supremum: (xi_{t_i} - S_{t_i-})^+
    nodes = build_nodes(p)
    s_nodes = np.maximum.accumulate(nodes.values)
    post = nodes.jump_post[0]
    assert (nodes.values[post] - s_nodes[post - 1]) == pytest.approx(2.75 - 1.0)


def test_running_infimum_examples():
    p = make_path([0.0, 1.0, -1.0, 2.0])
    assert running_infimum(p, 3.0, 3.0) == 2.0
    assert running_infimum(p, 1.0, 3.0) == -1.0
    q = make_path([0.0, -0.5, -1.2, -2.0])
    assert running_infimum(q, 0.0, 3.0) == -2.0


def test_running_infimum_sees_pre_jump_values():
    rng_path = sample_path(JUMPY, SimConfig(dt=1e-2, horizon=3.0, seed=21), path_index=4)
    nodes = build_nodes(rng_path)
    s, t = 0.0, rng_path.horizon
    brute = nodes.values.min()
    assert running_infimum(rng_path, s, t) == brute
    with pytest.raises(ValueError):
        running_infimum(rng_path, 2.0, 1.0)


def test_time_reverse_is_bit_exact_involution():
    p = sample_path(JUMPY, SimConfig(dt=1e-3, horizon=4.0, seed=42), path_index=3)
    r = time_reverse(p, 2.0)
    rr = time_reverse(r, 2.0)
    assert np.array_equal(rr.values, p.values[:2001])
    assert np.array_equal(rr.jumps.times, p.jumps.times[p.jumps.cells < 2000])
    assert np.array_equal(rr.jumps.pre_values, p.jumps.pre_values[p.jumps.cells < 2000])


def test_time_reverse_endpoints_and_increments():
    p = sample_path(JUMPY, SimConfig(dt=1e-3, horizon=2.0, seed=8), path_index=0)
    r = time_reverse(p)
    assert r.values[0] == 0.0
    assert r.values[-1] == pytest.approx(p.values[-1], abs=1e-12)
    # reversal permutes the increments, preserving their empirical law exactly
    assert np.allclose(np.sort(np.diff(r.values)), np.sort(np.diff(p.values)))
    assert (r.jumps.sizes > 0).all()
    with pytest.raises(ValueError):
        time_reverse(p, 2.0005)
    with pytest.raises(ValueError):
        time_reverse(p, 5.0)


def test_hitting_time_pure_drift_exact():
    drift = BranchingMechanism(1.0, 0.0)
    p = sample_path(drift, SimConfig(dt=1e-3, horizon=2.0, seed=0))
    assert hitting_time(p, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert hitting_time(p, 0.0) == 0.0
    assert hitting_time(p, 5.0) is None


def test_hitting_time_mean_matches_optional_stopping():
    cfg = SimConfig(dt=1e-3, horizon=40.0, seed=19)
    m = 500
    taus = []
    for i in range(m):
        p = sample_path(FELLER, cfg, path_index=i, stop_level=1.0)
        tau = hitting_time(p, 1.0)
        if tau is not None:
            taus.append(tau)
    taus = np.array(taus)
    assert len(taus) >= 0.97 * m
    se = taus.std(ddof=1) / math.sqrt(len(taus))
    assert abs(taus.mean() - 1.0 / FELLER.alpha) <= 3 * se + 0.02


def test_truncate_at_level_ends_exactly_at_minus_x():
    p = sample_path(FELLER, SimConfig(dt=1e-3, horizon=30.0, seed=5), stop_level=0.8)
    nodes, tau = truncate_at_level(build_nodes(p), 0.8)
    assert nodes.values[-1] == -0.8
    assert nodes.times[-1] == pytest.approx(tau)
    assert (nodes.values[:-1] > -0.8).all()


def test_coarsen_path_agrees_at_shared_grid_points():
    p = sample_path(JUMPY, SimConfig(dt=2.5e-4, horizon=2.0, seed=31), path_index=2)
    q = coarsen_path(p, 4)
    assert q.dt == pytest.approx(1e-3)
    assert np.allclose(q.values, p.values[::4], atol=1e-12)
    assert np.array_equal(q.jumps.times, p.jumps.times)
    with pytest.raises(ValueError):
        coarsen_path(p, 3)  # 8000 cells not divisible by 3 -> ValueError
    # exact time preservation under power-of-two recelling
    assert np.array_equal((q.jumps.cells + q.jumps.fracs) * q.dt,
                          (p.jumps.cells + p.jumps.fracs) * p.dt)


def test_sim_config_validation_and_roundtrip():
    cfg = SimConfig(dt=1e-3, horizon=2.0, truncation_delta=0.1,
                    small_jump_mode="gaussian_correction", seed=9)
    assert sim_config_from_config(sim_config_to_config(cfg)) == cfg
    with pytest.raises(ConfigurationError, match="dt"):
        SimConfig(dt=0.0, horizon=1.0)
    with pytest.raises(ConfigurationError, match="horizon"):
        sim_config_from_config({"dt": 1e-3})
    with pytest.raises(ConfigurationError, match="small_jump_mode"):
        SimConfig(dt=1e-3, horizon=1.0, small_jump_mode="bogus")


def test_csv_exports():
    p = sample_path(JUMPY, SimConfig(dt=0.01, horizon=1.0, seed=2), path_index=7)
    buf = io.StringIO()
    write_path_csv(p, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "time,value"
    assert len(lines) == p.n_cells + 2
    buf = io.StringIO()
    write_jumps_csv(p, buf)
    jlines = buf.getvalue().strip().splitlines()
    assert jlines[0] == "time,size,pre_value"
    assert len(jlines) == len(p.jumps) + 1
