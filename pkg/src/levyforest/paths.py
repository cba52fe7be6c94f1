"""Grid simulation of spectrally positive Levy processes.

A path is driven by three stored components that reconstruct the value array
bit-exactly: a constant drift (the mechanism drift plus the compensator of
retained jumps), a single Gaussian coefficient times standard Brownian grid
increments, and an explicit list of jumps (exact in-cell times, sizes and
pre-jump values).  Jumps smaller than the truncation cutoff are either
dropped (their compensated sum is mean zero) or folded into the Gaussian
coefficient as an extra variance rate, so a simulated path is an exact draw
from the truncated mechanism.

Per-path randomness comes from counter-based streams keyed on
(seed, path_index), which makes Monte Carlo runs reproducible independently
of batching or worker count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .mechanism import BranchingMechanism

__all__ = [
    "SimConfig",
    "JumpSet",
    "LevyPath",
    "Nodes",
    "path_stream",
    "sample_path",
    "coarsen_path",
    "supremum_process",
    "reflected_process",
    "time_reverse",
    "running_infimum",
    "hitting_time",
    "build_nodes",
    "truncate_at_level",
    "sim_config_from_config",
    "sim_config_to_config",
    "write_path_csv",
    "write_jumps_csv",
]

_SMALL_JUMP_MODES = ("drop_compensated", "gaussian_correction")

# jump positions inside a cell live on a dyadic lattice so that the mirror
# map frac -> 1 - frac is exact in floating point (time reversal must be an
# involution bit for bit)
_FRAC_LATTICE = 2 ** 20


@dataclass(frozen=True)
class SimConfig:
    """Grid-simulation settings shared by the Levy and branching simulators."""

    dt: float
    horizon: float
    truncation_delta: float = 0.0
    small_jump_mode: str = "drop_compensated"
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigurationError("sim.dt must be > 0")
        if not self.horizon > self.dt:
            raise ConfigurationError("sim.horizon must exceed sim.dt")
        if self.truncation_delta < 0.0:
            raise ConfigurationError("sim.truncation_delta must be >= 0")
        if self.small_jump_mode not in _SMALL_JUMP_MODES:
            raise ConfigurationError(
                f"sim.small_jump_mode must be one of {_SMALL_JUMP_MODES}")

    @property
    def n_cells(self) -> int:
        return int(round(self.horizon / self.dt))


def sim_config_from_config(obj: dict) -> SimConfig:
    if not isinstance(obj, dict):
        raise ConfigurationError("sim: expected a JSON object")
    kwargs = {}
    for name, caster in (("dt", float), ("horizon", float),
                         ("truncation_delta", float),
                         ("small_jump_mode", str), ("seed", int)):
        if name in obj:
            try:
                kwargs[name] = caster(obj[name])
            except (TypeError, ValueError):
                raise ConfigurationError(f"sim.{name}: expected {caster.__name__}") from None
    for name in ("dt", "horizon"):
        if name not in kwargs:
            raise ConfigurationError(f"sim.{name}: missing")
    return SimConfig(**kwargs)


def sim_config_to_config(cfg: SimConfig) -> dict:
    return {
        "dt": cfg.dt,
        "horizon": cfg.horizon,
        "truncation_delta": cfg.truncation_delta,
        "small_jump_mode": cfg.small_jump_mode,
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

def path_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one path; distinct (seed, index) never collide."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(index & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# path containers
# ---------------------------------------------------------------------------

_EMPTY = np.empty(0)


@dataclass(frozen=True)
class JumpSet:
    """Retained jumps with exact in-cell placement."""

    times: np.ndarray = field(default_factory=lambda: _EMPTY)
    sizes: np.ndarray = field(default_factory=lambda: _EMPTY)
    pre_values: np.ndarray = field(default_factory=lambda: _EMPTY)
    cells: np.ndarray = field(default_factory=lambda: _EMPTY.astype(np.int64))
    fracs: np.ndarray = field(default_factory=lambda: _EMPTY)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class LevyPath:
    """One discretized sample path; values[k] is the post-jump state at k*dt."""

    dt: float
    values: np.ndarray
    brownian_increments: np.ndarray
    jumps: JumpSet
    applied_drift: float
    gaussian_coeff: float
    seed: int = 0
    path_index: int = 0

    @property
    def n_cells(self) -> int:
        return len(self.brownian_increments)

    @property
    def horizon(self) -> float:
        return self.n_cells * self.dt

    @property
    def beta_eff(self) -> float:
        """Diffusion coefficient of the effective (truncated) mechanism."""
        return 0.5 * self.gaussian_coeff ** 2

    def grid_times(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dt

    def cont_increments(self) -> np.ndarray:
        """Per-cell drift + Gaussian increment (jumps excluded)."""
        return self.applied_drift * self.dt + self.gaussian_coeff * self.brownian_increments

    def reconstruction_residual(self) -> float:
        """Max |values - cumsum(stored components)|; should sit at fp noise."""
        cell_jump = np.zeros(self.n_cells)
        if len(self.jumps):
            np.add.at(cell_jump, self.jumps.cells, self.jumps.sizes)
        rebuilt = np.concatenate(([0.0], np.cumsum(self.cont_increments() + cell_jump)))
        return float(np.max(np.abs(rebuilt - self.values)))


# ---------------------------------------------------------------------------
# node sequences: grid points plus pre/post jump points, in time order
# ---------------------------------------------------------------------------

_KIND_GRID = 0
_KIND_PRE = 1
_KIND_POST = 2


@dataclass(frozen=True)
class Nodes:
    """Piecewise-linear view of a path: every vertex the path passes through.

    Between consecutive nodes the path is linear, except for a pre -> post
    pair at a jump time (zero duration, vertical rise).  Minima, suprema,
    occupation weights and stochastic-integral sums all reduce to array
    operations on these vertices.
    """

    times: np.ndarray
    values: np.ndarray
    kinds: np.ndarray          # uint8, _KIND_*
    jump_post: np.ndarray      # node index of each jump's post vertex
    jump_sizes: np.ndarray
    grid_index: np.ndarray     # node indices of the grid vertices

    def __len__(self) -> int:
        return len(self.times)

    def weights(self) -> np.ndarray:
        """Time from each node to the next (0 for the last node)."""
        w = np.empty(len(self.times))
        w[:-1] = np.diff(self.times)
        w[-1] = 0.0
        return w

    def piece_is_jump(self) -> np.ndarray:
        """Boolean per piece (node i -> i+1): True for the pre -> post rise."""
        return (self.kinds[:-1] == _KIND_PRE) & (self.kinds[1:] == _KIND_POST)


def build_nodes(path: LevyPath) -> Nodes:
    n = path.n_cells
    grid_t = path.grid_times()
    if not len(path.jumps):
        kinds = np.zeros(n + 1, dtype=np.uint8)
        idx = np.arange(n + 1)
        return Nodes(grid_t, path.values, kinds,
                     np.empty(0, dtype=np.int64), _EMPTY, idx)

    j = path.jumps
    post_values = j.pre_values + j.sizes
    times = np.concatenate((grid_t, j.times, j.times))
    values = np.concatenate((path.values, j.pre_values, post_values))
    kinds = np.concatenate((
        np.full(n + 1, _KIND_GRID, dtype=np.uint8),
        np.full(len(j), _KIND_PRE, dtype=np.uint8),
        np.full(len(j), _KIND_POST, dtype=np.uint8),
    ))
    order = np.lexsort((kinds, times))
    inv = np.empty(len(order), dtype=np.int64)
    inv[order] = np.arange(len(order))
    return Nodes(times[order], values[order], kinds[order],
                 inv[n + 1 + len(j):], j.sizes.copy(), inv[:n + 1])


def truncate_at_level(nodes: Nodes, x: float) -> tuple[Nodes, float] | None:
    """Cut a node sequence at the first passage of -x.

    Returns the truncated nodes (final synthetic vertex exactly at (tau, -x))
    and the interpolated crossing time tau, or None if -x is never reached.
    Upward jumps cannot cross downward, so the crossing piece is always a
    continuous segment and linear interpolation inside it is exact for the
    piecewise-linear path model.
    """
    if x < 0.0:
        raise ValueError("level x must be >= 0")
    vals = nodes.values
    below = vals <= -x
    if not below.any():
        return None
    i = int(np.argmax(below))
    if i == 0:
        tau = float(nodes.times[0])
    else:
        v0, v1 = vals[i - 1], vals[i]
        t0, t1 = nodes.times[i - 1], nodes.times[i]
        tau = float(t0 + (t1 - t0) * (v0 + x) / (v0 - v1))
    keep = nodes.jump_post < i
    out = Nodes(
        times=np.concatenate((nodes.times[:i], [tau])),
        values=np.concatenate((vals[:i], [-x])),
        kinds=np.concatenate((nodes.kinds[:i], [np.uint8(_KIND_GRID)])),
        jump_post=nodes.jump_post[keep],
        jump_sizes=nodes.jump_sizes[keep],
        grid_index=nodes.grid_index[nodes.grid_index < i],
    )
    return out, tau


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _chunk_cells(cfg: SimConfig) -> int:
    # a fixed function of the config, so the draw sequence of a path never
    # depends on who consumes it or when it stops early; multiples of 8 keep
    # coarse-grid stop tests aligned across chunk boundaries
    raw = max(1024, int(round(1.0 / cfg.dt)))
    return min(cfg.n_cells, ((raw + 7) // 8) * 8)


def sample_path(mech: BranchingMechanism, cfg: SimConfig, *,
                path_index: int = 0,
                stop_level: float | None = None,
                stop_grid_ratio: int = 1) -> LevyPath:
    """Draw one path of the truncated mechanism on the grid.

    With stop_level=x the generation halts once the path has reached -x
    (the returned path is bit-identical to the corresponding prefix of the
    full-horizon path with the same seed).  stop_grid_ratio=r makes the stop
    test look only at every r-th grid point, which guarantees the prefix is
    long enough for a coarsened copy of the path (ratio r) to register its
    own first passage.
    """
    delta = cfg.truncation_delta
    pl = mech.jumps.power_law
    if pl is not None and pl.z_min == 0.0 and delta == 0.0:
        raise ConfigurationError(
            "power-law jumps reaching 0 require truncation_delta > 0")

    rate, draw = mech.jumps.sampler_above(delta)
    drift = -mech.alpha - mech.jumps.mean_above(delta)
    var_rate = 2.0 * mech.beta
    if cfg.small_jump_mode == "gaussian_correction":
        var_rate += mech.jumps.m2_below(delta)
    coeff = math.sqrt(var_rate)

    rng = path_stream(cfg.seed, path_index)
    dt = cfg.dt
    n_total = cfg.n_cells
    chunk = _chunk_cells(cfg)
    sqrt_dt = math.sqrt(dt)

    db_parts: list[np.ndarray] = []
    jump_parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []  # (cells, fracs, sizes)
    inc_parts: list[np.ndarray] = []
    v_carry = 0.0
    done_cells = 0

    while done_cells < n_total:
        k = min(chunk, n_total - done_cells)
        db = rng.normal(0.0, sqrt_dt, size=k)
        inc = drift * dt + coeff * db
        if rate > 0.0:
            count = int(rng.poisson(rate * k * dt))
            u = np.sort(rng.random(count))
            sizes = draw(rng, count) if count else _EMPTY
            pos = u * k                                 # in units of cells
            cells_local = np.minimum(pos.astype(np.int64), k - 1)
            lattice = np.floor((pos - cells_local) * _FRAC_LATTICE)
            fracs = (lattice + 0.5) / _FRAC_LATTICE
            if count:
                cell_jump = np.zeros(k)
                np.add.at(cell_jump, cells_local, sizes)
                inc = inc + cell_jump
                jump_parts.append((cells_local + done_cells, fracs, sizes))
        db_parts.append(db)
        inc_parts.append(inc)
        vals = v_carry + np.cumsum(inc)
        done_cells += k
        v_carry = float(vals[-1])
        # grid detection is enough to stop generating; the authoritative
        # crossing (pre-jump vertices included) is found by truncate_at_level
        if stop_level is not None:
            r = stop_grid_ratio
            if r <= 1:
                hit = vals.min() <= -stop_level
            else:
                coarse = vals[r - 1::r]
                hit = len(coarse) > 0 and coarse.min() <= -stop_level
            if hit:
                break

    brownian = np.concatenate(db_parts) if db_parts else _EMPTY
    # canonical single-pass construction: identical result whether the path
    # was produced chunked, stopped early, or rebuilt from reversed pieces
    values = np.concatenate(([0.0], np.cumsum(np.concatenate(inc_parts))))
    jumps = _assemble_jumps(jump_parts, values, brownian, drift, coeff, dt)
    return LevyPath(dt=dt, values=values, brownian_increments=brownian,
                    jumps=jumps, applied_drift=drift, gaussian_coeff=coeff,
                    seed=cfg.seed, path_index=path_index)


def _assemble_jumps(jump_parts, values, brownian, drift, coeff, dt) -> JumpSet:
    if not jump_parts:
        return JumpSet()
    cells = np.concatenate([p[0] for p in jump_parts])
    fracs = np.concatenate([p[1] for p in jump_parts])
    sizes = np.concatenate([p[2] for p in jump_parts])
    keep = cells < len(brownian)
    cells, fracs, sizes = cells[keep], fracs[keep], sizes[keep]
    if not len(cells):
        return JumpSet()
    order = np.lexsort((fracs, cells))
    cells, fracs, sizes = cells[order], fracs[order], sizes[order]
    cont = drift * dt + coeff * brownian
    # exclusive within-cell cumulative jump mass
    cum = np.cumsum(sizes) - sizes
    first = np.ones(len(cells), dtype=bool)
    first[1:] = cells[1:] != cells[:-1]
    cell_base = np.repeat(cum[first], np.diff(np.append(np.flatnonzero(first), len(cells))))
    within = cum - cell_base
    pre = values[cells] + fracs * cont[cells] + within
    times = (cells + fracs) * dt
    return JumpSet(times=times, sizes=sizes, pre_values=pre,
                   cells=cells, fracs=fracs)


def coarsen_path(path: LevyPath, ratio: int) -> LevyPath:
    """The same driving noise viewed on a grid ratio times coarser.

    Brownian increments are summed in groups, jumps keep their exact times
    (re-celled; exact for power-of-two ratios thanks to the dyadic in-cell
    lattice).  Used for discretization-refinement studies with common random
    numbers across the dt ladder.
    """
    if ratio == 1:
        return path
    n = path.n_cells
    if ratio < 1 or n % ratio:
        raise ValueError("ratio must divide the number of cells")
    db = path.brownian_increments.reshape(-1, ratio).sum(axis=1)
    dt = path.dt * ratio
    j = path.jumps
    cells = j.cells // ratio if len(j) else j.cells
    fracs = ((j.cells % ratio) + j.fracs) / ratio if len(j) else j.fracs
    sizes = j.sizes
    cont = path.applied_drift * dt + path.gaussian_coeff * db
    cell_jump = np.zeros(n // ratio)
    if len(j):
        np.add.at(cell_jump, cells, sizes)
    values = np.concatenate(([0.0], np.cumsum(cont + cell_jump)))
    jumps = _assemble_jumps([(cells, fracs, sizes.copy())] if len(j) else [],
                            values, db, path.applied_drift, path.gaussian_coeff, dt)
    return LevyPath(dt=dt, values=values, brownian_increments=db, jumps=jumps,
                    applied_drift=path.applied_drift,
                    gaussian_coeff=path.gaussian_coeff,
                    seed=path.seed, path_index=path.path_index)


# ---------------------------------------------------------------------------
# path functionals
# ---------------------------------------------------------------------------

def supremum_process(path: LevyPath) -> np.ndarray:
    """Running supremum at grid times, intra-cell jump peaks included."""
    nodes = build_nodes(path)
    s = np.maximum.accumulate(nodes.values)
    return s[nodes.grid_index]


def reflected_process(path: LevyPath) -> np.ndarray:
    """R = S - xi >= 0 at grid times."""
    return supremum_process(path) - path.values


def running_infimum(path: LevyPath, s: float, t: float) -> float:
    """min of the path over [s, t] (s, t grid times), pre-jump vertices included."""
    if s > t:
        raise ValueError("running_infimum requires s <= t")
    nodes = build_nodes(path)
    eps = 1e-9 * path.dt
    mask = (nodes.times >= s - eps) & (nodes.times <= t + eps)
    return float(nodes.values[mask].min())


def hitting_time(path: LevyPath, x: float) -> float | None:
    """First time the path reaches -x, linearly interpolated inside the
    crossing segment; None if the horizon is exhausted first."""
    cut = truncate_at_level(build_nodes(path), x)
    return None if cut is None else cut[1]


def time_reverse(path: LevyPath, t: float | None = None) -> LevyPath:
    """The reversed path s -> xi_t - xi_{(t-s)-} on [0, t] (t a grid time).

    Implemented on the stored components (reversed increments, mirrored jump
    positions on a dyadic lattice), so reversing twice reproduces the
    original path bit for bit.
    """
    if t is None:
        t = path.horizon
    m = int(round(t / path.dt))
    if abs(m * path.dt - t) > 1e-9 * path.dt or m < 1:
        raise ValueError("t must be a positive grid time")
    if m > path.n_cells:
        raise ValueError("t beyond horizon")

    db = path.brownian_increments[:m][::-1].copy()
    j = path.jumps
    keep = j.cells < m
    cells = (m - 1) - j.cells[keep][::-1]
    fracs = 1.0 - j.fracs[keep][::-1]
    sizes = j.sizes[keep][::-1].copy()

    cont = path.applied_drift * path.dt + path.gaussian_coeff * db
    cell_jump = np.zeros(m)
    if len(cells):
        np.add.at(cell_jump, cells, sizes)
    values = np.concatenate(([0.0], np.cumsum(cont + cell_jump)))
    jumps = _assemble_jumps([(cells, fracs, sizes)], values, db,
                            path.applied_drift, path.gaussian_coeff, path.dt)
    return LevyPath(dt=path.dt, values=values, brownian_increments=db,
                    jumps=jumps, applied_drift=path.applied_drift,
                    gaussian_coeff=path.gaussian_coeff,
                    seed=path.seed, path_index=path.path_index)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_path_csv(path: LevyPath, fp) -> None:
    w = csv.writer(fp)
    w.writerow(["time", "value"])
    for t, v in zip(path.grid_times(), path.values):
        w.writerow([repr(float(t)), repr(float(v))])


def write_jumps_csv(path: LevyPath, fp) -> None:
    w = csv.writer(fp)
    w.writerow(["time", "size", "pre_value"])
    j = path.jumps
    for t, z, pv in zip(j.times, j.sizes, j.pre_values):
        w.writerow([repr(float(t)), repr(float(z)), repr(float(pv))])
