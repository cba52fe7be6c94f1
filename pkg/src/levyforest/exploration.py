"""Exploration stack and height process of a spectrally positive path.

The exploration measure at time t consists of a Lebesgue part of density
beta on [0, H_t] plus one atom per not-yet-eroded jump, sitting at the height
the process had when the jump occurred.  Maintaining it as a stack of
continuous segments and atoms gives the height trajectory in one forward
pass: positive continuous increments extend the top segment, negative ones
erode mass from the top (atoms first, partially if needed), and jumps push
atoms.  Whatever erosion is left when the stack empties lowers the running
infimum of the path instead.

Two engines compute the same trajectory:

* "stack"  -- the sequential structure above, amortized O(1) per event;
* "scan"   -- direct evaluation of the pathwise identity
              beta*H_t = xi_t - inf_{[0,t]} xi
                         - sum_{jumps t_i <= t} (z_i + inf_{[t_i,t]} xi - xi_{t_i})^+
  with vectorized running minima, O(#jumps * #nodes).

They agree to floating-point accuracy; the scan doubles as an independent
oracle for the stack and is the faster engine for long Monte Carlo paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .paths import LevyPath, Nodes, build_nodes

__all__ = [
    "ExplorationStack",
    "concatenate",
    "HeightScan",
    "scan_height",
    "height_trajectory",
]

_MASS_SLACK = 1e-12     # exhaustion slack: avoids spurious negative masses

_SEGMENT = 0
_ATOM = 1


class ExplorationStack:
    """Measure-valued state: continuous segments (height extent) and atoms.

    Records run bottom to top.  A segment of extent e carries mass beta*e and
    height extent e; an atom carries its own mass and zero height extent.
    """

    __slots__ = ("beta", "_kinds", "_a", "_b", "_height", "_mass")

    def __init__(self, beta: float):
        if beta <= 0.0:
            raise PreconditionError("exploration requires beta > 0")
        self.beta = beta
        self._kinds: list[int] = []
        self._a: list[float] = []        # segment extent, or atom mass
        self._b: list[float] = []        # unused for segments, atom height
        self._height = 0.0
        self._mass = 0.0

    # -- observers ------------------------------------------------------------

    @property
    def height(self) -> float:
        return self._height

    @property
    def total_mass(self) -> float:
        return self._mass

    def copy(self) -> "ExplorationStack":
        out = ExplorationStack(self.beta)
        out._kinds = self._kinds.copy()
        out._a = self._a.copy()
        out._b = self._b.copy()
        out._height = self._height
        out._mass = self._mass
        return out

    def records(self) -> list[dict]:
        """Bottom-to-top debug view."""
        out = []
        for kind, a, b in zip(self._kinds, self._a, self._b):
            if kind == _SEGMENT:
                out.append({"kind": "segment", "extent": a, "mass": self.beta * a})
            else:
                out.append({"kind": "atom", "mass": a, "height": b})
        return out

    def to_json(self) -> str:
        return json.dumps({"beta": self.beta, "height": self._height,
                           "total_mass": self._mass, "records": self.records()})

    # -- mutators ---------------------------------------------------------

    def push_jump(self, z: float) -> None:
        """Add an atom of mass z at the current height; H is unchanged."""
        if z <= 0.0:
            raise ValueError("jump size must be > 0")
        self._kinds.append(_ATOM)
        self._a.append(z)
        self._b.append(self._height)
        self._mass += z

    def advance_continuous(self, d_xi: float) -> float:
        """Apply one continuous increment of the path.

        Positive increments grow the top segment by d_xi/beta in height
        (d_xi in mass).  Negative increments erode |d_xi| of mass from the
        top.  Returns the erosion left over after the stack empties, which
        the caller accounts against the running infimum.
        """
        if d_xi > 0.0:
            extent = d_xi / self.beta
            if self._kinds and self._kinds[-1] == _SEGMENT:
                self._a[-1] += extent
            else:
                self._kinds.append(_SEGMENT)
                self._a.append(extent)
                self._b.append(0.0)
            self._height += extent
            self._mass += d_xi
            return 0.0
        return self._erode(-d_xi)

    def truncate_mass(self, a: float) -> None:
        """Erode mass a from the top of the support, clamped at empty."""
        if a < 0.0:
            raise ValueError("truncation mass must be >= 0")
        if a > 0.0:
            self._erode(a)

    def _erode(self, m: float) -> float:
        while m > 0.0 and self._kinds:
            if self._kinds[-1] == _ATOM:
                take = min(self._a[-1], m)
                self._a[-1] -= take
                self._mass -= take
                m -= take
                if self._a[-1] <= _MASS_SLACK * (1.0 + take):
                    self._mass -= self._a[-1]
                    self._mass = max(self._mass, 0.0)
                    self._kinds.pop(); self._a.pop(); self._b.pop()
            else:
                seg_mass = self.beta * self._a[-1]
                take = min(seg_mass, m)
                extent = take / self.beta
                self._a[-1] -= extent
                self._height -= extent
                self._mass -= take
                m -= take
                if self._a[-1] <= _MASS_SLACK * (1.0 + extent):
                    self._height -= self._a[-1]
                    self._height = max(self._height, 0.0)
                    self._kinds.pop(); self._a.pop(); self._b.pop()
        if not self._kinds:
            self._height = 0.0
            self._mass = 0.0
        return max(m, 0.0)


def concatenate(lower: ExplorationStack, upper: ExplorationStack) -> ExplorationStack:
    """Stack upper's records above lower's; atom heights shift by H(lower)."""
    if lower.beta != upper.beta:
        raise ValueError("concatenation requires equal beta")
    out = lower.copy()
    shift = lower.height
    for kind, a, b in zip(upper._kinds, upper._a, upper._b):
        out._kinds.append(kind)
        out._a.append(a)
        out._b.append(b + shift if kind == _ATOM else 0.0)
        if kind == _ATOM:
            out._mass += a
        else:
            out._mass += out.beta * a
            out._height += a
    return out


# ---------------------------------------------------------------------------
# scan engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeightScan:
    """Height trajectory over a node sequence plus the jump-erosion state.

    height[i] is H at node i; infimum[i] the running path infimum;
    final_erosion[j] = (z_j + inf_{[t_j, end]} xi - xi_{t_j})^+ for jump j,
    i.e. the surviving atom mass at the end of the sequence.
    """

    nodes: Nodes
    beta: float
    height: np.ndarray
    infimum: np.ndarray
    final_erosion: np.ndarray

    def grid_height(self) -> np.ndarray:
        return self.height[self.nodes.grid_index]

    def jump_heights(self) -> np.ndarray:
        """H at each jump time (the height the atom was pushed at)."""
        return self.height[self.nodes.jump_post]


def scan_height(nodes: Nodes, beta: float) -> HeightScan:
    if beta <= 0.0:
        raise PreconditionError("height computation requires beta > 0")
    vals = nodes.values
    inf0 = np.minimum.accumulate(vals)
    corr = np.zeros_like(vals)
    n_jumps = len(nodes.jump_post)
    final = np.zeros(n_jumps)
    for j in range(n_jumps):
        p = int(nodes.jump_post[j])
        z = nodes.jump_sizes[j]
        suffix_min = np.minimum.accumulate(vals[p:])
        eroded = np.maximum(z + suffix_min - vals[p], 0.0)
        corr[p:] += eroded
        final[j] = eroded[-1]
    height = np.maximum(vals - inf0 - corr, 0.0) / beta
    return HeightScan(nodes=nodes, beta=beta, height=height,
                      infimum=inf0, final_erosion=final)


# ---------------------------------------------------------------------------
# trajectory drivers
# ---------------------------------------------------------------------------

def height_trajectory(path: LevyPath, engine: str = "scan") -> np.ndarray:
    """H at the grid times of a path.  engine: "scan" (vectorized identity)
    or "stack" (sequential exploration structure); they agree to ~1e-12."""
    if path.beta_eff <= 0.0:
        raise PreconditionError(
            "height trajectory requires a diffusion part (beta > 0, possibly "
            "via the small-jump gaussian correction)")
    if engine == "scan":
        return scan_height(build_nodes(path), path.beta_eff).grid_height()
    if engine == "stack":
        return _stack_trajectory(path)
    raise ValueError("engine must be 'scan' or 'stack'")


def _stack_trajectory(path: LevyPath) -> np.ndarray:
    nodes = build_nodes(path)
    stack = ExplorationStack(path.beta_eff)
    is_jump = nodes.piece_is_jump()
    kinds = nodes.kinds
    vals = nodes.values
    out = np.empty(len(nodes.grid_index))
    out[0] = 0.0
    g = 1
    for i in range(1, len(vals)):
        if is_jump[i - 1]:
            stack.push_jump(vals[i] - vals[i - 1])
        else:
            stack.advance_continuous(float(vals[i] - vals[i - 1]))
        if kinds[i] == 0:           # grid vertex
            out[g] = stack.height
            g += 1
    return out


def stack_at(path: LevyPath, t: float) -> tuple[ExplorationStack, float]:
    """Exploration stack and running infimum after processing the path up to
    grid time t; useful for snapshot/decomposition checks."""
    m = int(round(t / path.dt))
    if abs(m * path.dt - t) > 1e-9 * path.dt or m > path.n_cells:
        raise ValueError("t must be a grid time within the horizon")
    nodes = build_nodes(path)
    stop = int(nodes.grid_index[m])
    stack = ExplorationStack(path.beta_eff)
    is_jump = nodes.piece_is_jump()
    vals = nodes.values
    inf0 = 0.0
    for i in range(1, stop + 1):
        if is_jump[i - 1]:
            stack.push_jump(vals[i] - vals[i - 1])
        else:
            inf0 -= stack.advance_continuous(float(vals[i] - vals[i - 1]))
    return stack, inf0
