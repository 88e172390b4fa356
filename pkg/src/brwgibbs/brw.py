"""Forward simulation of the branching random walk, lineages and additive martingales."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .functionals import grid_generation
from .montecarlo import replica_rng
from .offspring import OffspringLaw

DEFAULT_NODE_CAP = 2 ** 26
DEFAULT_GRID_POINTS = 64


class CapExceeded(RuntimeError):
    """Raised when a simulation would allocate more nodes than allowed."""


@dataclass(frozen=True, eq=False)
class TreeArena:
    """Flat genealogical tree: generation ``g`` occupies ``offsets[g]:offsets[g+1]``.

    ``parent[0] == -1`` marks the root. Arrays are read-only after construction.
    """

    positions: np.ndarray
    parent: np.ndarray
    offsets: np.ndarray
    law: OffspringLaw | None = None
    n_max: int = 0
    seed: int | None = None

    def __post_init__(self):
        for arr in (self.positions, self.parent, self.offsets):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def generation(self) -> np.ndarray:
        counts = np.diff(self.offsets)
        return np.repeat(np.arange(len(counts)), counts)

    def generation_slice(self, g: int) -> slice:
        if not 0 <= g <= self.n_max:
            raise IndexError(f"generation {g} not simulated (n_max={self.n_max})")
        return slice(int(self.offsets[g]), int(self.offsets[g + 1]))

    def generation_size(self, g: int) -> int:
        s = self.generation_slice(g)
        return s.stop - s.start

    def leaves(self, g: int) -> np.ndarray:
        s = self.generation_slice(g)
        return np.arange(s.start, s.stop)

    @cached_property
    def _child_counts(self) -> list:
        out = [None]
        for g in range(1, self.n_max + 1):
            c = np.bincount(self.parent_local(g), minlength=self.generation_size(g - 1))
            out.append(int(c[0]) if c.size and np.all(c == c[0]) else c)
        return out

    def expand(self, values: np.ndarray, g: int) -> np.ndarray:
        """Copy per-node values of generation ``g-1`` onto their children in generation ``g``."""
        return np.repeat(values, self._child_counts[g])

    def parent_local(self, g: int) -> np.ndarray:
        """Parent of each generation-``g`` node as an index into generation ``g-1``."""
        s = self.generation_slice(g)
        return self.parent[s] - self.offsets[g - 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("node,parent,gen,position\n")
        gen = self.generation
        for i in range(self.size):
            par = "" if self.parent[i] < 0 else str(int(self.parent[i]))
            buf.write(f"{i},{par},{int(gen[i])},{self.positions[i]:.17g}\n")
        return buf.getvalue()


def simulate(law: OffspringLaw, n: int, seed: int | np.random.Generator,
             node_cap: int = DEFAULT_NODE_CAP) -> TreeArena:
    """Simulate all individuals up to generation ``n``.

    ``seed`` may be an int (stream ``(seed, 0)``) or a ready generator.
    Raises :class:`CapExceeded` before allocating past ``node_cap`` nodes.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if node_cap < 1:
        raise ValueError("node_cap must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else replica_rng(seed, 0)
    pos_chunks = [np.zeros(1)]
    par_chunks = [np.full(1, -1, dtype=np.int64)]
    offsets = [0, 1]
    total = 1
    for g in range(1, n + 1):
        prev_start = offsets[g - 1]
        prev_pos = pos_chunks[-1]
        counts = law.sample_counts(prev_pos.size, rng)
        if law.extinction_prob == 0.0:
            counts = 2
        born = int(np.sum(counts)) if not isinstance(counts, int) else counts * prev_pos.size
        if total + born > node_cap:
            raise CapExceeded(f"generation {g} would bring the tree to {total + born} nodes (cap {node_cap})")
        pos_chunks.append(np.repeat(prev_pos, counts) + law.sample_displacements(born, rng))
        par_chunks.append(np.repeat(np.arange(prev_start, prev_start + prev_pos.size), counts))
        total += born
        offsets.append(total)
    return TreeArena(
        positions=np.concatenate(pos_chunks),
        parent=np.concatenate(par_chunks),
        offsets=np.asarray(offsets, dtype=np.int64),
        law=law,
        n_max=n,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
    )


def lineage(tree: TreeArena, leaf: int) -> np.ndarray:
    """Positions of the ancestors of ``leaf`` from the root down to ``leaf`` itself."""
    if not 0 <= leaf < tree.size:
        raise IndexError(f"invalid node index {leaf}")
    out = []
    node = int(leaf)
    while node >= 0:
        out.append(tree.positions[node])
        node = int(tree.parent[node])
    return np.asarray(out[::-1])


def ancestor_matrix(tree: TreeArena, n: int) -> np.ndarray:
    """``A[i, k]`` is the generation-``k`` ancestor of the i-th leaf of generation ``n``."""
    s = tree.generation_slice(n)
    out = np.empty((s.stop - s.start, n + 1), dtype=np.int64)
    node = np.arange(s.start, s.stop)
    for k in range(n, -1, -1):
        out[:, k] = node
        node = tree.parent[node]
    return out


def default_grid(points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.ndim != 1 or g.size == 0 or g[0] < 0 or g[-1] > 1 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing within [0, 1]")


def normalize_trajectory(positions, sigma2: float, n: int, grid=None) -> Trajectory:
    """Rescale an ancestral path: value at ``t`` is ``positions[floor(t n)] / sqrt(sigma2 n)``."""
    positions = np.asarray(positions, dtype=float)
    if positions.shape[-1] != n + 1:
        raise ValueError(f"expected {n + 1} positions, got {positions.shape[-1]}")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if n == 0:
        return Trajectory(grid, np.zeros(positions.shape[:-1] + grid.shape))
    idx = grid_generation(grid, n)
    return Trajectory(grid, positions[..., idx] / math.sqrt(sigma2 * n))


@dataclass(frozen=True)
class MartingaleReadout:
    W_n_1: float
    Z_n: float
    W_n_beta: float
    log_W_n_beta: float
    n: int
    beta: float

    def as_dict(self) -> dict:
        return {"n": self.n, "beta": self.beta, "W_n_1": self.W_n_1, "Z_n": self.Z_n,
                "W_n_beta": self.W_n_beta, "log_W_n_beta": self.log_W_n_beta}


def log_sum_exp(logs: np.ndarray) -> float:
    """``log(sum(exp(logs)))`` with a max shift; numpy sums pairwise, so rounding grows like log(size)."""
    top = float(np.max(logs))
    return top + math.log(float(np.sum(np.exp(logs - top))))


def martingales(tree: TreeArena, n: int, beta: float = 2.0) -> MartingaleReadout:
    """Additive martingale, derivative martingale and the beta-partition function at generation ``n``."""
    v = tree.positions[tree.generation_slice(n)]
    if v.size == 0:
        return MartingaleReadout(0.0, 0.0, 0.0, -math.inf, n, beta)
    vmin = float(v.min())
    shifted = np.exp(-(v - vmin))
    w1 = math.exp(-vmin) * float(np.sum(shifted))
    z = math.exp(-vmin) * float(np.sum(v * shifted))
    logwb = log_sum_exp(-beta * v)
    return MartingaleReadout(w1, z, math.exp(logwb), logwb, n, beta)


def min_position(tree: TreeArena, n: int) -> float | None:
    v = tree.positions[tree.generation_slice(n)]
    return None if v.size == 0 else float(v.min())
