"""Gibbs measures on generation n: weights, sampling, trajectory averages and overlaps."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import partial
from typing import Sequence

import numpy as np

from .brw import TreeArena, ancestor_matrix, log_sum_exp, simulate
from .functionals import PathFunctional, grid_generation
from .montecarlo import McEstimate, first_accepted, replica_rng
from .offspring import OffspringLaw


class ExtinctGeneration(ValueError):
    """The requested generation is empty, so no Gibbs measure exists."""


@dataclass(frozen=True)
class GibbsWeights:
    leaf_indices: np.ndarray
    log_weights: np.ndarray
    log_partition: float
    beta: float
    n: int

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_partition)

    @classmethod
    def from_log_weights(cls, log_weights, beta: float = 1.0, n: int = 0, leaf_indices=None) -> "GibbsWeights":
        lw = np.asarray(log_weights, dtype=float)
        if lw.size == 0:
            raise ExtinctGeneration("no leaves")
        idx = np.arange(lw.size) if leaf_indices is None else np.asarray(leaf_indices)
        return cls(idx, lw, log_sum_exp(lw), beta, n)

    def rescaled(self, log_factor: float) -> "GibbsWeights":
        """Same measure with every weight multiplied by ``exp(log_factor)``."""
        return GibbsWeights.from_log_weights(self.log_weights + log_factor, self.beta, self.n, self.leaf_indices)


def gibbs_weights(tree: TreeArena, n: int, beta: float) -> GibbsWeights:
    s = tree.generation_slice(n)
    if s.stop == s.start:
        raise ExtinctGeneration(f"generation {n} is empty")
    return GibbsWeights.from_log_weights(-beta * tree.positions[s], beta, n, np.arange(s.start, s.stop))


def sample_leaves(weights: GibbsWeights, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` i.i.d. node indices drawn from the normalized weights (prefix sums + binary search)."""
    if k < 1:
        raise ValueError("k must be positive")
    cdf = np.cumsum(weights.probs)
    pick = np.searchsorted(cdf, rng.random(k) * cdf[-1], side="right")
    return weights.leaf_indices[np.minimum(pick, cdf.size - 1)]


def _scale(tree: TreeArena, n: int, sigma2: float | None) -> float:
    if sigma2 is None:
        sigma2 = tree.law.sigma2
    return math.sqrt(sigma2 * n) if n > 0 else 1.0


def leaf_trajectories(tree: TreeArena, n: int, sigma2: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Full-resolution normalized trajectories of every generation-``n`` leaf.

    Returns sample times ``k/n`` and an array of shape ``(leaves, n + 1)``.
    """
    paths = tree.positions[ancestor_matrix(tree, n)] / _scale(tree, n, sigma2)
    times = np.arange(n + 1) / n if n > 0 else np.zeros(1)
    return times, paths


def leaf_functional_values(tree: TreeArena, n: int, F, sigma2: float | None = None) -> np.ndarray:
    """``F`` applied to the normalized trajectory of each leaf at generation ``n``.

    Built-in functionals are propagated down the tree one generation at a time;
    any other callable ``F(times, paths)`` receives the full trajectory matrix.
    """
    if not isinstance(F, PathFunctional):
        times, paths = leaf_trajectories(tree, n, sigma2)
        return np.asarray(F(times, paths), dtype=float)
    scale = _scale(tree, n, sigma2)
    x = tree.positions[tree.generation_slice(0)]
    state = F.step_state(F.init_state(n, scale), 0, x, n, scale)
    for g in range(1, n + 1):
        if state.size > 1:
            state = tree.expand(state, g)
        x = tree.positions[tree.generation_slice(g)]
        state = F.step_state(np.broadcast_to(state, x.shape), g, x, n, scale)
    return F.finish(state, x, n, scale)


def stream_leaf_values(law: OffspringLaw, n: int, rng: np.random.Generator,
                       functionals: Sequence[PathFunctional]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Simulate to generation ``n`` keeping only the current generation and functional states.

    Consumes ``rng`` exactly as :func:`brwgibbs.brw.simulate` does, so for the
    same stream it returns the generation-``n`` positions of that tree together
    with each functional evaluated on every leaf trajectory.
    """
    scale = math.sqrt(law.sigma2 * n) if n > 0 else 1.0
    x = np.zeros(1)
    states = [F.step_state(F.init_state(n, scale), 0, x, n, scale) for F in functionals]
    for g in range(1, n + 1):
        counts = law.sample_counts(x.size, rng)
        if law.extinction_prob == 0.0:
            counts = 2
        born = counts * x.size if isinstance(counts, int) else int(counts.sum())
        x = np.repeat(x, counts) + law.sample_displacements(born, rng)
        states = [F.step_state(np.repeat(st, counts) if st.size > 1 else np.broadcast_to(st, x.shape), g, x, n, scale)
                  for F, st in zip(functionals, states)]
    return x, [F.finish(st, x, n, scale) for F, st in zip(functionals, states)]


def mu_functional(tree: TreeArena, n: int, beta: float, F, grid=None) -> float:
    """Exact Gibbs average of ``F`` over all leaves.

    With ``grid`` given, trajectories are first sampled on that grid (step
    interpolation), otherwise the full-resolution path is used.
    """
    w = gibbs_weights(tree, n, beta)
    if grid is not None:
        times, paths = leaf_trajectories(tree, n)
        g = np.asarray(grid, dtype=float)
        vals = F(g, paths[:, grid_generation(g, n)])
    else:
        vals = leaf_functional_values(tree, n, F)
    return float(np.dot(w.probs, vals))


def log_tilde_scale(n: int, beta: float) -> float:
    return 1.5 * beta * math.log(n) if n > 0 else -math.inf


def tilde_mu(tree: TreeArena, n: int, beta: float, F) -> float:
    """Unnormalized, polynomially rescaled Gibbs mass of ``F``; zero on extinction."""
    try:
        w = gibbs_weights(tree, n, beta)
    except ExtinctGeneration:
        return 0.0
    vals = leaf_functional_values(tree, n, F)
    return math.exp(log_tilde_scale(n, beta) + w.log_partition) * float(np.dot(w.probs, vals))


def mrca(tree: TreeArena, z: int, z2: int) -> int:
    """Generation of the most recent common ancestor (by node identity)."""
    for node in (z, z2):
        if not 0 <= node < tree.size:
            raise IndexError(f"invalid node index {node}")
    gen = tree.generation
    a, b = int(z), int(z2)
    while gen[a] > gen[b]:
        a = int(tree.parent[a])
    while gen[b] > gen[a]:
        b = int(tree.parent[b])
    while a != b:
        a, b = int(tree.parent[a]), int(tree.parent[b])
    return int(gen[a])


def mrca_generations(tree: TreeArena, z: np.ndarray, z2: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mrca` for arrays of nodes of one common generation."""
    a = np.asarray(z, dtype=np.int64).copy()
    b = np.asarray(z2, dtype=np.int64).copy()
    gen = tree.generation
    if a.size == 0:
        return a
    g = int(gen[a[0]])
    if np.any(gen[a] != g) or np.any(gen[b] != g):
        raise ValueError("mrca_generations needs nodes of a single generation")
    out = np.full(a.shape, g, dtype=np.int64)
    differ = a != b
    while np.any(differ):
        g -= 1
        a[differ] = tree.parent[a[differ]]
        b[differ] = tree.parent[b[differ]]
        out[differ] = g
        differ = a != b
    return out


def subtree_masses(tree: TreeArena, weights: GibbsWeights) -> list[np.ndarray]:
    """Gibbs mass of the descendants of each node, per generation ``0..n``."""
    n = weights.n
    masses = [None] * (n + 1)
    masses[n] = weights.probs
    for g in range(n, 0, -1):
        masses[g - 1] = np.bincount(tree.parent_local(g), weights=masses[g], minlength=tree.generation_size(g - 1))
    return masses


def coalescence_profile(tree: TreeArena, weights: GibbsWeights) -> np.ndarray:
    """``S[k] = P(two independent Gibbs leaves share their generation-k ancestor)``, k = 0..n."""
    return np.array([float(np.dot(m, m)) for m in subtree_masses(tree, weights)])


@dataclass
class OverlapReport:
    t_grid: np.ndarray
    split_prob: list[McEstimate]
    mrca_over_n_histogram: np.ndarray
    n: int
    beta: float
    replicas: int
    streams_used: int
    pairs_per_replica: int | None = None
    limit: McEstimate | None = None

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.mrca_over_n_histogram = np.asarray(self.mrca_over_n_histogram, dtype=float)

    @property
    def means(self) -> np.ndarray:
        return np.array([e.mean for e in self.split_prob])

    def spread(self) -> float:
        return float(self.means.max() - self.means.min())

    def to_csv(self, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        cols = ["t", "split_prob", "se", "n", "beta", "replicas"]
        if self.limit is not None:
            cols += ["limit", "limit_se"]
        buf.write(",".join(cols) + "\n")
        for t, e in zip(self.t_grid, self.split_prob):
            row = [f"{t:.17g}", f"{e.mean:.17g}", f"{e.se:.17g}", str(self.n), f"{self.beta:.17g}", str(self.replicas)]
            if self.limit is not None:
                row += [f"{self.limit.mean:.17g}", f"{self.limit.se:.17g}"]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        buf.write("mrca_over_n,frequency\n")
        for k, f in enumerate(self.mrca_over_n_histogram):
            buf.write(f"{k / max(self.n, 1):.17g},{f:.17g}\n")
        return buf.getvalue()


def _overlap_replica(r: int, law: OffspringLaw, n: int, beta: float, gens: np.ndarray,
                     pairs: int | None, seed: int):
    rng = replica_rng(seed, r)
    tree = simulate(law, n, rng)
    if tree.generation_size(n) == 0:
        return None
    w = gibbs_weights(tree, n, beta)
    if pairs is None:
        s = coalescence_profile(tree, w)
        split = np.clip(1.0 - s[gens], 0.0, 1.0)
        hist = s - np.append(s[1:], 0.0)
    else:
        a = sample_leaves(w, pairs, rng)
        b = sample_leaves(w, pairs, rng)
        m = mrca_generations(tree, a, b)
        split = (m[None, :] < gens[:, None]).mean(axis=1)
        hist = np.bincount(m, minlength=n + 1) / pairs
    return split, hist


def overlap_estimate(law: OffspringLaw, n: int, beta: float, t_grid, replicas: int,
                     pairs_per_replica: int | None = None, seed: int = 0, workers: int = 1) -> OverlapReport:
    """Annealed probability, under survival, that two Gibbs-sampled leaves split before ``floor(n t)``.

    ``pairs_per_replica=None`` computes each replica's pair law exactly from
    subtree masses; an integer samples that many independent pairs instead.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(t_grid >= 1):
        raise ValueError("t_grid must lie in (0, 1)")
    gens = grid_generation(t_grid, n)
    fn = partial(_overlap_replica, law=law, n=n, beta=beta, gens=gens, pairs=pairs_per_replica, seed=seed)
    results, used = first_accepted(fn, replicas, workers)
    split = np.array([r[0] for r in results])
    hist = np.mean([r[1] for r in results], axis=0)
    ests = [McEstimate.from_samples(split[:, j]) for j in range(t_grid.size)]
    return OverlapReport(t_grid, ests, hist / hist.sum(), n, beta, replicas, used, pairs_per_replica)
