"""Size-biased trees with a distinguished line of descent, and the many-to-one identity.

Under the size-biased law the spine individual reproduces according to the
brood law reweighted by ``sum_children e^{-x}``. For two i.i.d. ``Normal(m, s2)``
children this reweighting is an equal mixture: one child, chosen uniformly, is
shifted to ``Normal(m - s2, s2)`` while its sibling keeps the original law. The
next spine individual is then picked among the brood with probability
proportional to ``e^{-V}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
import numpy as np

from .brw import TreeArena, ancestor_matrix, log_sum_exp, martingales
from .brw import simulate as simulate_tree
from .montecarlo import BLOCK_SIZE, McEstimate, map_replicas, replica_rng
from .offspring import OffspringLaw


@dataclass(frozen=True)
class SpineStepLaw:
    mean: float
    variance: float

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(shape)


def spine_step_law(law: OffspringLaw) -> SpineStepLaw:
    """Closed-form increment law of the spine: the ``e^{-x}``-tilt of ``Normal(m, s2)``."""
    return SpineStepLaw(law.mean - law.variance, law.variance)


@dataclass(frozen=True)
class SpineRun:
    tree: TreeArena
    spine: np.ndarray
    spine_positions: np.ndarray


def simulate_spine(law: OffspringLaw, n: int, seed) -> SpineRun:
    """A tree of the size-biased law up to generation ``n`` with its marked spine."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else replica_rng(seed, 0)
    pos_chunks = [np.zeros(1)]
    par_chunks = [np.full(1, -1, dtype=np.int64)]
    offsets = [0, 1]
    spine = [0]
    spine_local = 0
    total = 1
    for g in range(1, n + 1):
        prev_pos = pos_chunks[-1]
        counts = law.sample_counts(prev_pos.size, rng)
        counts[spine_local] = 2
        born = int(counts.sum())
        local = np.repeat(np.arange(prev_pos.size), counts)
        disp = law.sample_displacements(born, rng)
        first = int(np.searchsorted(local, spine_local))
        tilted = int(rng.integers(2))
        disp[first + tilted] -= law.variance
        d0, d1 = disp[first], disp[first + 1]
        p0 = 1.0 / (1.0 + math.exp(d0 - d1))
        child = first if rng.random() < p0 else first + 1
        pos_chunks.append(prev_pos[local] + disp)
        par_chunks.append(local + offsets[g - 1])
        spine.append(total + child)
        spine_local = child
        total += born
        offsets.append(total)
    tree = TreeArena(np.concatenate(pos_chunks), np.concatenate(par_chunks),
                     np.asarray(offsets, dtype=np.int64), law, n,
                     seed if isinstance(seed, (int, np.integer)) else None)
    spine = np.asarray(spine, dtype=np.int64)
    return SpineRun(tree, spine, tree.positions[spine])


@dataclass(frozen=True)
class SmoothPositive:
    """Continuous stand-in for ``1{min_k x_k >= 0}``: ramps from 0 at ``-width`` to 1 at 0."""

    width: float = 0.5

    def __call__(self, paths):
        return np.clip(1.0 + np.min(paths, axis=-1) / self.width, 0.0, 1.0)


def smooth_positive(width: float = 0.5) -> SmoothPositive:
    return SmoothPositive(width)


def one(paths):
    return np.ones(np.shape(paths)[:-1])


def last(paths):
    return np.asarray(paths)[..., -1]


def _tree_sum(r: int, law: OffspringLaw, n: int, g, seed: int) -> float:
    tree = simulate_tree(law, n, replica_rng(seed, 0, r))
    if tree.generation_size(n) == 0:
        return 0.0
    paths = tree.positions[ancestor_matrix(tree, n)][:, 1:]
    return float(np.sum(g(paths)))


def _walk_block(b: int, step: SpineStepLaw, n: int, g, seed: int, size: int, tilt: float) -> np.ndarray:
    rng = replica_rng(seed, 1, b)
    shift = tilt * step.variance
    paths = np.cumsum(step.sample((size, n), rng) + shift, axis=1)
    log_w = (1.0 - tilt) * paths[:, -1] + n * tilt * tilt * step.variance / 2.0
    return np.exp(log_w) * g(paths)


def many_to_one_check(law: OffspringLaw, n: int, g, replicas: int, seed: int,
                      tilt: float = 1.0, workers: int = 1) -> tuple[McEstimate, McEstimate]:
    """Tree side ``E[sum_{|z|=n} g(V(z_1..z_n))]`` against walk side ``E[e^{S_n} g(S_1..S_n)]``.

    The walk side draws steps from the spine law shifted by ``tilt * s2`` and
    corrects with the likelihood ratio; ``tilt = 0`` is plain sampling. The
    default ``tilt = 1`` makes the weight constant, which removes the lognormal
    variance of ``e^{S_n}``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    lhs = map_replicas(partial(_tree_sum, law=law, n=n, g=g, seed=seed), range(replicas), workers)
    step = spine_step_law(law)
    blocks = [(b, min(BLOCK_SIZE, replicas - b * BLOCK_SIZE)) for b in range(-(-replicas // BLOCK_SIZE))]
    parts = [_walk_block(b, step, n, g, seed, size, tilt) for b, size in blocks]
    return McEstimate.from_samples(lhs), McEstimate.from_samples(np.concatenate(parts))


def partition_function_mean(law: OffspringLaw, n: int, beta: float) -> float:
    """Exact ``E[W_{n,beta}] = (E[sum_{|z|=1} e^{-beta V}])^n``."""
    return law.gibbs_moment(beta) ** n


def _size_biased_ratio(r: int, law: OffspringLaw, n: int, beta: float, seed: int) -> float:
    run = simulate_spine(law, n, replica_rng(seed, 2, r))
    v = run.tree.positions[run.tree.generation_slice(n)]
    return math.exp(log_sum_exp(-beta * v) - log_sum_exp(-v))


def change_of_measure_check(law: OffspringLaw, n: int, beta: float, replicas: int, seed: int,
                            workers: int = 1) -> tuple[McEstimate, float]:
    """Size-biased estimate of ``E[W_{n,beta}/W_{n,1}]`` and the exact plain-law mean of ``W_{n,beta}``."""
    vals = map_replicas(partial(_size_biased_ratio, law=law, n=n, beta=beta, seed=seed), range(replicas), workers)
    return McEstimate.from_samples(vals), partition_function_mean(law, n, beta)


def _plain_partition(r: int, law: OffspringLaw, n: int, beta: float, seed: int) -> float:
    return martingales(simulate_tree(law, n, replica_rng(seed, 3, r)), n, beta).W_n_beta


def plain_partition_estimate(law: OffspringLaw, n: int, beta: float, replicas: int, seed: int,
                             workers: int = 1) -> McEstimate:
    """Direct Monte Carlo of ``E[W_{n,beta}]`` under the plain law."""
    vals = map_replicas(partial(_plain_partition, law=law, n=n, beta=beta, seed=seed), range(replicas), workers)
    return McEstimate.from_samples(vals)


def leftmost_indicator(tree: TreeArena, leaves: np.ndarray) -> np.ndarray:
    v = tree.positions[leaves]
    return (v == v.min()).astype(float)


def _identification_pair(r: int, law: OffspringLaw, n: int, h, seed: int) -> tuple[float, float]:
    run = simulate_spine(law, n, replica_rng(seed, 4, r))
    tree = run.tree
    leaves = tree.leaves(n)
    hv = h(tree, leaves)
    v = tree.positions[leaves]
    w = np.exp(-(v - v.min()))
    spine_val = hv[int(run.spine[-1] - leaves[0])]
    return float(spine_val), float(np.dot(w, hv) / w.sum())


def spine_identification_check(law: OffspringLaw, n: int, replicas: int, seed: int,
                               h=leftmost_indicator, workers: int = 1) -> tuple[McEstimate, McEstimate, McEstimate]:
    """Compare ``E[h(spine leaf)]`` with ``E[sum_z h(z) e^{-V(z)} / W_{n,1}]`` on the same size-biased trees.

    Returns both sides and their paired difference. ``h(tree, leaves)`` maps
    generation-``n`` node indices to reals.
    """
    pairs = np.array(map_replicas(partial(_identification_pair, law=law, n=n, h=h, seed=seed), range(replicas), workers))
    return (McEstimate.from_samples(pairs[:, 0]), McEstimate.from_samples(pairs[:, 1]),
            McEstimate.from_samples(pairs[:, 0] - pairs[:, 1]))


def spine_paths(law: OffspringLaw, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Spine positions ``V(spine_1..spine_n)`` for ``count`` runs, simulating only the spine broods."""
    disp = law.sample_displacements(2 * n * count, rng).reshape(count, n, 2)
    tilted = rng.integers(2, size=(count, n))
    np.put_along_axis(disp, tilted[..., None], np.take_along_axis(disp, tilted[..., None], 2) - law.variance, 2)
    p0 = 1.0 / (1.0 + np.exp(disp[..., 0] - disp[..., 1]))
    pick = (rng.random((count, n)) >= p0).astype(np.int64)
    steps = np.take_along_axis(disp, pick[..., None], 2)[..., 0]
    return np.cumsum(steps, axis=1)


def spine_walk_moments(law: OffspringLaw, n: int, replicas: int, seed: int) -> tuple[McEstimate, McEstimate]:
    """Sample mean of ``V(spine_n)/n`` and the ratio ``Var V(spine_n) / (n sigma2)``.

    The variance ratio's SE uses the fourth-moment formula for the sample variance.
    """
    blocks = [(b, min(BLOCK_SIZE, replicas - b * BLOCK_SIZE)) for b in range(-(-replicas // BLOCK_SIZE))]
    ends = np.concatenate([spine_paths(law, n, size, replica_rng(seed, 5, b))[:, -1] for b, size in blocks])
    mean = McEstimate.from_samples(ends / n)
    c = ends - ends.mean()
    var = float(np.mean(c ** 2))
    se_var = math.sqrt(max(float(np.mean(c ** 4)) - var ** 2, 0.0) / ends.size)
    scale = n * law.sigma2
    return mean, McEstimate(var / scale, se_var / scale, ends.size)
