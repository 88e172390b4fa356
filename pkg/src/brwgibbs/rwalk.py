"""Centred random walks conditioned to stay nonnegative.

Contents: ladder records, the renewal functions of the ladder height
processes, survival probabilities and their ``n^{-1/2}`` scaling, sampling
under the Doob transform by the renewal function, ballot-type probabilities
and the meander limit of the conditioned walk.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .functionals import PathFunctional
from .montecarlo import McEstimate, replica_rng, z_score

#: Paths per random stream for walk campaigns. Fixed so results never depend on worker count.
WALK_BLOCK = 2 ** 16


class EnvelopeError(RuntimeError):
    """A proposal left the window on which the rejection envelope is valid."""


@dataclass(frozen=True)
class GaussianStep:
    variance: float = 1.0
    kind = "gaussian"
    max_step = None

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        return math.sqrt(self.variance) * rng.standard_normal(shape)


@dataclass(frozen=True)
class LatticeStep:
    """Symmetric +-1 steps."""

    kind = "lattice"
    max_step = 1.0

    @property
    def variance(self) -> float:
        return 1.0

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        return 2.0 * rng.integers(0, 2, size=shape) - 1.0


def step_from_name(name: str, variance: float = 1.0):
    if name == "gaussian":
        return GaussianStep(variance)
    if name == "lattice":
        return LatticeStep()
    raise ValueError(f"unknown step law {name!r}")


# ---------------------------------------------------------------- ladder records

@dataclass(frozen=True)
class LadderDecomposition:
    ascending_epochs: np.ndarray
    ascending_heights: np.ndarray
    descending_epochs: np.ndarray
    descending_heights: np.ndarray


def _strict_records(path: np.ndarray) -> np.ndarray:
    """Times ``k >= 1`` with ``path[k] > max(path[:k])``."""
    if path.size < 2:
        return np.zeros(0, dtype=np.int64)
    prev_max = np.maximum.accumulate(path)[:-1]
    return np.nonzero(path[1:] > prev_max)[0] + 1


def ladder_epochs(path) -> LadderDecomposition:
    path = np.asarray(path, dtype=float)
    if path.size == 0 or path[0] != 0:
        raise ValueError("path must start at 0")
    up = _strict_records(path)
    down = _strict_records(-path)
    return LadderDecomposition(up, path[up], down, -path[down])


# ---------------------------------------------------------------- killed walks

def killed_walk(step, n: int, count: int, rng: np.random.Generator, start=0.0,
                level: float = 0.0, chunk: int = 256, keep_paths: bool = False):
    """Run ``count`` walks from ``start`` for ``n`` steps, killing each at its first visit below ``level``.

    Returns ``(death, final, paths)``: ``death[i]`` is the first time the walk
    is below ``level`` (``n + 1`` if never), ``final`` holds the endpoint of
    survivors (in input order) and ``paths`` their full trajectories
    ``S_0..S_n`` when ``keep_paths`` is set.
    """
    death = np.full(count, n + 1, dtype=np.int64)
    alive = np.arange(count)
    pos = np.broadcast_to(np.asarray(start, dtype=float), (count,)).copy()
    hist = [pos[:, None].copy()] if keep_paths else None
    t = 0
    while t < n and alive.size:
        k = min(chunk, n - t)
        block = pos[:, None] + np.cumsum(step.sample((alive.size, k), rng), axis=1)
        bad = block < level
        dead_row = bad.any(axis=1)
        if dead_row.any():
            first = np.argmax(bad[dead_row], axis=1)
            death[alive[dead_row]] = t + 1 + first
        keep = ~dead_row
        alive = alive[keep]
        pos = block[keep, -1]
        if keep_paths:
            hist = [h[keep] for h in hist]
            hist.append(block[keep])
        t += k
    paths = np.concatenate(hist, axis=1) if keep_paths else None
    return death, pos, paths


def _blocks(total: int, size: int = WALK_BLOCK):
    return [(b, min(size, total - b * size)) for b in range(-(-total // size))]


# ---------------------------------------------------------------- renewal functions

@dataclass
class RenewalTable:
    """Renewal functions of the strict descending (``v_minus``) and ascending (``v_plus``) ladder heights."""

    x_grid: np.ndarray
    v_minus: list[McEstimate]
    v_plus: list[McEstimate]
    exact_lattice: bool = False
    unfinished_fraction: float = 0.0
    horizon: int = 0
    slope: float = field(init=False)

    def __post_init__(self):
        self.x_grid = np.asarray(self.x_grid, dtype=float)
        vals = self.monotone_values()
        if self.exact_lattice:
            self.slope = 1.0
        else:
            half = self.x_grid >= self.x_grid[-1] / 2
            if half.sum() >= 2:
                self.slope = float(np.polyfit(self.x_grid[half], vals[half], 1)[0])
            else:
                self.slope = float((vals[-1] - vals[0]) / max(self.x_grid[-1] - self.x_grid[0], 1e-12))

    def monotone_values(self) -> np.ndarray:
        return np.maximum.accumulate(np.array([e.mean for e in self.v_minus]))

    def v_minus_at(self, x) -> np.ndarray:
        """Renewal function at arbitrary ``x >= 0``; linear in ``x`` beyond the grid."""
        x = np.asarray(x, dtype=float)
        if self.exact_lattice:
            return np.where(x >= 0, np.floor(x + 1e-12) + 1.0, 0.0)
        vals = self.monotone_values()
        inside = np.interp(x, self.x_grid, vals)
        beyond = vals[-1] + self.slope * (x - self.x_grid[-1])
        out = np.where(x > self.x_grid[-1], beyond, inside)
        return np.where(x >= 0, out, 0.0)

    @classmethod
    def lattice_exact(cls, x_grid) -> "RenewalTable":
        x_grid = np.asarray(x_grid, dtype=float)
        ests = [McEstimate(float(math.floor(x)) + 1.0, 0.0, 1) for x in x_grid]
        return cls(x_grid, ests, list(ests), exact_lattice=True)

    def to_csv(self) -> str:
        lines = ["x,v_minus,v_minus_se,v_plus,v_plus_se"]
        for x, a, b in zip(self.x_grid, self.v_minus, self.v_plus):
            lines.append(f"{x:.17g},{a.mean:.17g},{a.se:.17g},{b.mean:.17g},{b.se:.17g}")
        return "\n".join(lines) + "\n"


class _Signed:
    def __init__(self, step, sign):
        self.step, self.sign = step, sign
        self.variance = step.variance
        self.max_step = step.max_step

    def sample(self, shape, rng):
        return self.sign * self.step.sample(shape, rng)


def _ladder_heights(step, count: int, horizon: int, rng: np.random.Generator, sign: float,
                    chunk: int = 256) -> tuple[np.ndarray, int]:
    """First strict record heights of ``sign * S`` below 0 (``sign = 1``: descending)."""
    heights = np.full(count, np.nan)
    alive = np.arange(count)
    pos = np.zeros(count)
    t = 0
    while t < horizon and alive.size:
        k = min(chunk, horizon - t)
        block = pos[:, None] + np.cumsum(sign * step.sample((alive.size, k), rng), axis=1)
        bad = block < 0
        done = bad.any(axis=1)
        if done.any():
            first = np.argmax(bad[done], axis=1)
            heights[alive[done]] = -block[done][np.arange(first.size), first]
        alive = alive[~done]
        pos = block[~done, -1]
        t += k
    ok = ~np.isnan(heights)
    return heights[ok], int((~ok).sum())


def _renewal_counts(heights: np.ndarray, x_grid: np.ndarray, replicas: int) -> np.ndarray | None:
    """Per-replica ``1 + #{k : H_1 + ... + H_k <= x}``; replica ``r`` uses the ``r``-th row of the pool.

    Returns None when the pool is too small for every row to pass the last grid point.
    """
    width = heights.size // replicas
    if width == 0:
        return None
    sums = np.cumsum(heights[: replicas * width].reshape(replicas, width), axis=1)
    if np.any(sums[:, -1] <= x_grid[-1]):
        return None
    return 1.0 + np.stack([(sums <= x).sum(axis=1) for x in x_grid], axis=1)


def _renewal_side(step, x_grid, replicas, horizon, seed, sign, key) -> tuple[list[McEstimate], float]:
    pool = []
    dropped = drawn = 0
    b = 0
    counts = None
    while counts is None:
        if b >= 10_000:
            raise RuntimeError("renewal estimation failed to converge")
        h, d = _ladder_heights(step, WALK_BLOCK, horizon, replica_rng(seed, key, b), sign)
        pool.append(h)
        dropped += d
        drawn += WALK_BLOCK
        b += 1
        counts = _renewal_counts(np.concatenate(pool), x_grid, replicas)
    return [McEstimate.from_samples(counts[:, j]) for j in range(x_grid.size)], dropped / drawn


def renewal_estimate(step, x_grid, replicas: int, horizon: int, seed: int) -> RenewalTable:
    """Monte Carlo renewal functions on ``x_grid``.

    Each replica sums i.i.d. first-record heights (by the strong Markov property
    these are the successive ladder heights) until the running total exceeds
    the largest grid point. A first-record excursion longer than ``horizon``
    is discarded; the discarded fraction is reported.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(np.diff(x_grid) <= 0) or x_grid[0] < 0:
        raise ValueError("x_grid must be nonnegative and increasing")
    vm, fm = _renewal_side(step, x_grid, replicas, horizon, seed, 1.0, 0)
    vp, fp = _renewal_side(step, x_grid, replicas, horizon, seed, -1.0, 1)
    return RenewalTable(x_grid, vm, vp, unfinished_fraction=max(fm, fp), horizon=horizon)


def lattice_record_dp(x: int, K: int) -> tuple[Fraction, Fraction]:
    """Exact dynamic programme for the +-1 walk over all paths of length ``<= K``.

    Returns ``(records, unreached)`` where ``records`` is the sum over ``k <= K``
    of ``P(-x <= S_k < min_{j<k} S_j)`` (the ``k = 0`` term counts 1) and
    ``unreached = sum_{j=1..x} P(level -j not reached by time K)``. Their sum is
    exactly ``x + 1``.
    """
    half = Fraction(1, 2)
    # state: (position, running minimum) -> probability
    dist = {(0, 0): Fraction(1)}
    records = Fraction(1)
    reached = [Fraction(0)] * (x + 1)
    for _ in range(K):
        new: dict[tuple[int, int], Fraction] = {}
        for (s, m), p in dist.items():
            for d in (-1, 1):
                s2 = s + d
                m2 = min(m, s2)
                if s2 < m and s2 >= -x:
                    records += p * half
                    reached[-s2] += p * half
                key = (s2, m2)
                new[key] = new.get(key, Fraction(0)) + p * half
        dist = new
    unreached = sum((1 - reached[j] for j in range(1, x + 1)), Fraction(0))
    return records, unreached


def harmonicity_lattice_exact(x: int, N: int) -> tuple[Fraction, Fraction]:
    """``E[V(x + S_N) 1{min_{k<=N} S_k >= -x}]`` by enumerating all ``2^N`` paths, with ``V(y) = y + 1``."""
    total = Fraction(0)
    for steps in itertools.product((-1, 1), repeat=N):
        s, ok = 0, True
        for d in steps:
            s += d
            if s < -x:
                ok = False
                break
        if ok:
            total += x + s + 1
    return total / 2 ** N, Fraction(x + 1)


def harmonicity_mc(step, table: RenewalTable, x: float, N: int, replicas: int, seed: int) -> tuple[McEstimate, float]:
    """Monte Carlo of ``E[V(x + S_N) 1{min S >= -x}]`` against ``V(x)`` from the same table."""
    vals = []
    for b, size in _blocks(replicas):
        death, final, _ = killed_walk(step, N, size, replica_rng(seed, b), start=x)
        v = np.zeros(size)
        v[death > N] = table.v_minus_at(final)
        vals.append(v)
    return McEstimate.from_samples(np.concatenate(vals)), float(table.v_minus_at(x))


# ---------------------------------------------------------------- survival scaling

def survival_exact_gaussian(n: int) -> float:
    """``P(S_1, ..., S_n >= 0)`` for any continuous symmetric walk: ``C(2n, n) / 4^n``."""
    return math.exp(math.lgamma(2 * n + 1) - 2 * math.lgamma(n + 1) - 2 * n * math.log(2))


def survival_exact_lattice(n: int) -> float:
    """``P(S_1, ..., S_n >= 0)`` for the +-1 walk: ``C(n, floor(n/2)) / 2^n``."""
    return math.comb(n, n // 2) / 2 ** n


@dataclass
class SurvivalScaling:
    n_list: list[int]
    c_plus: list[McEstimate]
    c_minus: list[McEstimate]

    def spread(self, side: str = "plus") -> float:
        vals = np.array([e.mean for e in (self.c_plus if side == "plus" else self.c_minus)])
        return float(vals.max() / vals.min() - 1.0)

    def to_csv(self) -> str:
        lines = ["n,side,estimate,se"]
        for n, a, b in zip(self.n_list, self.c_plus, self.c_minus):
            lines.append(f"{n},plus,{a.mean:.17g},{a.se:.17g}")
            lines.append(f"{n},minus,{b.mean:.17g},{b.se:.17g}")
        return "\n".join(lines) + "\n"


def _survival_side(step, n_list, replicas, seed, key) -> list[McEstimate]:
    n_max = max(n_list)
    deaths = np.concatenate([killed_walk(step, n_max, size, replica_rng(seed, key, b))[0]
                             for b, size in _blocks(replicas)])
    return [McEstimate.from_samples(math.sqrt(n) * (deaths > n)) for n in n_list]


def survival_scaling(step, n_list: Sequence[int], replicas: int, seed: int) -> SurvivalScaling:
    """``sqrt(n) P(min_{k<=n} S_k >= 0)`` and the same for ``-S`` on independent streams."""
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    plus = _survival_side(step, n_list, replicas, seed, 0)
    minus = _survival_side(_Signed(step, -1.0), n_list, replicas, seed, 1)
    return SurvivalScaling(n_list, plus, minus)


# ---------------------------------------------------------------- h-transform

def h_transform_sample(step, renewal: RenewalTable, x0: float, N: int, rng: np.random.Generator,
                       size: int = 1, window: float = 8.0) -> np.ndarray:
    """Paths ``(size, N + 1)`` of the walk conditioned to stay nonnegative.

    Each step proposes ``y = x + xi`` from the base step law and accepts with
    probability ``V(y) 1{y >= 0} / V(x + w)``, where ``w`` bounds the step
    (``window`` standard deviations for unbounded steps). ``V`` is
    nondecreasing so the envelope dominates; a proposal beyond it raises
    :class:`EnvelopeError`.
    """
    if x0 < 0:
        raise ValueError("x0 must be nonnegative")
    reach = step.max_step if step.max_step is not None else window * math.sqrt(step.variance)
    paths = np.empty((size, N + 1))
    paths[:, 0] = x0
    x = np.full(size, float(x0))
    for k in range(1, N + 1):
        env = renewal.v_minus_at(x + reach)
        y = np.empty(size)
        todo = np.arange(size)
        while todo.size:
            prop = x[todo] + step.sample(todo.size, rng)
            if np.any(prop > x[todo] + reach):
                raise EnvelopeError("proposal beyond the rejection envelope; widen the window")
            acc = rng.random(todo.size) * env[todo] < renewal.v_minus_at(prop)
            y[todo[acc]] = prop[acc]
            todo = todo[~acc]
        x = y
        paths[:, k] = x
    return paths


def lattice_conditioned_law(N: int, x0: int = 0) -> dict[tuple[int, ...], Fraction]:
    """Exact law of ``N``-step paths of the +-1 walk under the transform by ``V(y) = y + 1``."""
    law = {}
    for steps in itertools.product((-1, 1), repeat=N):
        path = tuple(np.cumsum((x0,) + steps).tolist())
        if min(path) >= 0:
            law[path] = Fraction(path[-1] + 1, (x0 + 1) * 2 ** N)
    return law


def total_variation(samples: np.ndarray, exact: dict[tuple[int, ...], Fraction]) -> float:
    """TV distance between the empirical law of integer paths and an exact law."""
    keys, counts = np.unique(np.rint(samples).astype(np.int64), axis=0, return_counts=True)
    emp = {tuple(k.tolist()): c / samples.shape[0] for k, c in zip(keys, counts)}
    support = set(emp) | set(exact)
    return 0.5 * sum(abs(emp.get(p, 0.0) - float(exact.get(p, 0))) for p in support)


# ---------------------------------------------------------------- ballot and meander

def ballot_check(step, n_list: Sequence[int], x: float, y: float, a: float, b: float, lam: float,
                 replicas: int, seed: int) -> list[McEstimate]:
    """``n^{3/2} P_x(S_n in [y+a, y+b], min_{k<=n} S_k >= 0, min_{lam n <= k <= n} S_k >= y)`` per ``n``."""
    if not (0 <= a <= b and x >= 0 and y >= 0 and 0 < lam < 1):
        raise ValueError("need 0 <= a <= b, x, y >= 0 and lam in (0, 1)")
    out = []
    for i, n in enumerate(n_list):
        k0 = int(math.ceil(lam * n))
        hits = []
        for blk, size in _blocks(replicas):
            rng = replica_rng(seed, i, blk)
            # stay >= 0 up to k0, then >= y (y >= 0) from k0 to n
            _, mid, _ = killed_walk(step, k0, size, rng, start=x)
            mid = mid[mid >= y]
            _, final, _ = killed_walk(step, n - k0, mid.size, rng, start=mid, level=y)
            ok = (final >= y + a) & (final <= y + b)
            h = np.zeros(size)
            h[: int(ok.sum())] = 1.0
            hits.append(h)
        out.append(McEstimate.from_samples(n ** 1.5 * np.concatenate(hits)))
    return out


def conditioned_walk_functional(step, N: int, F: PathFunctional, accepted: int, seed: int) -> tuple[np.ndarray, int]:
    """``F`` of ``S_{floor(Nt)} / sqrt(sigma^2 N)`` over walks with ``min S >= 0``, by rejection.

    Returns the first ``accepted`` values in stream order and the number of walks tried.
    """
    times = np.arange(N + 1) / N
    scale = math.sqrt(step.variance * N)
    vals, tried, b = [], 0, 0
    got = 0
    while got < accepted:
        death, _, paths = killed_walk(step, N, WALK_BLOCK, replica_rng(seed, b), keep_paths=True)
        v = np.asarray(F(times, paths / scale), dtype=float)
        alive_idx = np.nonzero(death > N)[0]
        take = min(accepted - got, v.size)
        vals.append(v[:take])
        tried += WALK_BLOCK if take == v.size else int(alive_idx[take - 1]) + 1
        got += take
        b += 1
    return np.concatenate(vals), tried


def meander_limit_check(step, N: int, F: PathFunctional, replicas: int, seed: int,
                        m: int | None = None) -> tuple[McEstimate, McEstimate, float]:
    """Conditioned walk versus Brownian meander on a matched grid (``m = N`` by default)."""
    from .limits import sample_meander

    walk, _ = conditioned_walk_functional(step, N, F, replicas, seed)
    m = N if m is None else m
    rng = replica_rng(seed, 1 << 20)
    mvals = []
    for b, size in _blocks(replicas, 1024):
        path = sample_meander(m, rng, size=size)
        mvals.append(np.asarray(F(path.grid, path.values), dtype=float))
    w, me = McEstimate.from_samples(walk), McEstimate.from_samples(np.concatenate(mvals))
    return w, me, z_score(w, me)
