"""Seeding, replica scheduling and Monte Carlo summaries shared by every campaign.

Replica ``r`` of a campaign with master seed ``s`` always draws from the stream
``SeedSequence(s, spawn_key=(r,))``, so any replica can be rerun in isolation and
results never depend on how many workers were used.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

#: Replica-block size for campaigns that vectorise many cheap replicas per stream.
BLOCK_SIZE = 4096
ROUNDOFF = 1e-12


def replica_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``keys`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def map_replicas(fn: Callable[[int], T], indices: Iterable[int], workers: int = 1) -> list[T]:
    """Evaluate ``fn`` on each index, returning results in index order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    indices = list(indices)
    if workers <= 1 or len(indices) < 2:
        return [fn(i) for i in indices]
    chunk = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices, chunksize=chunk))


def first_accepted(fn: Callable[[int], T | None], count: int, workers: int = 1,
                   max_attempts: int | None = None) -> tuple[list[T], int]:
    """Collect the first ``count`` non-None results of ``fn(0), fn(1), ...``.

    This is rejection sampling over replica streams: a stream whose result is
    ``None`` (e.g. an extinct tree) is discarded. Returns the accepted results
    and the number of streams consumed.
    """
    accepted: list[T] = []
    start = 0
    batch = max(count, 1)
    while len(accepted) < count:
        if max_attempts is not None and start >= max_attempts:
            raise RuntimeError(f"only {len(accepted)} of {count} replicas accepted after {start} attempts")
        results = map_replicas(fn, range(start, start + batch), workers)
        for i, res in enumerate(results):
            if res is not None:
                accepted.append(res)
                if len(accepted) == count:
                    return accepted, start + i + 1
        start += batch
    return accepted, start


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error."""

    mean: float
    se: float
    count: int

    def __post_init__(self):
        if self.se < 0 or self.count < 1:
            raise ValueError("McEstimate requires se >= 0 and count >= 1")

    @classmethod
    def from_samples(cls, samples: Sequence[float] | np.ndarray) -> "McEstimate":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            raise ValueError("no samples")
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        return cls(float(x.mean()), se, int(x.size))

    def within(self, target: float, k: float, slack: float = 0.0) -> bool:
        se = max(self.se, ROUNDOFF * max(abs(self.mean), abs(target)))
        return abs(self.mean - target) <= k * se + slack

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "count": self.count}


def z_score(a: McEstimate, b: McEstimate | float) -> float:
    """Difference ``a - b`` in units of the combined standard error."""
    if isinstance(b, McEstimate):
        diff, se, ref = a.mean - b.mean, math.hypot(a.se, b.se), b.mean
    else:
        diff, se, ref = a.mean - float(b), a.se, float(b)
    # floating round-off floor, so exact-up-to-rounding estimates score zero
    se = max(se, ROUNDOFF * max(abs(a.mean), abs(ref)))
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / se


def ratio_estimate(num: np.ndarray, den: np.ndarray) -> McEstimate:
    """Ratio of means of paired samples, with a delta-method standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    k = num.size
    mn, md = num.mean(), den.mean()
    r = mn / md
    resid = (num - r * den) / md
    se = float(resid.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    return McEstimate(float(r), se, k)
