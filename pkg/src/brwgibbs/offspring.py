"""Offspring point-process laws calibrated exactly to the boundary case.

Two families are available, both with i.i.d. Gaussian displacements:

* ``binary_gaussian``: always two children, displacements ``Normal(m, s2)``;
* ``bernoulli_binary``: no children with probability ``q``, otherwise two.

For ``X ~ Normal(m, s2)`` one has ``E[e^{-X}] = exp(-m + s2/2)`` and
``E[X e^{-X}] = (m - s2) exp(-m + s2/2)``, so both laws are calibrated by
``m = s2`` and ``2 (1 - q) exp(-s2/2) = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .montecarlo import McEstimate, replica_rng

LAW_NAMES = ("binary_gaussian", "bernoulli_binary")


@dataclass(frozen=True)
class OffspringLaw:
    """A calibrated boundary-case law. Construct via the ``calibrate_*`` helpers."""

    variant: str
    mean: float
    variance: float
    extinction_prob: float = 0.0

    def __post_init__(self):
        if self.variant not in LAW_NAMES:
            raise ValueError(f"unknown law variant {self.variant!r}")
        if not self.variance > 0:
            raise ValueError("displacement variance must be positive")
        if not 0.0 <= self.extinction_prob < 1.0:
            raise ValueError("extinction probability must lie in [0, 1)")

    @property
    def sigma2(self) -> float:
        """``E[sum V^2 e^{-V}]`` over the first generation, in closed form."""
        m, s2 = self.mean, self.variance
        return 2.0 * self.survive_prob * math.exp(-m + s2 / 2.0) * ((m - s2) ** 2 + s2)

    @property
    def survive_prob(self) -> float:
        return 1.0 - self.extinction_prob

    @property
    def mean_offspring(self) -> float:
        return 2.0 * self.survive_prob

    def closed_form_residuals(self) -> tuple[float, float]:
        """Exact values of ``E[sum e^{-V}] - 1`` and ``E[sum V e^{-V}]``."""
        m, s2 = self.mean, self.variance
        tilt = 2.0 * self.survive_prob * math.exp(-m + s2 / 2.0)
        return tilt - 1.0, tilt * (m - s2)

    def gibbs_moment(self, beta: float) -> float:
        """``E[sum_{|z|=1} e^{-beta V(z)}]``."""
        m, s2 = self.mean, self.variance
        return 2.0 * self.survive_prob * math.exp(-beta * m + beta * beta * s2 / 2.0)

    def sample_counts(self, parents: int, rng: np.random.Generator) -> np.ndarray:
        if self.extinction_prob > 0.0:
            return np.where(rng.random(parents) < self.extinction_prob, 0, 2)
        return np.full(parents, 2)

    def sample_displacements(self, total: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(total)

    def sample_offspring(self, parents: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Children counts per parent and the concatenated displacements.

        Draw order is fixed (survival uniforms first, then displacements) so
        that trees are reproducible from a seed.
        """
        counts = self.sample_counts(parents, rng)
        return counts, self.sample_displacements(int(counts.sum()), rng)

    def describe(self) -> dict:
        return {"law": self.variant, "q": self.extinction_prob, "mean": self.mean,
                "variance": self.variance, "sigma2": self.sigma2}


def calibrate_binary_gaussian() -> OffspringLaw:
    two_log_two = 2.0 * math.log(2.0)
    return OffspringLaw("binary_gaussian", two_log_two, two_log_two)


def calibrate_bernoulli_binary(q: float) -> OffspringLaw:
    """Boundary calibration with extinction probability ``q < 1/2``."""
    q = float(q)
    if not 0.0 <= q < 0.5:
        raise ValueError("q must lie in [0, 1/2): boundary calibration needs 2(1-q) > 1")
    if q == 0.0:
        return calibrate_binary_gaussian()
    s2 = 2.0 * math.log(2.0 * (1.0 - q))
    return OffspringLaw("bernoulli_binary", s2, s2, q)


def law_from_config(law: str = "binary_gaussian", q: float = 0.0) -> OffspringLaw:
    if law == "binary_gaussian":
        return calibrate_binary_gaussian()
    if law == "bernoulli_binary":
        return calibrate_bernoulli_binary(q)
    raise ValueError(f"unknown law {law!r}; expected one of {LAW_NAMES}")


def extinction_by_generation(law: OffspringLaw, n: int) -> float:
    """Exact ``P(generation n is empty)``: the n-fold iterate of the generating function at 0."""
    q = law.extinction_prob
    x = 0.0
    for _ in range(n):
        x = q + (1.0 - q) * x * x
    return x


def verify_boundary(law: OffspringLaw, replicas: int, seed: int) -> tuple[McEstimate, McEstimate]:
    """Monte Carlo residuals of the two boundary identities over first-generation broods."""
    if replicas < 100:
        raise ValueError("verify_boundary needs at least 100 replicas")
    rng = replica_rng(seed, 0)
    counts, disp = law.sample_offspring(replicas, rng)
    owner = np.repeat(np.arange(replicas), counts)
    w = np.exp(-disp)
    r1 = np.bincount(owner, weights=w, minlength=replicas) - 1.0
    r2 = np.bincount(owner, weights=disp * w, minlength=replicas)
    return McEstimate.from_samples(r1), McEstimate.from_samples(r2)
