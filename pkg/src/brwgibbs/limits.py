"""Samplers for the limiting objects and identities between them.

Every path sampler takes an explicit time grid (or a number of uniform steps)
and is exact at the grid points: Brownian bridges are built from Brownian
motion by pinning, and three-dimensional Bessel bridges are norms of 3D
Brownian bridges whose endpoint direction has the correct von Mises-Fisher law.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .functionals import PathFunctional
from .montecarlo import McEstimate, z_score

DEFAULT_M = 512
BATCH = 256


@dataclass(frozen=True)
class LimitPath:
    """Sampled path(s); ``values`` has shape ``(len(grid),)`` or ``(size, len(grid))``."""

    grid: np.ndarray
    values: np.ndarray
    kind: str


def uniform_grid(m: int, length: float = 1.0, extra=()) -> np.ndarray:
    """``m + 1`` uniform points on ``[0, length]`` merged with any ``extra`` times."""
    if m < 2:
        raise ValueError("m must be at least 2")
    g = np.linspace(0.0, length, m + 1)
    if len(extra):
        g = np.union1d(g, np.asarray(extra, dtype=float))
    return g


def _brownian(times: np.ndarray, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Brownian motion from 0 sampled at ``times`` (which start at 0)."""
    dt = np.diff(times)
    inc = rng.standard_normal(shape + (dt.size,)) * np.sqrt(dt)
    out = np.zeros(shape + (times.size,))
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


def brownian_bridge(times: np.ndarray, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Standard Brownian bridge from 0 to 0 on ``[times[0], times[-1]]``."""
    times = np.asarray(times, dtype=float) - times[0]
    w = _brownian(times, shape, rng)
    return w - (times / times[-1]) * w[..., -1:]


def von_mises_fisher_cos(kappa, rng: np.random.Generator) -> np.ndarray:
    """Cosine of the angle to the mean direction for the 3D von Mises-Fisher law."""
    kappa = np.asarray(kappa, dtype=float)
    u = rng.random(kappa.shape)
    small = kappa < 1e-8
    safe = np.where(small, 1.0, kappa)
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * safe)) / safe
    return np.clip(np.where(small, 2.0 * u - 1.0, w), -1.0, 1.0)


def bessel3_bridge_values(times, x, y, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` Bessel-3 bridges from ``x`` to ``y`` (arrays broadcast over ``size``) on ``times``."""
    times = np.asarray(times, dtype=float)
    t = times[-1] - times[0]
    s = (times - times[0]) / t
    x = np.broadcast_to(np.asarray(x, dtype=float), (size,))
    y = np.broadcast_to(np.asarray(y, dtype=float), (size,))
    w = von_mises_fisher_cos(x * y / t, rng)
    phi = 2.0 * math.pi * rng.random(size)
    r = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    end = y[:, None] * np.stack([w, r * np.cos(phi), r * np.sin(phi)], axis=1)
    start = np.zeros((size, 3))
    start[:, 0] = x
    b = brownian_bridge(times, (size, 3), rng)
    pts = start[:, :, None] * (1.0 - s) + end[:, :, None] * s + b
    out = np.sqrt(np.einsum("ijk,ijk->ik", pts, pts))
    out[:, 0] = x
    out[:, -1] = y
    return out


def _batched(fn, size: int | None):
    if size is None:
        return fn(1)[0]
    return np.concatenate([fn(min(BATCH, size - i)) for i in range(0, size, BATCH)])


def sample_bessel3_bridge(x: float, y: float, length: float, m: int, rng: np.random.Generator,
                          size: int | None = None, grid=None) -> LimitPath:
    if x < 0 or y < 0 or length <= 0:
        raise ValueError("need x, y >= 0 and positive length")
    g = uniform_grid(m, length) if grid is None else np.asarray(grid, dtype=float)
    vals = _batched(lambda k: bessel3_bridge_values(g, x, y, rng, k), size)
    return LimitPath(g, vals, "bessel_bridge")


def sample_excursion(m: int, rng: np.random.Generator, size: int | None = None, grid=None) -> LimitPath:
    """Normalized Brownian excursion: the Bessel-3 bridge from 0 to 0 of length 1."""
    g = uniform_grid(m) if grid is None else np.asarray(grid, dtype=float)
    vals = _batched(lambda k: bessel3_bridge_values(g, 0.0, 0.0, rng, k), size)
    return LimitPath(g, vals, "excursion")


def _meander_values(times, rng, k):
    length = times[-1] - times[0]
    end = math.sqrt(length) * np.sqrt(-2.0 * np.log1p(-rng.random(k)))
    return bessel3_bridge_values(times, 0.0, end, rng, k)


def sample_meander(m: int, rng: np.random.Generator, size: int | None = None, length: float = 1.0,
                   grid=None) -> LimitPath:
    """Brownian meander of the given length: Rayleigh endpoint, then a Bessel-3 bridge from 0."""
    g = uniform_grid(m, length) if grid is None else np.asarray(grid, dtype=float)
    vals = _batched(lambda k: _meander_values(g, rng, k), size)
    return LimitPath(g, vals, "meander")


def sample_bessel3_process(times, rng: np.random.Generator, size: int, x: float = 0.0) -> np.ndarray:
    """Bessel-3 process from ``x``: the norm of a 3D Brownian motion."""
    times = np.asarray(times, dtype=float)
    def one(k):
        w = _brownian(times - times[0], (k, 3), rng)
        w[:, 0, :] += x
        return np.sqrt(np.einsum("ijk,ijk->ik", w, w))
    return _batched(one, size)


# ---------------------------------------------------------------- reference laws

def excursion_marginal(lam: float):
    """Law of the excursion at time ``lam``: Maxwell with scale ``sqrt(lam (1 - lam))``."""
    return stats.maxwell(scale=math.sqrt(lam * (1.0 - lam)))


def excursion_marginal_pdf(x, lam: float):
    x = np.asarray(x, dtype=float)
    v = lam * (1.0 - lam)
    return math.sqrt(2.0 / math.pi) * x * x * v ** -1.5 * np.exp(-x * x / (2.0 * v))


def excursion_midpoint_mean() -> float:
    """``E[e(1/2)]`` by quadrature of the marginal density."""
    return integrate.quad(lambda x: x * excursion_marginal_pdf(x, 0.5), 0, np.inf)[0]


RAYLEIGH = stats.rayleigh()


# ---------------------------------------------------------------- identities

def imhof_check(phi: PathFunctional, t: float, replicas: int, rng: np.random.Generator,
                m: int = DEFAULT_M) -> tuple[McEstimate, McEstimate, float]:
    """Meander of length ``t`` against a Bessel-3 process on ``[0, t]`` weighted by ``sqrt(pi/2) sqrt(t) / R(t)``.

    The weight is the density of the length-``t`` meander (the unit meander
    rescaled by Brownian scaling) with respect to the Bessel-3 law; it is not
    the density of the unit meander restricted to ``[0, t]`` unless ``t = 1``.
    """
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    g = uniform_grid(m, t)
    lhs = np.asarray(phi(g, sample_meander(m, rng, size=replicas, grid=g).values), dtype=float)
    r = sample_bessel3_process(g, rng, replicas)
    rhs = math.sqrt(math.pi / 2.0) * math.sqrt(t) * np.asarray(phi(g, r), dtype=float) / r[:, -1]
    a, b = McEstimate.from_samples(lhs), McEstimate.from_samples(rhs)
    return a, b, z_score(a, b)


def gamma_identity_check(g1: PathFunctional, g2: PathFunctional, lam: float, replicas: int,
                         rng: np.random.Generator, m: int = DEFAULT_M) -> tuple[McEstimate, McEstimate, float]:
    """Excursion split at ``lam`` versus a weighted meander of length ``lam`` spliced to a Bessel-3 bridge."""
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    grid = uniform_grid(m, 1.0, [lam])
    head = grid[grid <= lam + 1e-12]
    tail = grid[grid >= lam - 1e-12] - lam
    tail[0] = 0.0
    k = head.size
    ex = sample_excursion(m, rng, size=replicas, grid=grid).values
    lhs = np.asarray(g1(head, ex[:, :k]), dtype=float) * np.asarray(g2(tail, ex[:, k - 1:]), dtype=float)
    me = sample_meander(m, rng, size=replicas, grid=head).values
    end = me[:, -1]
    parts = []
    for i in range(0, replicas, BATCH):
        e = end[i:i + BATCH]
        parts.append(bessel3_bridge_values(tail, e, 0.0, rng, e.size))
    br = np.concatenate(parts)
    weight = (math.sqrt(2.0 / math.pi) * lam ** -0.5 * (1.0 - lam) ** -1.5
              * end * np.exp(-end * end / (2.0 * (1.0 - lam))))
    rhs = weight * np.asarray(g1(head, me), dtype=float) * np.asarray(g2(tail, br), dtype=float)
    a, b = McEstimate.from_samples(lhs), McEstimate.from_samples(rhs)
    return a, b, z_score(a, b)


# ---------------------------------------------------------------- Poisson-Dirichlet

@dataclass(frozen=True)
class PDSample:
    """Decreasing weights ``p_1 > p_2 > ...`` of the first ``K`` atoms.

    The remaining atoms are summarized by their expected total mass
    ``tail_bound`` and expected squared mass ``tail_square``, both already in
    normalized units, so ``sum(weights) + tail_bound == 1``.
    """

    weights: np.ndarray
    tail_bound: float
    tail_square: float = 0.0
    converged: bool = True

    @property
    def overlap(self) -> float:
        return float(np.dot(self.weights, self.weights)) + self.tail_square


def weights_from_arrivals(gammas, beta: float, compensate_tail: bool = True) -> PDSample:
    """Normalized ``Gamma_k^{-beta}`` weights for given Poisson arrival times.

    With ``compensate_tail`` the atoms beyond the last arrival contribute their
    expected mass ``Gamma_K^{1-beta}/(beta-1)`` to the normalization.
    """
    g = np.asarray(gammas, dtype=float)
    logw = -beta * (np.log(g) - math.log(g[0]))
    w = np.exp(logw)
    s = math.fsum(w)
    if not compensate_tail:
        return PDSample(w / s, 0.0, 0.0)
    lg = math.log(g[-1])
    tail = math.exp(beta * math.log(g[0]) + (1 - beta) * lg) / (beta - 1.0)
    tail2 = math.exp(2 * beta * math.log(g[0]) + (1 - 2 * beta) * lg) / (2 * beta - 1.0)
    total = s + tail
    return PDSample(w / total, tail / total, tail2 / total ** 2)


def sample_poisson_dirichlet(beta: float, tail_eps: float = 1e-4, rng: np.random.Generator | None = None,
                             max_atoms: int = 2 ** 14, chunk: int = 256) -> PDSample:
    """Ranked weights of the Poisson-Dirichlet law with parameter ``(1/beta, 0)``.

    Arrivals ``Gamma_k`` of a unit Poisson process give weights proportional to
    ``Gamma_k^{-beta}``. Atoms are generated until the expected share of the
    rest drops below ``tail_eps`` or ``max_atoms`` is reached; in the latter case
    ``converged`` is False and the tail is carried by its expected mass.
    """
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    if not 0 < tail_eps <= 1e-3:
        raise ValueError("tail_eps must lie in (0, 1e-3]")
    rng = np.random.default_rng() if rng is None else rng
    gammas = np.cumsum(rng.exponential(size=chunk))
    while True:
        pd = weights_from_arrivals(gammas, beta)
        if pd.tail_bound <= tail_eps:
            return pd
        if gammas.size >= max_atoms:
            return PDSample(pd.weights, pd.tail_bound, pd.tail_square, converged=False)
        more = gammas[-1] + np.cumsum(rng.exponential(size=min(gammas.size, max_atoms - gammas.size)))
        gammas = np.concatenate([gammas, more])


def pd_overlap_moment(beta: float, replicas: int, rng: np.random.Generator,
                      tail_eps: float = 1e-4) -> McEstimate:
    """Monte Carlo of ``E[sum_k p_k^2]`` (tail atoms enter through their expected squared mass)."""
    return McEstimate.from_samples([sample_poisson_dirichlet(beta, tail_eps, rng).overlap for _ in range(replicas)])


def limit_mixture_sample(beta: float, F: PathFunctional, m: int, rng: np.random.Generator,
                         max_marks: int = 64, tail_eps: float = 1e-4) -> float:
    """One draw of ``sum_k p_k F(e_k)`` with i.i.d. excursions ``e_k``.

    The largest ``max_marks`` atoms get their own excursion. The remaining mass
    ``R`` (listed atoms plus the expected unlisted tail) is split into ``J``
    equal atoms with ``J = ceil(R^2 / Q)``, ``Q`` the remaining squared mass, so
    the lumped part has the same first two moments of its weights.
    """
    pd = sample_poisson_dirichlet(beta, tail_eps, rng)
    head = pd.weights[:max_marks]
    rest = pd.weights[max_marks:]
    r = float(rest.sum()) + pd.tail_bound
    q = float(np.dot(rest, rest)) + pd.tail_square
    j = int(min(max(math.ceil(r * r / q), 1), max_marks)) if q > 0 else 1
    marks = sample_excursion(m, rng, size=head.size + j)
    vals = np.asarray(F(marks.grid, marks.values), dtype=float)
    return float(np.dot(head, vals[: head.size]) + r / j * vals[head.size:].sum())


def excursion_functional_samples(F: PathFunctional, count: int, m: int, rng: np.random.Generator) -> np.ndarray:
    path = sample_excursion(m, rng, size=count)
    return np.asarray(F(path.grid, path.values), dtype=float)


# ---------------------------------------------------------------- constants

def laplace_shift_integral(beta: float) -> float:
    """``-int_R (exp(-e^{-beta u}) - 1) e^u du``, which equals ``Gamma(1 - 1/beta)``."""
    return math.gamma(1.0 - 1.0 / beta)


def c_star_beta(c_beta: float, beta: float) -> float:
    return math.log(c_beta / laplace_shift_integral(beta))


@dataclass
class ConstantsTable:
    """Walk constants with standard errors; ``sigma`` is the step standard deviation."""

    C_plus: McEstimate
    C_minus: McEstimate
    sigma: float
    C_beta: dict = field(default_factory=dict)

    @property
    def C_star(self) -> McEstimate:
        return McEstimate(self.C_plus.mean / self.sigma, self.C_plus.se / self.sigma, self.C_plus.count)

    @property
    def C_1(self) -> McEstimate:
        k = math.sqrt(math.pi / 2.0) / self.sigma
        a, b = self.C_plus, self.C_minus
        se = k * math.hypot(a.se * b.mean, b.se * a.mean)
        return McEstimate(k * a.mean * b.mean, se, min(a.count, b.count))

    def c_star(self, beta: float) -> float:
        return c_star_beta(self.C_beta[beta].mean, beta)

    def to_json(self) -> str:
        def pair(e):
            return e.mean, e.se
        out = {}
        for name in ("C_plus", "C_minus", "C_star", "C_1"):
            out[name], out[name + "_se"] = pair(getattr(self, name))
        out["sigma"] = self.sigma
        if self.C_beta:
            out["C_beta"] = {f"{b:g}": {"mean": e.mean, "se": e.se, "c_star": c_star_beta(e.mean, b)}
                             for b, e in sorted(self.C_beta.items())}
        return json.dumps(out, indent=2, sort_keys=True) + "\n"
