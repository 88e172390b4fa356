"""Verification campaigns linking simulated trees to the limit objects.

* Laplace tail of the rescaled Gibbs mass: ``(e^x/x) E[1 - exp(-e^{-beta x} W)]``
  should be flat in ``x`` and scale like ``theta^{1/beta}`` under ``F -> theta F``.
* Annealed law of the Gibbs trajectory average against the excursion mixture.
* Overlap of two Gibbs-sampled individuals against the Poisson-Dirichlet mean.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
from scipy import stats

from . import limits
from .brw import simulate
from .functionals import Constant, PathFunctional
from .gibbs import (ExtinctGeneration, gibbs_weights, leaf_functional_values, log_tilde_scale, overlap_estimate,
                    stream_leaf_values)
from .montecarlo import McEstimate, first_accepted, map_replicas, ratio_estimate, replica_rng, z_score
from .offspring import OffspringLaw

DEFAULT_MARGIN = 1.5


class WindowEmpty(ValueError):
    """No admissible tail parameter: ``n`` is too small for the chosen margin."""


def admissible_window(n: int, margin: float = DEFAULT_MARGIN) -> tuple[float, float]:
    lo, hi = margin, 1.5 * math.log(n) - margin
    if hi < lo:
        raise WindowEmpty(f"empty window [{lo:.3f}, {hi:.3f}] for n={n}, margin={margin}")
    return lo, hi


def default_x_grid(n: int, points: int = 7, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    lo, hi = admissible_window(n, margin)
    return np.linspace(lo, hi, points)


# ---------------------------------------------------------------- rescaled Gibbs masses

def _log_tilde_row(r: int, law: OffspringLaw, n: int, beta: float, functionals, seed: int) -> np.ndarray:
    v, vals = stream_leaf_values(law, n, replica_rng(seed, r), functionals)
    out = np.full(len(functionals) + 1, -math.inf)
    if v.size == 0:
        out[-1] = 0.0
        return out
    vmin = float(v.min())
    w = np.exp(-beta * (v - vmin))
    total = float(w.sum())
    base = log_tilde_scale(n, beta) - beta * vmin + math.log(total)
    for j, f in enumerate(vals):
        avg = float(np.dot(w, f)) / total
        out[j] = base + math.log(avg) if avg > 0 else -math.inf
    shifted = w if beta == 1.0 else np.exp(-(v - vmin))
    out[-1] = math.exp(-vmin) * float(np.dot(v, shifted))
    return out


def log_tilde_mu_samples(law: OffspringLaw, n: int, beta: float, functionals: Sequence[PathFunctional],
                         replicas: int, seed: int, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``log tilde_mu(F)`` per replica and functional (``-inf`` on extinction), plus ``Z_n`` per replica."""
    rows = map_replicas(partial(_log_tilde_row, law=law, n=n, beta=beta, functionals=tuple(functionals), seed=seed),
                        range(replicas), workers)
    arr = np.array(rows)
    return arr[:, :-1], arr[:, -1]


def tail_transform(log_w: np.ndarray, beta: float, x: float) -> np.ndarray:
    """``1 - exp(-e^{-beta x} W)`` computed from ``log W`` without cancellation."""
    # past e^700 the transform is 1 anyway; the cap avoids an overflow warning
    return -np.expm1(-np.exp(np.minimum(log_w - beta * x, 700.0)))


@dataclass
class TailProfile:
    x_grid: np.ndarray
    values: list[McEstimate]
    beta: float
    n: int
    functional: str
    samples: np.ndarray = field(repr=False, default=None)  # (replicas, len(x_grid)) of (e^x/x) Y

    @property
    def means(self) -> np.ndarray:
        return np.array([v.mean for v in self.values])

    def spread(self) -> float:
        m = self.means
        return float((m.max() - m.min()) / m.mean()) if m.mean() > 0 else 0.0

    def plateau(self) -> McEstimate:
        """Average of the profile over the grid, with SE from the per-replica averages."""
        return McEstimate.from_samples(self.samples.mean(axis=1))

    def to_csv(self, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        buf.write("x,profile,se,n,beta,functional\n")
        for x, v in zip(self.x_grid, self.values):
            buf.write(f"{x:.17g},{v.mean:.17g},{v.se:.17g},{self.n},{self.beta:.17g},{self.functional}\n")
        return buf.getvalue()


def profile_from_samples(log_w: np.ndarray, beta: float, n: int, x_grid, name: str) -> TailProfile:
    x_grid = np.asarray(x_grid, dtype=float)
    cols = np.stack([math.exp(x) / x * tail_transform(log_w, beta, x) for x in x_grid], axis=1)
    return TailProfile(x_grid, [McEstimate.from_samples(cols[:, j]) for j in range(x_grid.size)],
                       beta, n, name, cols)


def _check_grid(n, x_grid, margin):
    lo, hi = admissible_window(n, margin)
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any(x_grid < lo - 1e-12) or np.any(x_grid > hi + 1e-12):
        raise ValueError(f"x_grid must lie in [{lo:.4f}, {hi:.4f}]")
    return x_grid


def laplace_tail_profile(law: OffspringLaw, n: int, beta: float, F: PathFunctional, x_grid, replicas: int,
                         seed: int, margin: float = DEFAULT_MARGIN, workers: int = 1) -> TailProfile:
    x_grid = _check_grid(n, x_grid, margin)
    log_w, _ = log_tilde_mu_samples(law, n, beta, [F], replicas, seed, workers)
    return profile_from_samples(log_w[:, 0], beta, n, x_grid, F.describe())


def profile_ratio(num: TailProfile, den: TailProfile) -> tuple[list[McEstimate], McEstimate]:
    """Pointwise and plateau-averaged ratios of two profiles built from the same replicas."""
    point = [ratio_estimate(num.samples[:, j], den.samples[:, j]) for j in range(num.x_grid.size)]
    return point, ratio_estimate(num.samples.mean(axis=1), den.samples.mean(axis=1))


def finite_x_theta_factor(theta: float, beta: float, x) -> np.ndarray:
    """Profile ratio predicted at finite ``x`` when the tail is exactly ``C u e^{-u}``-shaped.

    If ``P(W > e^{beta x})`` behaves like ``c x e^{-x}``, scaling ``W`` by ``theta``
    shifts ``x`` by ``log(theta)/beta``, multiplying the profile by
    ``theta^{1/beta} (x - log(theta)/beta) / x``.
    """
    x = np.asarray(x, dtype=float)
    return theta ** (1.0 / beta) * (x - math.log(theta) / beta) / x


@dataclass
class PlateauComparison:
    x_grid: np.ndarray
    ratio_points: list[McEstimate]
    ratio: McEstimate
    target: McEstimate
    z: float

    def as_dict(self) -> dict:
        return {"x_grid": self.x_grid.tolist(), "ratio_points": [r.as_dict() for r in self.ratio_points],
                "ratio": self.ratio.as_dict(), "target": self.target.as_dict(), "z": self.z}


def theta_scaling_check(law: OffspringLaw, n: int, beta: float, theta: float, x_grid, replicas: int,
                        seed: int, workers: int = 1, log_w_one: np.ndarray | None = None) -> PlateauComparison:
    """Profile for ``Constant(theta)`` over profile for ``Constant(1)`` against ``theta^{1/beta}``.

    ``log_w_one`` may pass precomputed ``log tilde_mu(1)`` values; since
    ``tilde_mu(theta) = theta tilde_mu(1)`` both profiles come from the same trees.
    """
    x_grid = _check_grid(n, x_grid, DEFAULT_MARGIN)
    if log_w_one is None:
        log_w_one = log_tilde_mu_samples(law, n, beta, [Constant(1.0)], replicas, seed, workers)[0][:, 0]
    one = profile_from_samples(log_w_one, beta, n, x_grid, "const:1")
    th = profile_from_samples(log_w_one + math.log(theta), beta, n, x_grid, f"const:{theta:g}")
    points, ratio = profile_ratio(th, one)
    target = McEstimate(theta ** (1.0 / beta), 0.0, 1)
    return PlateauComparison(x_grid, points, ratio, target, z_score(ratio, target))


def excursion_power_mean(F: PathFunctional, beta: float, replicas: int, m: int,
                         rng: np.random.Generator) -> McEstimate:
    """``E[F(e)^{1/beta}]`` over normalized excursions sampled on ``m`` steps."""
    return McEstimate.from_samples(limits.excursion_functional_samples(F, replicas, m, rng) ** (1.0 / beta))


def functional_plateau_check(law: OffspringLaw, n: int, beta: float, F: PathFunctional, x_grid, replicas: int,
                             seed: int, limit_replicas: int = 100_000, workers: int = 1,
                             log_w: np.ndarray | None = None) -> PlateauComparison:
    """Plateau of ``F`` over plateau of ``Constant(1)`` against ``E[F(e)^{1/beta}]`` (excursions on ``n`` steps).

    ``log_w`` may pass precomputed ``log tilde_mu`` columns for ``(F, Constant(1))``.
    """
    x_grid = _check_grid(n, x_grid, DEFAULT_MARGIN)
    if log_w is None:
        log_w, _ = log_tilde_mu_samples(law, n, beta, [F, Constant(1.0)], replicas, seed, workers)
    pf = profile_from_samples(log_w[:, 0], beta, n, x_grid, F.describe())
    p1 = profile_from_samples(log_w[:, 1], beta, n, x_grid, "const:1")
    points, ratio = profile_ratio(pf, p1)
    target = excursion_power_mean(F, beta, limit_replicas, n, replica_rng(seed, 1 << 30))
    return PlateauComparison(x_grid, points, ratio, target, z_score(ratio, target))


@dataclass
class CBetaEstimate:
    estimate: McEstimate
    spread: float
    reliable: bool
    profile: TailProfile


def estimate_C_beta(law: OffspringLaw, n: int, beta: float, x_grid, replicas: int, seed: int,
                    max_spread: float = 0.25, workers: int = 1) -> CBetaEstimate:
    """Plateau level of the ``Constant(1)`` profile; flagged unreliable when its relative spread exceeds ``max_spread``."""
    prof = laplace_tail_profile(law, n, beta, Constant(1.0), x_grid, replicas, seed, workers=workers)
    spread = prof.spread()
    return CBetaEstimate(prof.plateau(), spread, spread <= max_spread, prof)


# ---------------------------------------------------------------- annealed trajectory law

def _mu_row(r: int, law: OffspringLaw, n: int, beta: float, functionals, seed: int):
    tree = simulate(law, n, replica_rng(seed, n, r))
    try:
        w = gibbs_weights(tree, n, beta)
    except ExtinctGeneration:
        return None
    p = w.probs
    return [float(np.dot(p, leaf_functional_values(tree, n, F))) for F in functionals]


def mu_samples(law: OffspringLaw, n: int, beta: float, functionals: Sequence[PathFunctional], replicas: int,
               seed: int, workers: int = 1) -> np.ndarray:
    """Gibbs averages ``mu_{n,beta}(F)`` over the first ``replicas`` surviving trees, shape ``(replicas, len(F))``.

    Tree ``r`` at depth ``n`` uses stream ``(seed, n, r)``.
    """
    rows, _ = first_accepted(partial(_mu_row, law=law, n=n, beta=beta, functionals=tuple(functionals), seed=seed),
                             replicas, workers)
    return np.array(rows)


def limit_mixture_samples(beta: float, F: PathFunctional, count: int, m: int, rng: np.random.Generator,
                          max_marks: int = 64) -> np.ndarray:
    return np.array([limits.limit_mixture_sample(beta, F, m, rng, max_marks) for _ in range(count)])


def ks_with_bootstrap(a: np.ndarray, b: np.ndarray, resamples: int, rng: np.random.Generator,
                      level: float = 0.95) -> tuple[float, float, float]:
    """Two-sample KS distance and a percentile bootstrap interval."""
    d = float(stats.ks_2samp(a, b).statistic)
    boot = np.empty(resamples)
    for i in range(resamples):
        boot[i] = stats.ks_2samp(rng.choice(a, a.size), rng.choice(b, b.size)).statistic
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return d, float(lo), float(hi)


@dataclass
class AnnealedRow:
    n: int
    functional: str
    ks: float
    ks_lo: float
    ks_hi: float
    brw_mean: McEstimate
    limit_mean: McEstimate
    excursion_mean: McEstimate
    z_first_moment: float


@dataclass
class AnnealedReport:
    beta: float
    rows: list[AnnealedRow]

    def trend(self, functional: str) -> tuple[float, bool]:
        """Spearman correlation of KS distance with ``n``, and whether KS strictly decreases end to end."""
        rows = [r for r in self.rows if r.functional == functional]
        ns = [r.n for r in rows]
        ks = [r.ks for r in rows]
        if len(rows) < 2 or np.ptp(ks) == 0:
            return 0.0, False
        rho = float(stats.spearmanr(ns, ks).statistic)
        return rho, ks[-1] < ks[0]

    def to_csv(self, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        buf.write("n,functional,ks,ks_lo,ks_hi,brw_mean,brw_se,limit_mean,limit_se,excursion_mean,excursion_se,z_first_moment\n")
        for r in self.rows:
            buf.write(",".join([str(r.n), r.functional] + [f"{v:.17g}" for v in (
                r.ks, r.ks_lo, r.ks_hi, r.brw_mean.mean, r.brw_mean.se, r.limit_mean.mean, r.limit_mean.se,
                r.excursion_mean.mean, r.excursion_mean.se, r.z_first_moment)]) + "\n")
        return buf.getvalue()


def annealed_functional_compare(law: OffspringLaw, n_list: Sequence[int], beta: float,
                                F_list: Sequence[PathFunctional], replicas: int, seed: int, m: int = 512,
                                bootstrap: int = 500, excursion_replicas: int = 20_000,
                                workers: int = 1) -> AnnealedReport:
    """KS distance between ``mu_{n,beta}(F)`` under survival and ``sum_k p_k F(e_k)``, per ``n`` and ``F``.

    The first moment of ``mu_{n,beta}(F)`` is compared with ``E[F(e)]``, which
    is the mean of the mixture because the weights sum to one and the marks
    are i.i.d. and independent of them.
    """
    rows = []
    lim = {}
    exc = {}
    for j, F in enumerate(F_list):
        lim[j] = limit_mixture_samples(beta, F, replicas, m, replica_rng(seed, 1 << 20, j))
        exc[j] = McEstimate.from_samples(
            limits.excursion_functional_samples(F, excursion_replicas, m, replica_rng(seed, 1 << 21, j)))
    for i, n in enumerate(n_list):
        brw = mu_samples(law, n, beta, F_list, replicas, seed, workers)
        for j, F in enumerate(F_list):
            d, lo, hi = ks_with_bootstrap(brw[:, j], lim[j], bootstrap, replica_rng(seed, 1 << 22, i, j))
            bm = McEstimate.from_samples(brw[:, j])
            rows.append(AnnealedRow(n, F.describe(), d, lo, hi, bm, McEstimate.from_samples(lim[j]), exc[j],
                                    z_score(bm, exc[j])))
    return AnnealedReport(beta, rows)


# ---------------------------------------------------------------- overlaps

def overlap_step_report(law: OffspringLaw, n: int, beta: float, t_grid, replicas: int, seed: int,
                        limit_replicas: int = 10_000, pairs_per_replica: int | None = None, workers: int = 1):
    """Split-probability curve with the limit value ``E[1 - sum_k p_k^2]`` attached."""
    rep = overlap_estimate(law, n, beta, t_grid, replicas, pairs_per_replica, seed, workers)
    pd = limits.pd_overlap_moment(beta, limit_replicas, replica_rng(seed, 1 << 23))
    rep.limit = McEstimate(1.0 - pd.mean, pd.se, pd.count)
    return rep


# ---------------------------------------------------------------- Laplace functional diagnostic

@dataclass
class LaplaceDiagnostic:
    brw: McEstimate
    predicted: McEstimate
    z: float

    def as_dict(self) -> dict:
        return {"brw": self.brw.as_dict(), "predicted": self.predicted.as_dict(), "z": self.z}


def laplace_functional_diagnostic(law: OffspringLaw, n: int, beta: float, F: PathFunctional, c_beta: float,
                                  replicas: int, seed: int, workers: int = 1,
                                  limit_replicas: int = 100_000) -> LaplaceDiagnostic:
    """``E[exp(-tilde_mu(F)) | survival]`` against ``E[exp(-C_beta Z_n E[F(e)^{1/beta}]) | Z_n > 0]``.

    ``Z_n`` stands in for its almost-sure limit, so the comparison carries an
    uncontrolled bias and is reported, never gated.
    """
    log_w, z = log_tilde_mu_samples(law, n, beta, [F], replicas, seed, workers)
    alive = np.isfinite(log_w[:, 0]) | (z != 0)
    lhs = np.exp(-np.exp(log_w[alive, 0]))
    power = excursion_power_mean(F, beta, limit_replicas, n, replica_rng(seed, 1 << 24)).mean
    zpos = z[z > 0]
    rhs = np.exp(-c_beta * zpos * power)
    a, b = McEstimate.from_samples(lhs), McEstimate.from_samples(rhs)
    return LaplaceDiagnostic(a, b, z_score(a, b))


def to_json(obj) -> str:
    def default(o):
        if isinstance(o, McEstimate):
            return o.as_dict()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if hasattr(o, "as_dict"):
            return o.as_dict()
        raise TypeError(type(o))
    return json.dumps(obj, default=default, indent=2, sort_keys=True) + "\n"
