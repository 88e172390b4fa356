import math

import numpy as np
import pytest
from scipy import stats

from brwgibbs.functionals import TimeAverage, Constant, EvalAt, Max
from brwgibbs.limits import (RAYLEIGH, ConstantsTable, brownian_bridge, c_star_beta, excursion_marginal,
                             excursion_midpoint_mean, gamma_identity_check, imhof_check, laplace_shift_integral,
                             limit_mixture_sample, pd_overlap_moment, sample_bessel3_bridge, sample_excursion,
                             sample_meander, sample_poisson_dirichlet, uniform_grid, von_mises_fisher_cos,
                             weights_from_arrivals)
from brwgibbs.montecarlo import McEstimate


def rng(seed):
    return np.random.default_rng(seed)


def test_uniform_grid():
    g = uniform_grid(4, 2.0, [0.3])
    assert g[0] == 0.0 and g[-1] == 2.0 and 0.3 in g and g.size == 6
    with pytest.raises(ValueError):
        uniform_grid(1)


def test_excursion_endpoints_and_positivity():
    p = sample_excursion(64, rng(0), size=500)
    assert p.values.shape == (500, 65)
    assert np.all(p.values[:, [0, -1]] == 0) and np.all(p.values[:, 1:-1] > 0)
    single = sample_excursion(16, rng(0))
    assert single.values.shape == (17,)


def test_bridge_endpoints():
    p = sample_bessel3_bridge(1.0, 2.5, 2.0, 32, rng(1), size=200)
    assert np.all(p.values[:, 0] == 1.0) and np.all(p.values[:, -1] == 2.5) and np.all(p.values >= 0)
    with pytest.raises(ValueError):
        sample_bessel3_bridge(-1.0, 0.0, 1.0, 8, rng(0))


def test_midpoint_mean_matches_maxwell():
    assert excursion_midpoint_mean() == pytest.approx(math.sqrt(2 / math.pi), rel=1e-9)
    vals = sample_excursion(8, rng(2), size=40_000).values[:, 4]
    assert McEstimate.from_samples(vals).within(math.sqrt(2 / math.pi), 4)
    assert stats.kstest(vals, excursion_marginal(0.5).cdf).statistic < 0.01


def test_meander_endpoint_rayleigh():
    p = sample_meander(8, rng(3), size=40_000)
    ends = p.values[:, -1]
    assert stats.kstest(ends, RAYLEIGH.cdf).statistic < 0.01
    assert McEstimate.from_samples(ends).within(math.sqrt(math.pi / 2), 4)
    longer = sample_meander(8, rng(3), size=20_000, length=4.0)
    assert McEstimate.from_samples(longer.values[:, -1]).within(2 * math.sqrt(math.pi / 2), 4)


def test_bridge_covariance():
    g = np.array([0.0, 0.25, 0.6, 1.0])
    b = brownian_bridge(g, (100_000,), rng(4))
    c = np.cov(b[:, 1], b[:, 2])
    assert c[0, 1] == pytest.approx(0.25 - 0.25 * 0.6, abs=0.005)
    assert c[0, 0] == pytest.approx(0.25 * 0.75, abs=0.005)


def test_vmf_cosine_mean():
    # E[cos] = coth(k) - 1/k for the 3D von Mises-Fisher law
    for k in (0.0, 0.5, 5.0):
        w = von_mises_fisher_cos(np.full(100_000, k), rng(5))
        target = 0.0 if k == 0 else 1 / math.tanh(k) - 1 / k
        assert McEstimate.from_samples(w).within(target, 4)


def _vervaat_paths(m, fine, count, gen):
    # rotate a finely sampled Brownian bridge at its argmin, then read it on the coarse grid
    big = m * fine
    out = []
    for i in range(0, count, 1000):
        br = brownian_bridge(uniform_grid(big), (min(1000, count - i),), gen)[:, :-1]
        k = np.argmin(br, axis=1)
        idx = (k[:, None] + fine * np.arange(m + 1)[None, :]) % big
        rot = np.take_along_axis(br, idx, axis=1) - br[np.arange(br.shape[0]), k][:, None]
        # a discretely sampled minimum overshoots the true one by about 0.5826 sqrt(dt)
        rot[:, 1:-1] += 0.5826 * math.sqrt(1.0 / big)
        rot[:, -1] = 0.0
        out.append(rot)
    return np.concatenate(out)


def test_excursion_matches_vervaat_transform():
    m, n = 32, 10_000
    g = uniform_grid(m)
    rot = _vervaat_paths(m, 128, n, rng(6))
    ex = sample_excursion(m, rng(7), size=n).values
    for f in (Max(), EvalAt(0.3), TimeAverage()):
        assert stats.ks_2samp(f(g, ex), f(g, rot)).pvalue > 1e-3


def test_imhof_examples():
    a, b, z = imhof_check(Constant(1.0), 1.0, 20_000, rng(8), m=64)
    assert a.mean == 1.0 and abs(z) < 4
    a, b, z = imhof_check(Max(), 0.5, 20_000, rng(9), m=64)
    assert abs(z) < 4
    with pytest.raises(ValueError):
        imhof_check(Max(), 0.0, 10, rng(0))


def test_gamma_identity_examples():
    a, b, z = gamma_identity_check(Constant(1.0), Constant(1.0), 0.5, 20_000, rng(10), m=64)
    assert a.mean == 1.0 and b.within(1.0, 4)
    _, _, z = gamma_identity_check(Max(), TimeAverage(), 0.4, 20_000, rng(11), m=64)
    assert abs(z) < 4
    with pytest.raises(ValueError):
        gamma_identity_check(Max(), Max(), 1.0, 10, rng(0))


def test_pd_frozen_example():
    pd = weights_from_arrivals([1.0, 2.0, 3.0], 2.0, compensate_tail=False)
    assert pd.weights[0] == pytest.approx(36 / 49)
    assert pd.weights.sum() == pytest.approx(1.0)


def test_pd_sample_invariants():
    for beta in (1.25, 2.0, 64.0):
        pd = sample_poisson_dirichlet(beta, 1e-4, rng(12))
        assert pd.converged or beta < 2
        assert np.all(np.diff(pd.weights) < 0)
        total = pd.weights.sum()
        assert total <= 1.0 + 1e-12
        if pd.converged:
            assert total >= 1 - 1e-4 - 1e-12
        else:
            assert pd.weights.size == 2 ** 14
        assert total + pd.tail_bound == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sample_poisson_dirichlet(1.0)


def test_pd_first_weight_increases_with_beta():
    means = [np.mean([sample_poisson_dirichlet(b, 1e-4, r).weights[0] for _ in range(2000)])
             for b, r in ((1.5, rng(13)), (2.0, rng(14)), (4.0, rng(15)))]
    assert means[0] < means[1] < means[2]


def test_pd_overlap_moment():
    # E[sum p^2] = 1 - 1/beta for the one-parameter law
    est = pd_overlap_moment(2.0, 5000, rng(16))
    assert est.within(0.5, 4)


def test_limit_mixture_constant():
    for c in (0.0, 2.5):
        assert limit_mixture_sample(2.0, Constant(c), 16, rng(17)) == pytest.approx(c)
    v = [limit_mixture_sample(2.0, Max(), 16, rng(18)) for _ in range(20)]
    assert all(x > 0 for x in v)


def test_laplace_constants():
    assert laplace_shift_integral(2.0) == pytest.approx(math.sqrt(math.pi))
    assert c_star_beta(math.sqrt(math.pi), 2.0) == pytest.approx(0.0, abs=1e-12)
    table = ConstantsTable(McEstimate(0.5, 0.01, 100), McEstimate(0.5, 0.01, 100), 2.0)
    assert table.C_star.mean == 0.25
    assert table.C_1.mean == pytest.approx(math.sqrt(math.pi / 2) * 0.125)
    assert "C_plus" in table.to_json()
