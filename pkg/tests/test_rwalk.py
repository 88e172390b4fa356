import math
from fractions import Fraction

import numpy as np
import pytest

from brwgibbs.functionals import Constant, EvalAt, Max
from brwgibbs.montecarlo import McEstimate
from brwgibbs.rwalk import (GaussianStep, LatticeStep, RenewalTable, ballot_check, conditioned_walk_functional,
                            h_transform_sample, harmonicity_lattice_exact, harmonicity_mc, killed_walk,
                            ladder_epochs, lattice_conditioned_law, lattice_record_dp, meander_limit_check,
                            renewal_estimate, step_from_name, survival_exact_gaussian, survival_exact_lattice,
                            survival_scaling, total_variation)


def test_ladder_examples():
    d = ladder_epochs([0, 1, 2, 3])
    assert list(d.ascending_epochs) == [1, 2, 3] and list(d.ascending_heights) == [1, 2, 3]
    d = ladder_epochs([0, -1, -2])
    assert d.ascending_epochs.size == 0
    assert list(d.descending_epochs) == [1, 2] and list(d.descending_heights) == [1, 2]
    d = ladder_epochs([0, 1, 0.5, 2])
    assert list(d.ascending_epochs) == [1, 3] and list(d.ascending_heights) == [1, 2]
    with pytest.raises(ValueError):
        ladder_epochs([1, 2])


def test_step_from_name():
    assert isinstance(step_from_name("lattice"), LatticeStep)
    assert step_from_name("gaussian", 2.0).variance == 2.0
    with pytest.raises(ValueError):
        step_from_name("cauchy")


def test_killed_walk_lattice_first_step():
    death, final, paths = killed_walk(LatticeStep(), 5, 1000, np.random.default_rng(0), keep_paths=True)
    assert np.all(paths[:, 1] == 1) and np.all(paths >= 0)
    assert np.all((death == 1) | (death > 1))


def test_lattice_dp_exact():
    for x in range(5):
        records, unreached = lattice_record_dp(x, 40)
        assert records + unreached == x + 1
    assert lattice_record_dp(0, 10) == (Fraction(1), Fraction(0))
    # the unreached mass shrinks as the horizon grows
    masses = [lattice_record_dp(3, k)[1] for k in (10, 20, 40)]
    assert masses[0] > masses[1] > masses[2] > 0


def test_renewal_lattice():
    xg = np.array([0.0, 1.0, 2.0, 3.0, 5.0])
    table = renewal_estimate(LatticeStep(), xg, 4000, 4096, seed=1)
    assert table.v_minus[0].mean == 1.0 and table.v_minus[0].se == 0.0
    for x, e in zip(xg, table.v_minus):
        assert e.within(x + 1, 4)
    assert table.v_minus[3].mean == pytest.approx(4.0, abs=0.1)
    for x, e in zip(xg, table.v_plus):
        assert e.within(x + 1, 4)


def test_renewal_gaussian_linear():
    xg = np.array([0.0, 1.0, 5.0, 10.0, 20.0, 40.0])
    table = renewal_estimate(GaussianStep(), xg, 2000, 4096, seed=2)
    r20 = table.v_minus[4].mean / 20
    r40 = table.v_minus[5].mean / 40
    assert abs(r20 / r40 - 1) < 0.15
    # slope of the renewal function: 1 / E[ladder height] = sqrt(2) / sigma for symmetric continuous steps
    assert table.slope == pytest.approx(math.sqrt(2), rel=0.05)
    means = table.monotone_values()
    assert np.all(np.diff(means) >= 0)
    assert table.unfinished_fraction < 0.05


def test_lattice_exact_table():
    t = RenewalTable.lattice_exact([0, 1, 2])
    assert list(t.v_minus_at(np.array([0.0, 2.5, 7.0, -1.0]))) == [1.0, 3.0, 8.0, 0.0]


@pytest.mark.parametrize("x", [0, 1, 2, 3])
@pytest.mark.parametrize("N", [1, 4, 12])
def test_harmonicity_exact(x, N):
    lhs, rhs = harmonicity_lattice_exact(x, N)
    assert lhs == rhs


def test_harmonicity_gaussian_mc():
    xg = np.linspace(0, 40, 41)
    table = renewal_estimate(GaussianStep(), xg, 2000, 4096, seed=3)
    est, target = harmonicity_mc(GaussianStep(), table, 2.0, 8, 100_000, seed=4)
    assert abs(est.mean - target) <= 4 * est.se + 0.03 * target


def test_survival_exact_values():
    assert survival_exact_lattice(2) * math.sqrt(2) == pytest.approx(math.sqrt(2) / 2)
    assert survival_exact_gaussian(1) == pytest.approx(0.5)
    assert survival_exact_gaussian(2) == pytest.approx(3 / 8)


def test_survival_mc_against_exact():
    sc = survival_scaling(GaussianStep(), [1, 4, 16], 200_000, seed=5)
    for n, e in zip(sc.n_list, sc.c_plus):
        assert e.within(math.sqrt(n) * survival_exact_gaussian(n), 4)
    sc = survival_scaling(LatticeStep(), [2, 8], 200_000, seed=6)
    for n, e in zip(sc.n_list, sc.c_plus):
        assert e.within(math.sqrt(n) * survival_exact_lattice(n), 4)
    with pytest.raises(ValueError):
        survival_scaling(GaussianStep(), [4, 2], 10, 0)


def test_survival_constant_sparre_andersen():
    sc = survival_scaling(GaussianStep(), [256, 1024], 200_000, seed=7)
    for a, b in zip(sc.c_plus, sc.c_minus):
        assert abs(a.mean - b.mean) <= 3 * math.hypot(a.se, b.se)
        assert a.within(1 / math.sqrt(math.pi), 4, slack=0.01)


def test_h_transform_lattice():
    table = RenewalTable.lattice_exact(np.arange(20))
    paths = h_transform_sample(LatticeStep(), table, 0, 3, np.random.default_rng(0), size=100_000)
    assert np.all(paths[:, 1] == 1) and np.all(paths >= 0)
    exact = lattice_conditioned_law(3)
    assert sum(exact.values()) == 1
    assert total_variation(paths, exact) < 0.01
    ends = McEstimate.from_samples(paths[:, -1] == 3)
    assert ends.within(float(exact[(0, 1, 2, 3)]), 4)
    with pytest.raises(ValueError):
        h_transform_sample(LatticeStep(), table, -1, 3, np.random.default_rng(0))


def test_ballot_trivial_cases():
    est = ballot_check(GaussianStep(), [16], 1.0, 0.0, 0.5, 0.5, 0.5, 10_000, seed=1)
    assert est[0].mean == 0.0
    narrow, wide = (ballot_check(GaussianStep(), [16], 1.0, 0.0, 0.0, b, 0.1, 20_000, seed=2)[0] for b in (1.0, 3.0))
    assert wide.mean >= narrow.mean
    with pytest.raises(ValueError):
        ballot_check(GaussianStep(), [16], 1.0, 0.0, 1.0, 0.5, 0.5, 10, 0)


def test_conditioned_walk_nonneg_rejection():
    vals, tried = conditioned_walk_functional(GaussianStep(), 64, Constant(1.0), 500, seed=3)
    assert vals.size == 500 and np.all(vals == 1.0) and tried >= 500


def test_meander_limit_small():
    w, m, z = meander_limit_check(GaussianStep(), 256, Constant(1.0), 1000, seed=4)
    assert w.mean == 1.0 and m.mean == 1.0 and z == 0.0
    w, m, z = meander_limit_check(GaussianStep(), 256, Max(), 4000, seed=5)
    assert abs(z) < 4
    w, _, _ = meander_limit_check(GaussianStep(), 256, EvalAt(1.0), 4000, seed=6)
    assert w.within(math.sqrt(math.pi / 2), 4, slack=0.03)
