import math

import numpy as np
import pytest

from brwgibbs.brw import (CapExceeded, TreeArena, Trajectory, ancestor_matrix, lineage, log_sum_exp, martingales,
                          min_position, normalize_trajectory, simulate)
from brwgibbs.config import load_thresholds
from brwgibbs.montecarlo import McEstimate, replica_rng
from brwgibbs.offspring import calibrate_bernoulli_binary, calibrate_binary_gaussian, extinction_by_generation

BIN = calibrate_binary_gaussian()
BERN = calibrate_bernoulli_binary(0.25)


def hand_tree(positions, parent, offsets):
    return TreeArena(np.asarray(positions, float), np.asarray(parent, np.int64), np.asarray(offsets, np.int64),
                     None, len(offsets) - 2)


def test_generation_zero():
    tree = simulate(BIN, 0, 5)
    assert tree.size == 1 and tree.positions[0] == 0.0 and tree.parent[0] == -1


def test_binary_population_sizes():
    tree = simulate(BIN, 10, 1)
    assert [tree.generation_size(g) for g in range(11)] == [2 ** g for g in range(11)]


def test_arena_invariants():
    tree = simulate(BERN, 8, 2)
    gen = tree.generation
    assert gen[0] == 0 and tree.positions[0] == 0.0
    assert np.all(gen[tree.parent[1:]] == gen[1:] - 1)
    assert np.all(np.diff(tree.offsets) >= 0)
    with pytest.raises(ValueError):
        tree.positions[0] = 1.0


def test_deterministic_and_independent_of_generator_route():
    a = simulate(BIN, 6, 9)
    b = simulate(BIN, 6, replica_rng(9, 0))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.parent, b.parent)
    c = simulate(BIN, 6, 10)
    assert not np.array_equal(a.positions, c.positions)


def test_cap_exceeded():
    with pytest.raises(CapExceeded):
        simulate(BIN, 10, 0, node_cap=1000)
    with pytest.raises(ValueError):
        simulate(BIN, -1, 0)


def test_extinction_frequency():
    n, reps = 10, 3000
    empty = np.array([simulate(BERN, n, replica_rng(4, r)).generation_size(n) == 0 for r in range(reps)])
    est = McEstimate.from_samples(empty)
    exact = extinction_by_generation(BERN, n)
    assert est.within(exact, 3)
    assert exact < 1 / 3


def test_lineage_examples():
    tree = hand_tree([0.0, 0.3, -1.0, 0.2], [-1, 0, 0, 1], [0, 1, 3, 4])
    assert list(lineage(tree, 0)) == [0.0]
    assert lineage(tree, 3) == pytest.approx([0.0, 0.3, 0.2])
    with pytest.raises(IndexError):
        lineage(tree, 4)


def test_lineage_matches_positions():
    tree = simulate(BERN, 6, 3)
    for node in range(0, tree.size, 7):
        assert lineage(tree, node)[-1] == tree.positions[node]
        assert len(lineage(tree, node)) == tree.generation[node] + 1
    anc = ancestor_matrix(tree, 6)
    if anc.size:
        assert np.all(anc[:, 0] == 0)


def test_normalize_trajectory():
    t = normalize_trajectory([0, 1, 2, 3, 4], 1.0, 4, [0.0, 1.0])
    assert list(t.values) == [0.0, 2.0]
    assert np.all(normalize_trajectory(np.zeros(5), 2.0, 4).values == 0)
    with pytest.raises(ValueError):
        normalize_trajectory([0, 1], 1.0, 4)
    with pytest.raises(ValueError):
        Trajectory(np.array([0.5, 0.2]), np.zeros(2))


def test_martingales_root_and_empty():
    m = martingales(simulate(BIN, 0, 0), 0, 2.0)
    assert (m.W_n_1, m.Z_n, m.W_n_beta) == (1.0, 0.0, 1.0)
    empty = hand_tree([0.0], [-1], [0, 1, 1])
    m = martingales(empty, 1, 2.0)
    assert (m.W_n_1, m.Z_n, m.W_n_beta) == (0.0, 0.0, 0.0)
    assert min_position(empty, 1) is None and min_position(empty, 0) == 0.0


def test_log_domain_matches_direct_sum():
    tree = simulate(BIN, 12, 7)
    v = tree.positions[tree.generation_slice(12)]
    direct = float(np.sum(np.exp(-2.0 * v)))
    assert martingales(tree, 12, 2.0).W_n_beta == pytest.approx(direct, rel=1e-12)
    assert log_sum_exp(np.array([1000.0, 1000.0])) == pytest.approx(1000.0 + math.log(2))


def test_martingale_means_small():
    rows = [martingales(simulate(BIN, 6, replica_rng(11, r)), 6) for r in range(2000)]
    assert McEstimate.from_samples([m.W_n_1 for m in rows]).within(1.0, 3)
    assert McEstimate.from_samples([m.Z_n for m in rows]).within(0.0, 3)


def test_min_position_bracket():
    lo, hi = load_thresholds()["min_position"]["bracket"]
    frac = load_thresholds()["min_position"]["fraction"]
    n = 20
    ratios = np.array([min_position(simulate(BIN, n, replica_rng(21, r)), n) / math.log(n) for r in range(200)])
    assert np.mean((ratios > lo) & (ratios < hi)) >= frac


def test_csv_export():
    text = simulate(BIN, 1, 0).to_csv()
    lines = text.splitlines()
    assert lines[0] == "node,parent,gen,position"
    assert lines[1] == "0,,0,0"
    assert len(lines) == 4
