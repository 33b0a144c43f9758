import numpy as np
import pytest

from posflow import MetricGraph, build_matrices, check_assumptions


def test_single_loop():
    g = MetricGraph(1, [0], [0], [1.0], [1.0])
    mats = build_matrices(g)
    assert mats.out.tolist() == [[1.0]]
    assert mats.inc.tolist() == [[1.0]]
    assert mats.adjacency.tolist() == [[1.0]]
    report = check_assumptions(g)
    assert report.all_ok and report.column_stochastic


def test_two_vertex_edge():
    # one edge from vertex 1 to vertex 2 with full weight
    g = MetricGraph(2, [0, 1], [1, 0], [1.0, 1.0], [1.0, 1.0])
    mats = build_matrices(g)
    # adjacency entry (i, l) is the weight of an edge from l to i
    assert mats.adjacency[1, 0] == 1.0
    assert mats.adjacency[0, 1] == 1.0
    assert mats.adjacency[0, 0] == 0.0

    g_single = MetricGraph(2, [0, 1], [1, 1], [1.0, 2.0], [1.0, 1.0])
    sub = build_matrices(g_single).adjacency
    assert sub[1, 0] == 1.0 and sub[0, 0] == 0.0 and sub[0, 1] == 0.0


def test_zero_weights_give_zero_adjacency():
    g = MetricGraph(2, [0, 1], [1, 0], [1.0, 1.0], [0.0, 0.0])
    assert np.all(build_matrices(g).adjacency == 0.0)


def test_signed_incidence():
    g = MetricGraph(2, [0, 1], [1, 0], [1.0, 1.0], [1.0, 1.0])
    mats = build_matrices(g)
    assert np.array_equal(mats.signed, mats.out - mats.inc)


def test_a2_failure_lists_vertex():
    # vertex 1 (index 0) has no outgoing edge
    g = MetricGraph(2, [1, 1], [0, 1], [1.0, 1.0], [0.5, 0.5])
    report = check_assumptions(g)
    assert not report.a2_ok and report.a2_failures == (0,)


def test_a3_residual_reported():
    g = MetricGraph(1, [0, 0], [0, 0], [1.0, 2.0], [0.5, 0.4])
    report = check_assumptions(g)
    assert not report.a3_ok
    assert abs(report.a3_residuals[0] + 0.1) < 1e-12


def test_column_stochastic_on_random_graphs(rng):
    for _ in range(20):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(n, 7))
        tails = np.concatenate([np.arange(n), rng.integers(0, n, m - n)])
        heads = rng.integers(0, n, m)
        weights = np.zeros(m)
        for v in range(n):
            out = np.flatnonzero(tails == v)
            raw = rng.uniform(0.1, 1.0, out.size)
            weights[out] = raw / raw.sum()
        g = MetricGraph(n, tails, heads, rng.uniform(0.5, 2.0, m), weights)
        report = check_assumptions(g)
        assert report.a3_ok and report.column_stochastic
        cols = build_matrices(g).adjacency.sum(axis=0)
        assert np.max(np.abs(cols - 1.0)) < 1e-12


def test_insertion_order_invariance(rng):
    n, m = 3, 5
    tails = np.array([0, 1, 2, 0, 1])
    heads = np.array([1, 2, 0, 2, 0])
    lengths = rng.uniform(0.5, 2.0, m)
    weights = np.array([0.6, 0.3, 1.0, 0.4, 0.7])
    g = MetricGraph(n, tails, heads, lengths, weights)
    perm = rng.permutation(m)
    g_perm = MetricGraph(n, tails[perm], heads[perm], lengths[perm], weights[perm])
    a = build_matrices(g).adjacency
    b = build_matrices(g_perm).adjacency
    assert np.allclose(a, b, atol=0)


def test_validation_errors():
    with pytest.raises(ValueError):
        MetricGraph(2, [0], [1], [1.0], [1.0])  # fewer edges than vertices
    with pytest.raises(ValueError):
        MetricGraph(1, [0], [0], [-1.0], [1.0])  # negative length
    with pytest.raises(ValueError):
        MetricGraph(1, [0], [0], [1.0], [1.5])  # weight above one
    with pytest.raises(ValueError):
        MetricGraph(1, [0], [2], [1.0], [1.0])  # head out of range
    with pytest.raises(ValueError):
        MetricGraph(1, [0], [0], [1.0], [1.0], control=np.ones((1, 2)))  # too many controls
    with pytest.raises(ValueError):
        MetricGraph(1, [0], [0], [1.0], [1.0], control=-np.ones((1, 1)))  # signed control
