"""Temporal graph machinery checks.

Covers:
    - dag_penalty against an independent Taylor-series oracle, incl. the
      2-cycle closed form e + 1/e - 2
    - is_dag <=> dag_penalty == 0 on random binary matrices
    - topological_order edge-precedence on sampled DAGs, cycle error otherwise
    - binary and probability summary aggregation, diagonal handling
    - graph CSV round-trip and duplicate rejection
"""

import itertools
import math

import numpy as np
import pytest

from tsdag.errors import CycleError, ParseError
from tsdag.graph import (
    SummaryGraph,
    TemporalGraph,
    aggregate_summary_binary,
    aggregate_summary_prob,
    dag_penalty,
    is_dag,
    read_graph_csv,
    topological_order,
    write_graph_csv,
)


def series_trace_exp(m, terms=60):
    """Oracle: trace(exp(M)) - D by plain truncated Taylor series."""
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[0]
    total = np.eye(d)
    term = np.eye(d)
    for k in range(1, terms + 1):
        term = term @ m / k
        total = total + term
    return float(np.trace(total)) - d


def random_dag(rng, d, p=0.4):
    upper = (rng.random((d, d)) < p) & np.triu(np.ones((d, d), dtype=bool), k=1)
    perm = rng.permutation(d)
    return upper[np.ix_(perm, perm)].astype(float)


def test_dag_penalty_trivial_cases():
    assert dag_penalty([[0, 1], [0, 0]]) == 0.0
    assert dag_penalty([[0, 0], [0, 0]]) == 0.0


def test_dag_penalty_two_cycle_closed_form():
    expected = math.e + math.exp(-1.0) - 2.0  # eigenvalues +-1 of the 2-cycle
    assert dag_penalty([[0, 1], [1, 0]]) == pytest.approx(expected, rel=1e-12)
    assert dag_penalty([[0, 1], [1, 0]]) == pytest.approx(1.08616, abs=1e-5)


def test_dag_penalty_matches_series_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        d = int(rng.integers(2, 9))
        m = (rng.random((d, d)) < 0.35).astype(float)
        np.fill_diagonal(m, 0.0)
        ours = dag_penalty(m)
        oracle = series_trace_exp(m * m)
        assert ours == pytest.approx(oracle, rel=1e-10, abs=1e-12)


def test_dag_penalty_rejects_bad_input():
    with pytest.raises(ValueError):
        dag_penalty(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        dag_penalty(np.array([[0.0, np.inf], [0.0, 0.0]]))


def test_is_dag_basic_and_triangular():
    assert is_dag([[0, 1], [0, 0]])
    assert not is_dag([[0, 1], [1, 0]])
    rng = np.random.default_rng(3)
    tri = np.triu((rng.random((6, 6)) < 0.5).astype(float), k=1)
    assert is_dag(tri)


def test_is_dag_iff_zero_penalty():
    rng = np.random.default_rng(11)
    for _ in range(300):
        d = int(rng.integers(2, 7))
        m = (rng.random((d, d)) < 0.4).astype(float)
        np.fill_diagonal(m, 0.0)
        assert is_dag(m) == (dag_penalty(m) < 1e-9)


def test_topological_order_examples():
    assert topological_order(np.zeros((4, 4))) == [0, 1, 2, 3]
    chain = np.zeros((3, 3))
    chain[0, 1] = chain[1, 2] = 1
    assert topological_order(chain) == [0, 1, 2]
    diamond = np.zeros((4, 4))
    diamond[0, 1] = diamond[0, 2] = diamond[1, 3] = diamond[2, 3] = 1
    order = topological_order(diamond)
    assert order[0] == 0 and order[-1] == 3


def test_topological_order_edge_precedence_property():
    rng = np.random.default_rng(5)
    for _ in range(50):
        d = int(rng.integers(2, 8))
        m = random_dag(rng, d)
        order = topological_order(m)
        pos = {node: k for k, node in enumerate(order)}
        for i, j in zip(*np.nonzero(m)):
            assert pos[i] < pos[j]


def test_topological_order_cycle_error_names_nodes():
    m = np.zeros((3, 3))
    m[1, 2] = m[2, 1] = 1
    with pytest.raises(CycleError) as exc:
        topological_order(m)
    assert set(exc.value.nodes) == {1, 2}


def _graph(d, k, edges):
    adj = np.zeros((k + 1, d, d))
    for tau, i, j in edges:
        adj[tau, i, j] = 1
    return TemporalGraph(d, k, adj)


def test_temporal_graph_invariants():
    with pytest.raises(ValueError):
        _graph(2, 1, [(0, 0, 0)])  # instantaneous self-loop
    with pytest.raises(ValueError):
        TemporalGraph(2, 0, np.full((1, 2, 2), 0.5))  # non-binary
    with pytest.raises(CycleError):
        _graph(2, 0, [(0, 0, 1), (0, 1, 0)]).finalize()
    g = _graph(2, 1, [(1, 0, 0)])  # lagged self-edge is fine
    assert g.finalize().finalized


def test_aggregate_summary_binary():
    g = _graph(3, 2, [(1, 0, 1)])
    s = aggregate_summary_binary(g, ignore_self=False)
    expect = np.zeros((3, 3))
    expect[0, 1] = 1
    assert np.array_equal(s.adjacency, expect)

    g = _graph(3, 2, [(0, 0, 1), (2, 0, 1)])
    s = aggregate_summary_binary(g, ignore_self=False)
    assert s.adjacency[0, 1] == 1 and s.adjacency.sum() == 1

    g = _graph(3, 2, [(1, 2, 2)])
    assert aggregate_summary_binary(g, ignore_self=True).adjacency.sum() == 0
    assert aggregate_summary_binary(g, ignore_self=False).adjacency[2, 2] == 1


def test_aggregate_summary_prob():
    p = np.zeros((2, 2, 2))
    p[0, 0, 1], p[1, 0, 1] = 0.2, 0.9
    assert aggregate_summary_prob(p, ignore_self=False).adjacency[0, 1] == pytest.approx(0.9)
    assert aggregate_summary_prob(np.zeros((2, 2, 2)), ignore_self=False).adjacency.sum() == 0
    p = np.zeros((1, 2, 2))
    p[0, 1, 1] = 0.7
    assert aggregate_summary_prob(p, ignore_self=False).adjacency[1, 1] == pytest.approx(0.7)
    assert aggregate_summary_prob(p, ignore_self=True).adjacency[1, 1] == 0.0
    with pytest.raises(ValueError):
        aggregate_summary_prob(np.full((1, 2, 2), 1.5), ignore_self=False)


def test_binary_and_prob_aggregation_agree_on_support():
    rng = np.random.default_rng(9)
    for _ in range(20):
        d, k = 4, 2
        adj = np.zeros((k + 1, d, d))
        mask = rng.random((k + 1, d, d)) < 0.2
        mask[0][np.eye(d, dtype=bool)] = False
        adj[mask] = 1
        if not is_dag(adj[0]):
            continue
        g = TemporalGraph(d, k, adj)
        binary = aggregate_summary_binary(g, ignore_self=False).adjacency
        prob = aggregate_summary_prob(adj, ignore_self=False).adjacency
        assert np.array_equal(binary > 0, prob > 0)


def test_graph_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    adj = np.where(rng.random((3, 4, 4)) < 0.3, rng.random((3, 4, 4)), 0.0)
    path = tmp_path / "g.csv"
    write_graph_csv(path, adj)
    back = read_graph_csv(path, num_nodes=4, max_lag=2)
    assert np.array_equal(back, adj)


def test_graph_csv_rejects_duplicates_and_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("tau,src,dst,value\n0,0,1,1\n0,0,1,1\n")
    with pytest.raises(ParseError):
        read_graph_csv(path)
    path.write_text("a,b\n")
    with pytest.raises(ParseError):
        read_graph_csv(path)


def test_summary_graph_probability_bounds():
    with pytest.raises(ValueError):
        SummaryGraph(2, np.array([[0.0, 1.2], [0.0, 0.0]]))
