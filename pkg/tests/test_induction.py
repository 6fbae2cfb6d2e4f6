import numpy as np
import pytest
from hypothesis import given, strategies as st

from pshadow.errors import ConfigError, DataError
from pshadow.induction import (Adjacency, InductionConfig, cosine, frozen_adjacency, induce_knn,
                               union_edges)

from conftest import make_graph, sv
from oracles import knn_bruteforce, random_sparse_instance


def lists(adj, nodes):
    return {i: adj.neighbors(i).tolist() for i in nodes}


def test_knn_example_with_tie_break():
    agg = {0: sv({0: 1}), 1: sv({0: 1}), 2: sv({1: 1})}
    assert lists(induce_knn(agg, 1), range(3)) == {0: [1], 1: [0], 2: [0]}


def test_knn_identical_vectors():
    agg = {i: sv({0: 2, 3: 1}) for i in range(3)}
    assert lists(induce_knn(agg, 2), range(3)) == {0: [1, 2], 1: [0, 2], 2: [0, 1]}


def test_knn_empty_vector_takes_lowest_ids():
    agg = {0: sv({0: 1}), 1: sv({1: 1}), 2: sv({0: 1, 1: 1}), 3: sv({})}
    assert induce_knn(agg, 2).neighbors(3).tolist() == [0, 1]


def test_knn_absent_nodes_are_not_candidates():
    agg = {0: sv({0: 1}), 2: sv({0: 1})}
    adj = induce_knn(agg, 3, n_nodes=4)
    assert lists(adj, range(4)) == {0: [2], 1: [], 2: [0], 3: []}


def test_knn_errors():
    with pytest.raises(ConfigError):
        induce_knn({0: sv({0: 1})}, 0)
    with pytest.raises(DataError):
        induce_knn({}, 1)


@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 8))
def test_knn_matches_bruteforce(seed, n, k):
    agg = random_sparse_instance(np.random.default_rng(seed), n, 12, density=0.3)
    assert lists(induce_knn(agg, k), agg) == knn_bruteforce(agg, k)


def test_knn_threads_and_blocks_agree():
    agg = random_sparse_instance(np.random.default_rng(5), 150, 20)
    ref = induce_knn(agg, 7)
    assert induce_knn(agg, 7, threads=4, block_size=16) == ref


vec = st.dictionaries(st.integers(0, 9), st.floats(0.01, 100), max_size=6)


@given(vec, vec, st.floats(0.1, 10))
def test_cosine_properties(a, b, scale):
    x, y = sv(a), sv(b)
    c = cosine(x, y)
    assert -1e-12 <= c <= 1 + 1e-12
    assert c == pytest.approx(cosine(y, x), abs=1e-15)
    assert cosine(x, sv({k: v * scale for k, v in a.items()})) == pytest.approx(1.0 if a else 0.0)


def test_union_edges_examples():
    tg = make_graph([{0: {0: 1}}, {0: {0: 1}}], n_nodes=3,
                    edges=[{0: [1]}, {0: [2, 1]}])
    assert union_edges(tg, 0, 1).to_lists() == [[1], [], []]
    assert union_edges(tg, 0, 2).to_lists() == [[1, 2], [], []]


def test_frozen_adjacency_uses_trailing_window():
    tg = make_graph([{0: {0: 1}, 1: {0: 1}, 2: {1: 1}},
                     {0: {1: 1}, 1: {0: 1}, 2: {1: 1}}])
    adj = frozen_adjacency(tg, InductionConfig("knn", k=1, w=1), t_end=1)
    assert adj.to_lists() == [[2], [0], [0]]
    adj2 = frozen_adjacency(tg, InductionConfig("knn", k=1, w=2), t_end=1)
    # aggregated: 0={0:1,1:1}, 1={0:2}, 2={1:2}; node 0 ties 1 and 2 -> lowest id
    assert adj2.to_lists() == [[1], [0], [0]]


def test_induction_config_validation():
    for bad in ({"mode": "mst"}, {"k": 0}, {"w": 0}):
        with pytest.raises(ConfigError):
            InductionConfig(**bad)


def test_adjacency_from_lists_roundtrip():
    adj = Adjacency.from_lists([[2], [], [0, 1]])
    assert adj.to_lists() == [[2], [], [0, 1]] and adj.degree(2) == 2
    assert Adjacency.from_lists([[], []]).to_lists() == [[], []]
