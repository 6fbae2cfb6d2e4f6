import numpy as np
import pytest
from hypothesis import given, strategies as st

from pshadow.errors import ConfigError, DataError
from pshadow.induction import Adjacency, InductionConfig
from pshadow.intervals import IntervalEngine
from pshadow.model import (AttributePool, ModelConfig, attr_baseline, bootstrap_score, jaccard,
                           pop_baseline, predict_score, rand_baseline, ranked_jaccard,
                           sample_population, shifted_mean)
from pshadow.rng import stream
from pshadow.synth import SynthConfig, generate_graph
from pshadow.temporal_graph import Dictionary, LabelMap, SparseVector

from conftest import sv

LABELS = Dictionary(["L1", "L2", "L3", "L4"])


def lm4():
    # attribute a -> label a, for a in 0..3
    return LabelMap(LABELS, [[0], [1], [2], [3]], 0)


def test_jaccard_examples():
    assert jaccard({1, 2, 3}, {2, 3, 4}) == 0.5
    assert jaccard({7, 8}, {7, 8}) == 1.0
    assert jaccard({1}, {2}) == 0.0
    with pytest.raises(DataError):
        jaccard(set(), set())


@given(st.sets(st.integers(0, 20), min_size=1), st.sets(st.integers(0, 20)))
def test_jaccard_properties(a, b):
    j = jaccard(a, b)
    assert 0 <= j <= 1 and j == jaccard(b, a)
    assert (j == 1) == (a == b)


def test_ranked_jaccard_skips_unsupported_labels():
    support = np.array([[3.0, 0.0, 0.0, 0.0]])
    truth = np.array([True, True, False, False])
    # only L1 has positive support: pred={L1}, truth={L1,L2}
    assert ranked_jaccard(support, truth, 2)[0] == 0.5


def test_predict_single_neighbor_matches_truth():
    adj = Adjacency.from_lists([[1], []])
    attrs = {1: sv({0: 1, 1: 1, 2: 1})}
    cfg = ModelConfig(bootstrap_p=0.5, n_realizations=20)
    assert predict_score(adj, attrs, 0, (0, 1, 2), lm4(), cfg, stream(0, "network", 0)) == 1.0


def test_predict_without_neighbors_is_null():
    adj = Adjacency.from_lists([[], []])
    assert predict_score(adj, {1: sv({0: 1})}, 0, (0,), lm4(), ModelConfig(),
                         stream(0, "network")) is None


def test_predict_two_neighbors_one_third():
    adj = Adjacency.from_lists([[1, 2], [], []])
    attrs = {1: sv({0: 3, 1: 1}), 2: sv({1: 2, 3: 1})}
    # mean support: L1 1.5, L2 1.5, L4 0.5 -> top2 {L1,L2}; truth {L1,L3}
    cfg = ModelConfig(bootstrap_p=1.0, n_realizations=4)
    assert predict_score(adj, attrs, 0, (0, 2), lm4(), cfg, stream(0, "network")) == pytest.approx(1 / 3, abs=1e-12)


def test_predict_all_sampled_inactive_is_null():
    adj = Adjacency.from_lists([[1], []])
    assert predict_score(adj, {}, 0, (0,), lm4(), ModelConfig(bootstrap_p=1.0),
                         stream(0, "network")) is None


def test_predict_p1_has_zero_variance():
    adj = Adjacency.from_lists([[1, 2, 3], [], [], []])
    attrs = {1: sv({0: 1, 2: 5}), 2: sv({1: 2}), 3: sv({3: 1, 0: 1})}
    cfg = ModelConfig(bootstrap_p=1.0, n_realizations=7)
    vals = {predict_score(adj, attrs, 0, (0, 1), lm4(), cfg, stream(s, "network")) for s in range(10)}
    assert len(vals) == 1


def test_bootstrap_is_mean_of_realizations():
    rows = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    truth = np.array([True, False, False, False])
    rng = stream(3, "network", 1)
    masks = stream(3, "network", 1).random((50, 2)) < 0.5
    expect = []
    for m in masks:
        if not m.any():
            continue
        mean = rows[m].mean(axis=0)
        expect.append(ranked_jaccard(mean, truth, 1)[0])
    got = bootstrap_score(rows, np.array([True, True]), truth, 1, 0.5, 50, rng)
    assert got == pytest.approx(np.mean(expect), abs=1e-12)


@given(st.dictionaries(st.integers(0, 3), st.floats(0.1, 10), min_size=1), st.integers(0, 1000))
def test_privacy_contract_target_never_read(own, seed):
    adj = Adjacency.from_lists([[1, 2], [0], [0]])
    base = {1: sv({0: 1, 1: 2}), 2: sv({2: 1})}
    cfg = ModelConfig(bootstrap_p=0.5, n_realizations=10)
    a = predict_score(adj, base, 0, (0, 1), lm4(), cfg, stream(seed, "network", 0))
    b = predict_score(adj, {**base, 0: sv(own)}, 0, (0, 1), lm4(), cfg, stream(seed, "network", 0))
    assert a == b


def test_pop_baseline_examples():
    attrs = {i: sv({0: 1, 1: 1}) for i in range(5)}
    cfg = ModelConfig(pop_k=3)
    assert pop_baseline(5, attrs, 0, (0, 1), lm4(), cfg, stream(0, "pop")) == 1.0
    assert pop_baseline(5, {0: sv({0: 1})}, 0, (0,), lm4(), cfg, stream(0, "pop")) is None
    assert pop_baseline(1, attrs, 0, (0,), lm4(), cfg, stream(0, "pop")) is None


def test_sample_population_excludes_self():
    for seed in range(50):
        picked = sample_population(2, 0, 1, stream(seed, "pop"))
        assert picked.tolist() == [1]
        p = sample_population(10, 4, 20, stream(seed, "pop"))
        assert p.tolist() == [0, 1, 2, 3, 5, 6, 7, 8, 9]


def test_attr_baseline_forced_sample():
    lm = lm4()
    assert attr_baseline({3: sv({0: 1, 1: 1})}, (0, 1), lm, stream(0, "attr"), n_attrs=4) == 1.0
    assert attr_baseline({3: sv({0: 1})}, (), lm, stream(0, "attr"), n_attrs=4) is None
    assert attr_baseline({}, (0,), lm, stream(0, "attr"), n_attrs=4) is None


def test_attr_pool_heavy_attribute_frequency():
    pool = AttributePool.from_vectors([sv({0: 99.0, 1: 1.0}), sv({2: 1.0})])
    # median_low of sizes (2, 1) is 1 -> a single attribute per draw
    assert pool.density == 1
    pool = AttributePool(pool.attr_ids, np.array([0.99, 0.005, 0.005]), 1)
    rng = stream(0, "attr", 1)
    hits = sum(pool.sample(rng)[0] == 0 for _ in range(10_000))
    assert abs(hits / 10_000 - 0.99) <= 0.02


def test_rand_baseline_examples():
    assert rand_baseline(LABELS, (0, 1, 2, 3), stream(0, "rand")) == 1.0
    # truth larger than the dictionary: clamp to 4 draws
    assert rand_baseline(4, (0, 1, 2, 3), stream(1, "rand")) == 1.0
    assert rand_baseline(4, (), stream(1, "rand")) is None


def test_rand_baseline_expectation():
    rng = stream(0, "rand", 7)
    draws = [rand_baseline(1000, (17,), rng) for _ in range(100_000)]
    assert abs(np.mean(draws) - 1 / 1000) <= 1e-3


def test_rand_baseline_overlap_expectation():
    # |truth| = n out of D labels: E|pred ∩ truth| = n^2 / D (hypergeometric mean)
    D, n, draws = 50, 5, 20_000
    rng = stream(0, "rand", 8)
    truth = tuple(range(n))
    inter = []
    for _ in range(draws):
        j = rand_baseline(D, truth, rng)
        inter.append(round(2 * n * j / (1 + j)))  # invert |∩|/(2n - |∩|)
    se = np.std(inter) / np.sqrt(draws)
    assert abs(np.mean(inter) - n * n / D) < 3 * se


def test_shifted_mean_exact_on_constants():
    assert shifted_mean(np.full(7, 0.1)) == 0.1
    assert shifted_mean(np.array([1.0, 2.0, 6.0])) == 3.0


def test_model_config_validation():
    for bad in ({"bootstrap_p": 0}, {"bootstrap_p": 1.5}, {"n_realizations": 0}, {"pop_k": 0}):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)


def test_scalar_scorers_match_engine_cells():
    tg, lm = generate_graph(SynthConfig(n_nodes=40, n_attrs=40, n_labels=4, n_communities=4,
                                        n_steps=4, m=10, regime="drift", rho=0.3, seed=2))
    model = ModelConfig(bootstrap_p=0.5, n_realizations=5, pop_k=6, seed=9)
    eng = IntervalEngine(tg, lm, InductionConfig(k=5), model)
    checked = 0
    for i in range(0, 40, 7):
        for t0 in range(3):
            for d in range(tg.T - t0 + 1):
                net, pop, _, _ = eng.cell(i, t0, d)
                attrs = tg[t0 + d].attrs
                truth = tuple(np.flatnonzero(eng.step(t0, d).truth[i]).tolist())
                if not truth:
                    assert np.isnan(net)
                    continue
                ps = predict_score(eng.adjacency(t0), attrs, i, truth, lm, model,
                                   stream(9, "network", i, t0, d))
                pb = pop_baseline(tg.n_nodes, attrs, i, truth, lm, model, stream(9, "pop", i, t0, d))
                assert (np.nan if ps is None else ps) == pytest.approx(net, nan_ok=True, abs=0)
                assert (np.nan if pb is None else pb) == pytest.approx(pop, nan_ok=True, abs=0)
                checked += 1
    assert checked > 20
