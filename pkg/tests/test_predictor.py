import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pshadow.errors import ConfigError, DataError
from pshadow.predictor import (ConstantMedian, CurveFitTransfer, External, FitParams,
                               KnnTrajectory, Regressor, TrajectoryFeature, best_fit, curve_fit,
                               evaluate_mae, extrapolate_shadow, fit_transfer_predict, knn_regress,
                               make_dataset, make_regressor, masked_distances, truncate)
from pshadow.shadow import shadow_length


def test_truncate_examples():
    f = TrajectoryFeature.full(3, [90.0, 80.0, np.nan, 60.0])
    assert truncate(f, 3).ranks.tolist()[:2] == [90.0, 80.0] and truncate(f, 3).observed_len == 3
    t0 = truncate(f, 0)
    assert t0.ranks[0] == 90.0 and np.isnan(t0.ranks[1:]).all() and t0.observed_len == 0
    with pytest.raises(ConfigError):
        truncate(f, 4)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=12), st.data())
def test_truncate_idempotent(ranks, data):
    f = TrajectoryFeature.full(0, ranks)
    x = data.draw(st.integers(0, len(ranks) - 1))
    once = truncate(f, x)
    assert np.array_equal(truncate(once, x).ranks, once.ranks, equal_nan=True)


def test_masked_distances():
    train = np.array([[1.0, 2.0, np.nan], [np.nan, np.nan, 5.0]])
    d = masked_distances(train, np.array([1.0, 4.0, np.nan]))
    assert d[0] == 2.0 and d[1] == np.inf


def test_knn_examples():
    train = np.array([[90.0, 80.0], [10.0, 5.0], [50.0, 50.0]])
    ids, y = np.array([0, 1, 2]), np.array([3.0, 0.0, 1.0])
    assert knn_regress(train, y, ids, np.array([10.0, 5.0]), 1) == 0.0
    assert knn_regress(train, y, ids, np.array([0.0, 0.0]), 3) == 1.0
    # no finite-distance row: global median
    assert knn_regress(train, y, ids, np.array([np.nan, np.nan]), 1) == 1.0


def test_knn_two_clusters():
    rng = np.random.default_rng(0)
    t = np.arange(11)
    high = 90 + rng.uniform(-2, 2, (20, 11))
    decay = 90 * np.exp(-0.8 * t) + rng.uniform(0, 2, (20, 11))
    train = np.vstack([high, decay])
    y = np.array([11.0] * 20 + [2.0] * 20)
    ids = np.arange(40)
    for q in (90 + rng.uniform(-2, 2, 11), 90 * np.exp(-0.8 * t) + 1):
        f = truncate(TrajectoryFeature.full(99, q), 4)
        expect = 11.0 if q[4] > 50 else 2.0
        assert knn_regress(train, y, ids, f.ranks, 5) == expect


def test_curve_fit_linear_exact():
    t = np.arange(10.0)
    fp = curve_fit("linear", t, 2 * t + 1)
    assert fp.params[0] == pytest.approx(2, abs=1e-9) and fp.params[1] == pytest.approx(1, abs=1e-9)
    assert fp.rmse < 1e-9


def test_curve_fit_power_recovers_exponent():
    t = np.arange(1.0, 21.0)
    fp = curve_fit("power", t, -14 * t ** 0.42 + 90)
    a, lam, c = fp.params
    assert abs(lam - 0.42) < 1e-3
    assert a == pytest.approx(-14, abs=0.05) and c == pytest.approx(90, abs=0.05)


def test_curve_fit_exponential_recovers_rate_and_offset():
    t = np.arange(0.0, 21.0)
    fp = curve_fit("exponential", t, np.exp(-0.3 * t) + 0.5)
    assert abs(fp.params[1] + 0.3) < 1e-3 and abs(fp.params[2] - 0.5) < 1e-3
    fp2 = curve_fit("exponential", t, 40 * np.exp(-0.3 * t) + 5, amplitude=True)
    assert abs(fp2.params[1] + 0.3) < 1e-3 and abs(fp2.params[0] - 40) < 1e-2


def test_curve_fit_errors():
    with pytest.raises(DataError):
        curve_fit("linear", np.ones(5), np.arange(5.0))
    with pytest.raises(DataError):
        curve_fit("power", np.array([0.0, 1.0, 2.0]), np.ones(3))
    with pytest.raises(ConfigError):
        curve_fit("cubic", np.arange(4.0), np.arange(4.0))
    with pytest.raises(DataError):
        curve_fit("linear", np.arange(3.0), np.array([1.0, np.inf, 2.0]))


def test_best_fit_picks_generating_family():
    t = np.arange(21.0)
    assert best_fit(3 * t + 4).family == "linear"
    assert best_fit(np.exp(-0.5 * t) * 1 + 20).family == "exponential"
    assert best_fit(np.full(2, np.nan)) is None


def test_extrapolate_examples():
    # 100 - t <= 30 from t = 70 on
    assert extrapolate_shadow(FitParams("linear", (-1.0, 100.0), 0.0), 30, 200) == 70
    assert extrapolate_shadow(FitParams("linear", (0.0, 10.0), 0.0), 30, 20) == 0
    assert extrapolate_shadow(FitParams("linear", (0.0, 90.0), 0.0), 30, 20) == 21
    # power curve with negative exponent is undefined at t=0 and ignored there
    fp = FitParams("power", (50.0, -1.0, 0.0), 0.0)
    assert extrapolate_shadow(fp, 30, 10) == 2


def test_fit_transfer_prefix_query_uses_source_params():
    t = np.arange(21.0)
    train = np.vstack([100 - 2 * t, 80 * np.exp(-0.2 * t) + 10, np.full(21, 95.0)])
    ids = np.array([4, 5, 6])
    params = [best_fit(r) for r in train]
    y = np.array([shadow_length(r, 30) for r in train], dtype=float)
    for row, fp in zip(train, params):
        q = truncate(TrajectoryFeature.full(99, row), 5)
        assert fit_transfer_predict(train, ids, params, y, q, 30, 20) == extrapolate_shadow(fp, 30, 20)


def test_fit_transfer_all_linear():
    t = np.arange(11.0)
    train = np.vstack([50 - t, 70 - 2 * t, 20 + t])
    params = [best_fit(r, families=("linear",)) for r in train]
    assert {p.family for p in params} == {"linear"}
    for row, fp in zip(train, params):
        q = truncate(TrajectoryFeature.full(9, row + 0.1), 3)
        got = fit_transfer_predict(train, np.arange(3), params, np.zeros(3), q, 30, 10)
        assert got == extrapolate_shadow(fp, 30, 10)


def _ranks(n, T=10, seed=0):
    rng = np.random.default_rng(seed)
    return {i: rng.uniform(0, 100, T + 1) for i in range(n)}


def test_make_dataset_examples():
    ranks = _ranks(10)
    targets = {i: i for i in range(10)}
    ds = make_dataset(ranks, targets, seed=0)
    assert ds.train_ids.size == 8 and ds.test_ids.size == 2
    assert set(ds.train_ids) | set(ds.test_ids) == set(range(10))
    again = make_dataset(ranks, targets, seed=0)
    assert np.array_equal(ds.test_ids, again.test_ids)
    big = _ranks(50)
    big_targets = {i: 0 for i in range(50)}
    splits = {tuple(make_dataset(big, big_targets, 0, r).test_ids) for r in range(30)}
    assert len(splits) >= 20
    with pytest.raises(DataError):
        make_dataset({0: ranks[0]}, {0: 1}, 0)


class Oracle(Regressor):
    def __init__(self, truth):
        self.truth = truth

    def fit(self, ids, X, y):
        return self

    def predict(self, features):
        return np.array([self.truth[f.node] for f in features], dtype=float)


def test_evaluate_mae_oracle_and_constant():
    ranks = _ranks(40)
    targets = {i: int(i % 7) for i in range(40)}
    table = evaluate_mae(Oracle(targets), ranks, targets, xs=[0, 5, 10], n_resamples=5)
    assert np.all(table.per_resample == 0)
    const = evaluate_mae(ConstantMedian(), ranks, targets, xs=[0, 5, 10], n_resamples=5)
    assert np.all(const.per_resample == const.per_resample[:, :1])
    zeros = {i: 0 for i in range(40)}
    assert np.all(evaluate_mae(ConstantMedian(), ranks, zeros, xs=[0, 10]).mean == 0)


def test_mae_table_rows():
    table = evaluate_mae(KnnTrajectory(3), _ranks(30), {i: i % 4 for i in range(30)}, [2, 10],
                         n_resamples=4)
    rows = table.rows()
    assert [r[0] for r in rows] == [2, 10]
    assert rows[0][2] == pytest.approx(table.per_resample[:, 0].std(ddof=0))


def test_external_regressor(tmp_path):
    script = tmp_path / "reg.py"
    script.write_text(textwrap.dedent("""
        import csv, sys
        train, test, out = sys.argv[1:4]
        ys = [float(r["target"]) for r in csv.DictReader(open(train))]
        mean = sum(ys) / len(ys)
        with open(out, "w") as fh:
            fh.write("node,prediction\\n")
            for r in csv.DictReader(open(test)):
                fh.write(f"{r['node']},{mean}\\n")
    """))
    reg = External(f"{sys.executable} {script}")
    ranks = _ranks(10)
    targets = {i: i for i in range(10)}
    table = evaluate_mae(reg, ranks, targets, xs=[0, 10], n_resamples=2)
    ds = make_dataset(ranks, targets, 0, 0)
    expected = np.mean(np.abs(ds.train_targets.mean() - ds.test_targets))
    assert table.per_resample[0, 0] == pytest.approx(expected, abs=1e-12)
    bad = External(f"{sys.executable} -c 'import sys; sys.exit(3)'")
    with pytest.raises(DataError, match="exited with 3"):
        bad.fit(np.arange(2), np.zeros((2, 3)), np.zeros(2)).predict(
            [TrajectoryFeature.full(0, np.zeros(3))])


def test_make_regressor_names():
    assert isinstance(make_regressor("knn", k=3), KnnTrajectory)
    assert isinstance(make_regressor("constant-median"), ConstantMedian)
    assert isinstance(make_regressor("curvefit", eta=30, T=10), CurveFitTransfer)
    assert isinstance(make_regressor("external:true"), External)
    with pytest.raises(ConfigError):
        make_regressor("curvefit")
    with pytest.raises(ConfigError):
        make_regressor("gbm")
