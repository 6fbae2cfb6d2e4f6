"""Predicting privacy-shadow lengths from truncated rank trajectories.

Trajectories are fixed-length arrays over t = 0..T with NaN for null.  A
regressor is fitted on complete training trajectories and queried with test
trajectories whose entries after the observed length are nulled.
"""
from __future__ import annotations

import copy
import csv
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .rng import stream
from .shadow import shadow_length

FAMILIES = ("power", "exponential", "linear")
_INV_PHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True, eq=False)
class TrajectoryFeature:
    node: int
    ranks: np.ndarray
    observed_len: int

    @classmethod
    def full(cls, node: int, ranks) -> "TrajectoryFeature":
        ranks = np.asarray(ranks, dtype=np.float64)
        return cls(node, ranks, ranks.size - 1)


def truncate(feature: TrajectoryFeature, x: int) -> TrajectoryFeature:
    """Null every entry after position ``x``."""
    T = feature.ranks.size - 1
    if not 0 <= x <= T:
        raise ConfigError(f"observed length must be in [0, {T}]")
    ranks = feature.ranks.copy()
    ranks[x + 1:] = np.nan
    return TrajectoryFeature(feature.node, ranks, min(x, feature.observed_len))


def masked_distances(train: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Mean squared difference over mutually non-null positions (inf without overlap)."""
    train = np.atleast_2d(train)
    both = ~np.isnan(train) & ~np.isnan(query)[None, :]
    diff = np.where(both, train - np.nan_to_num(query)[None, :], 0.0)
    counts = both.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = (diff * diff).sum(axis=1) / counts
    return np.where(counts > 0, dist, np.inf)


def _nearest(train: np.ndarray, train_ids: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Row indices of the ``k`` nearest finite-distance rows, ties by ascending id."""
    dist = masked_distances(train, query)
    order = np.lexsort((train_ids, dist))
    order = order[np.isfinite(dist[order])]
    return order[:k]


def knn_regress(train: np.ndarray, targets: np.ndarray, train_ids: np.ndarray,
                query: np.ndarray, k: int) -> float:
    """Median target of the ``k`` nearest training trajectories."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise DataError("knn_regress needs training data")
    if k < 1:
        raise ConfigError("k must be >= 1")
    idx = _nearest(train, np.asarray(train_ids), query, k)
    if idx.size == 0:
        return float(np.median(targets))
    return float(np.median(targets[idx]))


@dataclass(frozen=True)
class FitParams:
    """Fitted curve; ``params`` is (a, lam, c) for power/exponential and (a, b) for linear."""

    family: str
    params: tuple[float, ...]
    rmse: float

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.family == "linear":
            a, b = self.params
            return a * t + b
        a, lam, c = self.params
        if self.family == "exponential":
            return a * np.exp(lam * t) + c
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * np.power(t, lam) + c
        # t**lam at t=0 is undefined for negative exponents
        return np.where((t <= 0) & (lam < 0), np.nan, out)


def _lstsq_sse(basis: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    if not np.all(np.isfinite(basis)):
        return np.full(basis.shape[1], np.nan), math.inf
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    sse = float(resid @ resid)
    return coef, sse if math.isfinite(sse) else math.inf


def _golden(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2


def _search_lambda(sse: Callable[[float], float], lo: float, hi: float, tol: float,
                   grid: int) -> float:
    """Coarse grid to pick a bracket, then golden-section refinement inside it."""
    lams = np.linspace(lo, hi, grid + 1)
    values = [sse(float(l)) for l in lams]
    best = int(np.argmin(values))
    a, b = lams[max(best - 1, 0)], lams[min(best + 1, grid)]
    lam = _golden(sse, float(a), float(b), tol)
    return lam if sse(lam) <= values[best] else float(lams[best])


def curve_fit(family: str, t, y, *, amplitude: bool = False, lam_bounds=(-5.0, 5.0),
              tol: float = 1e-6, grid: int = 100) -> FitParams:
    """Least-squares fit of one curve family to points ``(t, y)``.

    power: ``y = a t^lam + c`` (points with t <= 0 are dropped);
    exponential: ``y = exp(lam t) + c``, or ``a exp(lam t) + c`` with ``amplitude``;
    linear: ``y = a t + b``.  For the non-linear families the linear
    coefficients are solved exactly for every candidate ``lam``.
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape:
        raise DataError("t and y must have the same length")
    if family not in FAMILIES:
        raise ConfigError(f"unknown curve family {family!r}")
    if family == "power":
        keep = t > 0
        t, y = t[keep], y[keep]
    need = 2 if family == "linear" else 3
    if t.size < need:
        raise DataError(f"{family} fit needs at least {need} points")
    if np.ptp(t) == 0:
        raise DataError("degenerate fit: all abscissae are equal")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise DataError("non-finite input to curve_fit")

    if family == "linear":
        tc = t - t.mean()
        a = float((tc * (y - y.mean())).sum() / (tc * tc).sum())
        b = float(y.mean() - a * t.mean())
        fp = FitParams("linear", (a, b), 0.0)
    else:
        ones = np.ones_like(t)

        def design(lam: float) -> np.ndarray:
            with np.errstate(over="ignore"):
                g = np.power(t, lam) if family == "power" else np.exp(lam * t)
            return g

        def solve(lam: float) -> tuple[tuple[float, float], float]:
            g = design(lam)
            if family == "exponential" and not amplitude:
                if not np.all(np.isfinite(g)):
                    return (1.0, math.nan), math.inf
                c = float((y - g).mean())
                r = y - g - c
                sse = float(r @ r)
                return (1.0, c), sse if math.isfinite(sse) else math.inf
            coef, sse = _lstsq_sse(np.column_stack([g, ones]), y)
            return (float(coef[0]), float(coef[1])), sse

        lam = _search_lambda(lambda l: solve(l)[1], *lam_bounds, tol, grid)
        (a, c), sse = solve(lam)
        if not (math.isfinite(sse) and math.isfinite(a) and math.isfinite(c)):
            raise DataError(f"{family} fit produced non-finite values")
        fp = FitParams(family, (a, float(lam), c), 0.0)
    resid = y - fp(t)
    rmse = float(math.sqrt(float(resid @ resid) / t.size))
    return FitParams(fp.family, fp.params, rmse)


def best_fit(ranks: np.ndarray, families: Sequence[str] = FAMILIES,
             amplitude: bool = False) -> FitParams | None:
    """Lowest-RMSE fit among ``families`` over the non-null entries; None if none fits."""
    ranks = np.asarray(ranks, dtype=np.float64)
    t = np.flatnonzero(~np.isnan(ranks)).astype(np.float64)
    y = ranks[~np.isnan(ranks)]
    best = None
    for family in families:
        try:
            fp = curve_fit(family, t, y, amplitude=amplitude)
        except DataError:
            continue
        if best is None or fp.rmse < best.rmse:
            best = fp
    return best


def extrapolate_shadow(fp: FitParams, eta: float, T: int) -> int:
    """Shadow length of the fitted curve evaluated at t = 0..T (T+1 if never below eta)."""
    values = fp(np.arange(T + 1))
    length = shadow_length(values, eta)
    return T + 1 if length is None else length


def fit_transfer_predict(train: np.ndarray, train_ids: np.ndarray,
                         params: Sequence[FitParams | None], targets: np.ndarray,
                         query: TrajectoryFeature, eta: float, T: int) -> float:
    """Extrapolate with the curve of the nearest training trajectory (prefix-truncated)."""
    usable = np.array([p is not None for p in params], dtype=bool)
    if not usable.any():
        return float(np.median(targets))
    x = query.observed_len
    clipped = np.array(train, dtype=np.float64, copy=True)
    clipped[:, x + 1:] = np.nan
    rows = np.flatnonzero(usable)
    idx = _nearest(clipped[rows], np.asarray(train_ids)[rows], query.ranks, 1)
    if idx.size == 0:
        return float(np.median(targets))
    return float(extrapolate_shadow(params[rows[idx[0]]], eta, T))


@dataclass
class Dataset:
    train_ids: np.ndarray
    train: np.ndarray
    train_targets: np.ndarray
    test_ids: np.ndarray
    test: np.ndarray
    test_targets: np.ndarray


def make_dataset(ranks: Mapping[int, np.ndarray], targets: Mapping[int, int], seed: int,
                 resample: int = 0, test_fraction: float = 0.2) -> Dataset:
    """Node-level random train/test split of trajectories with shadow-length targets."""
    nodes = np.array(sorted(set(ranks) & set(targets)), dtype=np.int64)
    if nodes.size < 2:
        raise DataError("need at least two nodes with trajectories and shadow lengths")
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must be in (0, 1)")
    n_test = min(max(int(round(test_fraction * nodes.size)), 1), nodes.size - 1)
    perm = stream(seed, "split", resample).permutation(nodes.size)
    test = np.sort(nodes[perm[:n_test]])
    train = np.sort(nodes[perm[n_test:]])

    def stack(ids):
        return (np.array([ranks[i] for i in ids.tolist()], dtype=np.float64),
                np.array([targets[i] for i in ids.tolist()], dtype=np.float64))

    tr, ytr = stack(train)
    te, yte = stack(test)
    return Dataset(train, tr, ytr, test, te, yte)


class Regressor:
    """Interface: ``fit`` on complete training trajectories, ``predict`` truncated ones."""

    name = "regressor"

    def fit(self, ids: np.ndarray, X: np.ndarray, y: np.ndarray) -> "Regressor":
        raise NotImplementedError

    def predict(self, features: Sequence[TrajectoryFeature]) -> np.ndarray:
        raise NotImplementedError

    def clone(self) -> "Regressor":
        """Unfitted copy used for each resample."""
        return copy.deepcopy(self)


class ConstantMedian(Regressor):
    name = "constant-median"

    def fit(self, ids, X, y):
        self.value = float(np.median(y))
        return self

    def predict(self, features):
        return np.full(len(features), self.value)


class KnnTrajectory(Regressor):
    name = "knn"

    def __init__(self, k: int = 5):
        if k < 1:
            raise ConfigError("k must be >= 1")
        self.k = k

    def fit(self, ids, X, y):
        self.ids, self.X, self.y = np.asarray(ids), np.asarray(X), np.asarray(y, dtype=np.float64)
        return self

    def predict(self, features):
        return np.array([knn_regress(self.X, self.y, self.ids, f.ranks, self.k) for f in features])


class CurveFitTransfer(Regressor):
    """1-NN transfer of per-node best-fit curves; fits are cached by node id."""

    name = "curvefit"

    def __init__(self, eta: float, T: int, amplitude: bool = False,
                 cache: dict[int, FitParams | None] | None = None):
        self.eta = eta
        self.T = T
        self.amplitude = amplitude
        self.cache = {} if cache is None else cache

    def fit(self, ids, X, y):
        self.ids, self.X, self.y = np.asarray(ids), np.asarray(X), np.asarray(y, dtype=np.float64)
        for node, row in zip(self.ids.tolist(), self.X):
            if node not in self.cache:
                self.cache[node] = best_fit(row, amplitude=self.amplitude)
        self.params = [self.cache[n] for n in self.ids.tolist()]
        return self

    def predict(self, features):
        return np.array([fit_transfer_predict(self.X, self.ids, self.params, self.y, f,
                                              self.eta, self.T) for f in features])

    def clone(self) -> "CurveFitTransfer":
        return CurveFitTransfer(self.eta, self.T, self.amplitude, self.cache)


def _fmt(v: float) -> str:
    return "" if v != v else repr(float(v))


class External(Regressor):
    """Runs ``CMD train.csv test.csv predictions.csv`` in a scratch directory.

    train.csv columns: node, target, r0..rT; test.csv: node, r0..rT (empty
    cells are null).  predictions.csv must contain node, prediction for every
    test node.
    """

    name = "external"

    def __init__(self, command: str, timeout: float | None = None):
        if not command.strip():
            raise ConfigError("external regressor needs a command")
        self.command = command
        self.timeout = timeout

    def fit(self, ids, X, y):
        self.ids, self.X, self.y = np.asarray(ids), np.asarray(X), np.asarray(y, dtype=np.float64)
        return self

    def predict(self, features):
        T = self.X.shape[1] - 1
        cols = [f"r{t}" for t in range(T + 1)]
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            with open(tmp / "train.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["node", "target", *cols])
                for node, target, row in zip(self.ids.tolist(), self.y.tolist(), self.X):
                    w.writerow([node, _fmt(target), *map(_fmt, row)])
            with open(tmp / "test.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["node", *cols])
                for f in features:
                    w.writerow([f.node, *map(_fmt, f.ranks)])
            argv = shlex.split(self.command) + [str(tmp / n) for n in
                                                ("train.csv", "test.csv", "predictions.csv")]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise DataError(f"external regressor failed to run: {exc}") from None
            if proc.returncode != 0:
                raise DataError(f"external regressor exited with {proc.returncode}: "
                                f"{proc.stderr.strip()[-500:]}")
            try:
                with open(tmp / "predictions.csv", newline="") as fh:
                    preds = {int(r["node"]): float(r["prediction"]) for r in csv.DictReader(fh)}
            except (OSError, KeyError, ValueError) as exc:
                raise DataError(f"unreadable predictions.csv from external regressor: {exc}") from None
        try:
            return np.array([preds[f.node] for f in features])
        except KeyError as exc:
            raise DataError(f"external regressor gave no prediction for node {exc}") from None


def make_regressor(name: str, *, eta: float | None = None, T: int | None = None,
                   k: int = 5) -> Regressor:
    """Regressor from a CLI-style name: constant-median, knn, curvefit or external:CMD."""
    if name == "constant-median":
        return ConstantMedian()
    if name == "knn":
        return KnnTrajectory(k)
    if name == "curvefit":
        if eta is None or T is None:
            raise ConfigError("curvefit regressor needs eta and T")
        return CurveFitTransfer(eta, T)
    if name.startswith("external:"):
        return External(name[len("external:"):])
    raise ConfigError(f"unknown regressor {name!r}")


@dataclass
class MaeTable:
    xs: list[int]
    per_resample: np.ndarray  # (n_resamples, len(xs))
    mean: np.ndarray = field(init=False)
    std: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mean = self.per_resample.mean(axis=0)
        self.std = self.per_resample.std(axis=0)

    def rows(self) -> list[tuple[int, float, float]]:
        return [(x, float(m), float(s)) for x, m, s in zip(self.xs, self.mean, self.std)]


def evaluate_mae(regressor: Regressor | Callable[[], Regressor], ranks: Mapping[int, np.ndarray],
                 targets: Mapping[int, int], xs: Sequence[int], n_resamples: int = 30,
                 seed: int = 0, test_fraction: float = 0.2) -> MaeTable:
    """MAE of predicted shadow lengths per observed length, over resampled splits.

    Each resample fits a fresh regressor on complete training trajectories;
    test trajectories are truncated to each ``x`` before prediction.
    """
    if n_resamples < 1:
        raise ConfigError("n_resamples must be >= 1")
    fresh = regressor.clone if isinstance(regressor, Regressor) else regressor
    xs = [int(x) for x in xs]
    out = np.zeros((n_resamples, len(xs)))
    for r in range(n_resamples):
        ds = make_dataset(ranks, targets, seed, r, test_fraction)
        model = fresh().fit(ds.train_ids, ds.train, ds.train_targets)
        full = [TrajectoryFeature.full(n, row) for n, row in zip(ds.test_ids.tolist(), ds.test)]
        for c, x in enumerate(xs):
            pred = model.predict([truncate(f, x) for f in full])
            out[r, c] = float(np.mean(np.abs(pred - ds.test_targets)))
    return MaeTable(xs, out)
