"""Neighborhood-mean label re-inference and the zero-information baselines.

All scorers share one pipeline: average label support over a set of
attribute vectors, rank labels by (support desc, label id asc), keep the top
``|truth|`` labels with positive support, and report Jaccard similarity with
the true label set.  Scores are floats in [0, 1]; ``None`` means no
prediction was possible.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Collection, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .induction import Adjacency
from .temporal_graph import LabelMap, SparseVector, label_support


@dataclass(frozen=True)
class ModelConfig:
    bootstrap_p: float = 0.5
    n_realizations: int = 10
    pop_k: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.bootstrap_p <= 1:
            raise ConfigError("bootstrap_p must be in (0, 1]")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be >= 1")
        if self.pop_k < 1:
            raise ConfigError("pop_k must be >= 1")


def shifted_mean(values: np.ndarray) -> float:
    """Mean computed relative to the first element.

    Exact when all values are equal, which keeps constant score series
    bit-constant after averaging.
    """
    values = np.asarray(values, dtype=np.float64)
    ref = values[0]
    return float(ref + (values - ref).sum() / values.size)


def jaccard(pred: Collection[int], truth: Collection[int]) -> float:
    pred, truth = set(pred), set(truth)
    union = pred | truth
    if not union:
        raise DataError("jaccard of two empty label sets is undefined")
    return len(pred & truth) / len(union)


def ranked_jaccard(support: np.ndarray, truth_mask: np.ndarray, n_truth) -> np.ndarray:
    """Row-wise Jaccard of the top-``n_truth`` positively supported labels vs truth.

    ``truth_mask`` and ``n_truth`` may be per-row (2-d / 1-d) or shared.
    """
    support = np.atleast_2d(support)
    rows = support.shape[0]
    truth_mask = np.broadcast_to(truth_mask, support.shape)
    n_truth = np.broadcast_to(np.asarray(n_truth), (rows,))
    width = int(n_truth.max())
    order = np.argsort(-support, axis=1, kind="stable")[:, :width]
    r = np.arange(rows)[:, None]
    positive = (support[r, order] > 0) & (np.arange(order.shape[1])[None, :] < n_truth[:, None])
    inter = (truth_mask[r, order] & positive).sum(axis=1)
    return inter / (positive.sum(axis=1) + n_truth - inter)


def bootstrap_scores(rows: np.ndarray, active: np.ndarray, truth_mask: np.ndarray,
                     n_truth: np.ndarray, p: float, n_realizations: int,
                     rngs) -> np.ndarray:
    """Batched :func:`bootstrap_score` over ``D`` independent cells.

    Shapes: rows ``(D, k, L)``, active ``(D, k)``, truth_mask ``(D, L)``,
    n_truth ``(D,)``; ``rngs`` supplies one generator per cell.  Returns a
    length-``D`` array with NaN for cells where every realization was skipped.
    """
    n_cells, k = active.shape
    out = np.full(n_cells, np.nan)
    if k == 0 or n_cells == 0:
        return out
    masks = np.stack([rng.random((n_realizations, k)) < p for rng in rngs])
    valid = (masks & active[:, None, :]).any(axis=2)
    counts = masks.sum(axis=2)
    sums = (masks[..., None] * rows[:, None, :, :]).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[..., None]
    L = rows.shape[2]
    flat = means.reshape(-1, L)
    cell = np.repeat(np.arange(n_cells), n_realizations)
    scores = ranked_jaccard(np.nan_to_num(flat, nan=0.0), truth_mask[cell],
                            n_truth[cell]).reshape(n_cells, n_realizations)
    for d in range(n_cells):
        if valid[d].any():
            out[d] = shifted_mean(scores[d, valid[d]])
    return out


def bootstrap_score(rows: np.ndarray, active: np.ndarray, truth_mask: np.ndarray,
                    n_truth: int, p: float, n_realizations: int,
                    rng: np.random.Generator) -> float | None:
    """Mean ranked Jaccard over Bernoulli(p) subsamples of ``rows``.

    ``rows`` holds one label-support row per candidate neighbor and ``active``
    flags neighbors that have data.  A realization is skipped when it samples
    no active neighbor; if every realization is skipped the result is None.
    """
    if rows.shape[0] == 0:
        return None
    score = bootstrap_scores(rows[None], np.asarray(active)[None], truth_mask[None],
                             np.array([n_truth]), p, n_realizations, [rng])[0]
    return None if np.isnan(score) else float(score)


def _truth_mask(truth: Sequence[int], n_labels: int) -> np.ndarray:
    mask = np.zeros(n_labels, dtype=bool)
    mask[list(truth)] = True
    return mask


def _support_rows(nodes: np.ndarray, attrs: Mapping[int, SparseVector], lm: LabelMap):
    rows = np.zeros((len(nodes), lm.n_labels))
    active = np.zeros(len(nodes), dtype=bool)
    for r, j in enumerate(nodes.tolist()):
        vec = attrs.get(j)
        if vec:
            active[r] = True
            for label, s in label_support(vec, lm).items():
                rows[r, label] = s
    return rows, active


def predict_score(adjacency: Adjacency, attrs_at_eval: Mapping[int, SparseVector], i: int,
                  truth: Sequence[int], lm: LabelMap, cfg: ModelConfig,
                  rng: np.random.Generator) -> float | None:
    """Re-infer node ``i``'s labels from its frozen out-neighbors' current attributes.

    Node ``i``'s own entry in ``attrs_at_eval`` is never read.
    """
    if not truth:
        return None
    nbrs = adjacency.neighbors(i)
    nbrs = nbrs[nbrs != i]
    if nbrs.size == 0:
        return None
    rows, active = _support_rows(nbrs, attrs_at_eval, lm)
    return bootstrap_score(rows, active, _truth_mask(truth, lm.n_labels), len(truth),
                           cfg.bootstrap_p, cfg.n_realizations, rng)


def sample_population(n_nodes: int, i: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``min(k, n_nodes - 1)`` distinct nodes drawn uniformly from all nodes but ``i``."""
    others = n_nodes - 1
    picked = np.sort(rng.choice(others, size=min(k, others), replace=False))
    picked[picked >= i] += 1
    return picked


def pop_baseline(n_nodes: int, attrs_at_eval: Mapping[int, SparseVector], i: int,
                 truth: Sequence[int], lm: LabelMap, cfg: ModelConfig,
                 rng: np.random.Generator) -> float | None:
    """Neighborhood model applied to ``pop_k`` random nodes instead of i's neighbors."""
    if not truth or n_nodes <= 1:
        return None
    picked = sample_population(n_nodes, i, cfg.pop_k, rng)
    rows, active = _support_rows(picked, attrs_at_eval, lm)
    return bootstrap_score(rows, active, _truth_mask(truth, lm.n_labels), len(truth),
                           cfg.bootstrap_p, cfg.n_realizations, rng)


@dataclass(frozen=True)
class AttributePool:
    """Per-step population statistics used by the attribute-sampling baseline."""

    attr_ids: np.ndarray
    probs: np.ndarray
    density: int

    @classmethod
    def from_vectors(cls, vectors) -> "AttributePool | None":
        vectors = [v for v in vectors if v]
        if not vectors:
            return None
        density = statistics.median_low(len(v) for v in vectors)
        totals: dict[int, float] = {}
        for v in vectors:
            for a, w in zip(v.ids.tolist(), v.weights.tolist()):
                totals[a] = totals.get(a, 0.0) + w
        ids = np.array(sorted(totals), dtype=np.int64)
        weights = np.array([totals[a] for a in ids.tolist()])
        return cls(ids, weights / weights.sum(), int(density))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        size = min(self.density, self.attr_ids.size)
        return self.attr_ids[rng.choice(self.attr_ids.size, size=size, replace=False, p=self.probs)]


def attr_pool_score(pool: AttributePool | None, lm: LabelMap, n_attrs: int,
                    truth_mask: np.ndarray, n_truth: int,
                    rng: np.random.Generator) -> float | None:
    if pool is None or n_truth == 0:
        return None
    sampled = pool.sample(rng)
    inc = lm.incidence(n_attrs)
    labels = np.concatenate([inc.indices[inc.indptr[a]:inc.indptr[a + 1]] for a in sampled.tolist()]
                            or [np.empty(0, np.int64)])
    support = np.bincount(labels, minlength=lm.n_labels).astype(np.float64)
    return float(ranked_jaccard(support, truth_mask, n_truth)[0])


def attr_baseline(attrs_at_eval: Mapping[int, SparseVector], truth: Sequence[int], lm: LabelMap,
                  rng: np.random.Generator, n_attrs: int | None = None) -> float | None:
    """Score a synthetic 'median node' drawn from the population's attribute frequencies."""
    if not truth:
        return None
    pool = AttributePool.from_vectors(attrs_at_eval[k] for k in sorted(attrs_at_eval))
    if pool is None:
        return None
    if n_attrs is None:
        n_attrs = len(lm.attr_to_labels) if not lm.is_identity else lm.n_labels
    return attr_pool_score(pool, lm, n_attrs, _truth_mask(truth, lm.n_labels), len(truth), rng)


def rand_score(n_labels: int, truth_mask: np.ndarray, n_truth: int,
               rng: np.random.Generator) -> float | None:
    if n_truth == 0:
        return None
    sampled = rng.choice(n_labels, size=min(n_truth, n_labels), replace=False)
    inter = int(truth_mask[sampled].sum())
    return inter / (sampled.size + n_truth - inter)


def rand_baseline(label_dict, truth: Sequence[int], rng: np.random.Generator) -> float | None:
    """Jaccard of ``|truth|`` labels drawn uniformly (clamped to the dictionary size)."""
    n_labels = label_dict if isinstance(label_dict, (int, np.integer)) else len(label_dict)
    if not truth:
        return None
    return rand_score(int(n_labels), _truth_mask(truth, int(n_labels)), len(truth), rng)
