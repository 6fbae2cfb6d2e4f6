"""Prediction intervals, their aligned expectations, and s-complete cohorts."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import formats
from .errors import DataError, WindowError
from .induction import Adjacency, InductionConfig, frozen_adjacency
from .model import (AttributePool, ModelConfig, attr_pool_score, bootstrap_score,
                    bootstrap_scores, rand_score, sample_population)
from .rng import stream
from .temporal_graph import (LabelMap, TemporalGraph, aggregate_window, support_matrix,
                             truth_matrix, vectors_to_csr)

log = logging.getLogger(__name__)

SCORE_COLUMNS = ("score", "pop", "attr", "rand")


@dataclass(frozen=True, eq=False)
class PredictionInterval:
    node: int
    t_start: int
    scores: np.ndarray  # NaN marks a null score
    baselines: Mapping[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True, eq=False)
class NodeTrajectory:
    node: int
    expected: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True, eq=False)
class ReferenceDistribution:
    delta: int
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class _EvalStep:
    support: np.ndarray
    active: np.ndarray
    truth: np.ndarray
    n_truth: np.ndarray
    pool: AttributePool | None


def nan_shifted_mean(block: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Column means ignoring NaN, computed relative to the first non-NaN entry.

    Returns ``(means, counts)``; columns without data are NaN with count 0.
    Constant columns average to exactly their value.
    """
    block = np.moveaxis(np.asarray(block, dtype=np.float64), axis, 0)
    present = ~np.isnan(block)
    counts = present.sum(axis=0)
    first = np.argmax(present, axis=0)
    ref = np.take_along_axis(block, first[None], axis=0)[0]
    with np.errstate(invalid="ignore"):
        dev = np.where(present, block - ref, 0.0).sum(axis=0)
        means = np.where(counts > 0, ref + dev / np.maximum(counts, 1), np.nan)
    return means, counts


class IntervalEngine:
    """Evaluates prediction intervals on one graph.

    Δ=0 evaluates against the aggregated training window; Δ>=1 against the
    single snapshot at ``t_start + Δ``.  Every random draw is keyed by
    ``(purpose, node, t_start, Δ)`` so results do not depend on scheduling.
    """

    def __init__(self, tg: TemporalGraph, lm: LabelMap, induction: InductionConfig,
                 model: ModelConfig, adjacencies: Mapping[int, Adjacency] | None = None,
                 threads: int = 1):
        self.tg = tg
        self.lm = lm
        self.induction = induction
        self.model = model
        self.threads = max(1, int(threads))
        self._adj: dict[int, Adjacency] = dict(adjacencies or {})
        self._snap_steps: dict[int, _EvalStep] = {}
        self._agg_steps: dict[int, _EvalStep] = {}
        self._window_active: dict[int, np.ndarray] = {}

    @property
    def starts(self) -> range:
        return range(self.induction.w - 1, self.tg.T + 1)

    def _check_start(self, t_start: int) -> None:
        if t_start - self.induction.w + 1 < 0 or t_start > self.tg.T:
            raise WindowError(f"no trainable window ends at t={t_start} (w={self.induction.w})")

    def _make_step(self, vectors) -> _EvalStep:
        x = vectors_to_csr(vectors, self.tg.n_nodes, self.tg.n_attrs)
        truth = truth_matrix(x, self.lm)
        return _EvalStep(support=support_matrix(x, self.lm), active=np.diff(x.indptr) > 0,
                         truth=truth, n_truth=truth.sum(axis=1),
                         pool=AttributePool.from_vectors(vectors[k] for k in sorted(vectors)))

    def step(self, t_start: int, delta: int) -> _EvalStep:
        if delta == 0 and self.induction.w > 1:
            if t_start not in self._agg_steps:
                agg = aggregate_window(self.tg, t_start - self.induction.w + 1, self.induction.w)
                self._agg_steps[t_start] = self._make_step(agg)
            return self._agg_steps[t_start]
        tau = t_start + delta
        if tau not in self._snap_steps:
            self._snap_steps[tau] = self._make_step(self.tg[tau].attrs)
        return self._snap_steps[tau]

    def adjacency(self, t_start: int) -> Adjacency:
        self._check_start(t_start)
        if t_start not in self._adj:
            self._adj[t_start] = frozen_adjacency(self.tg, self.induction, t_start,
                                                  threads=self.threads)
        return self._adj[t_start]

    def window_active(self, t_start: int) -> np.ndarray:
        """Nodes with attribute data somewhere in the training window."""
        if t_start not in self._window_active:
            active = np.zeros(self.tg.n_nodes, dtype=bool)
            for t in range(t_start - self.induction.w + 1, t_start + 1):
                active[list(self.tg[t].attrs)] = True
            self._window_active[t_start] = active
        return self._window_active[t_start]

    def prepare(self) -> None:
        """Materialise every cache the workers read, so they only read shared state."""
        for t in self.starts:
            self.adjacency(t)
            self.window_active(t)
            for d in range(self.tg.T - t + 1):
                self.step(t, d)

    def cell(self, i: int, t_start: int, delta: int) -> tuple[float, float, float, float]:
        """Network, pop, attr and rand scores of node ``i`` for one (t_start, Δ)."""
        st = self.step(t_start, delta)
        n_truth = int(st.n_truth[i])
        if n_truth == 0:
            return (np.nan,) * 4
        cfg, seed = self.model, self.model.seed
        tmask = st.truth[i]
        nbrs = self.adjacency(t_start).neighbors(i)
        nbrs = nbrs[nbrs != i]
        net = bootstrap_score(st.support[nbrs], st.active[nbrs], tmask, n_truth, cfg.bootstrap_p,
                              cfg.n_realizations, stream(seed, "network", i, t_start, delta))
        pop = None
        if self.tg.n_nodes > 1:
            rng = stream(seed, "pop", i, t_start, delta)
            picked = sample_population(self.tg.n_nodes, i, cfg.pop_k, rng)
            pop = bootstrap_score(st.support[picked], st.active[picked], tmask, n_truth,
                                  cfg.bootstrap_p, cfg.n_realizations, rng)
        attr = attr_pool_score(st.pool, self.lm, self.tg.n_attrs, tmask, n_truth,
                               stream(seed, "attr", i, t_start, delta))
        rnd = rand_score(self.lm.n_labels, tmask, n_truth, stream(seed, "rand", i, t_start, delta))
        return tuple(np.nan if v is None else float(v) for v in (net, pop, attr, rnd))

    def interval_cells(self, i: int, t_start: int) -> np.ndarray:
        """``(T - t_start + 1) x 4`` array of all cells of one interval, batched over Δ.

        Produces the same values as calling :meth:`cell` for every Δ.
        """
        self._check_start(t_start)
        cfg, seed, n = self.model, self.model.seed, self.tg.n_nodes
        steps = [self.step(t_start, d) for d in range(self.tg.T - t_start + 1)]
        out = np.full((len(steps), 4), np.nan)
        n_truth = np.array([st.n_truth[i] for st in steps])
        live = np.flatnonzero(n_truth > 0).tolist()
        if not live:
            return out
        tmask = np.stack([steps[d].truth[i] for d in live])
        nt = n_truth[live]
        nbrs = self.adjacency(t_start).neighbors(i)
        nbrs = nbrs[nbrs != i]
        if nbrs.size:
            rows = np.stack([steps[d].support[nbrs] for d in live])
            act = np.stack([steps[d].active[nbrs] for d in live])
            rngs = [stream(seed, "network", i, t_start, d) for d in live]
            out[live, 0] = bootstrap_scores(rows, act, tmask, nt, cfg.bootstrap_p,
                                            cfg.n_realizations, rngs)
        if n > 1:
            rngs = [stream(seed, "pop", i, t_start, d) for d in live]
            picked = [sample_population(n, i, cfg.pop_k, rng) for rng in rngs]
            rows = np.stack([steps[d].support[pk] for d, pk in zip(live, picked)])
            act = np.stack([steps[d].active[pk] for d, pk in zip(live, picked)])
            out[live, 1] = bootstrap_scores(rows, act, tmask, nt, cfg.bootstrap_p,
                                            cfg.n_realizations, rngs)
        for row, d in enumerate(live):
            st = steps[d]
            a = attr_pool_score(st.pool, self.lm, self.tg.n_attrs, tmask[row], int(nt[row]),
                                stream(seed, "attr", i, t_start, d))
            out[d, 2] = np.nan if a is None else a
            out[d, 3] = rand_score(self.lm.n_labels, tmask[row], int(nt[row]),
                                   stream(seed, "rand", i, t_start, d))
        return out

    def interval(self, i: int, t_start: int) -> PredictionInterval:
        cells = self.interval_cells(i, t_start)
        return PredictionInterval(i, t_start, cells[:, 0],
                                  {name: cells[:, c] for c, name in enumerate(SCORE_COLUMNS[1:], 1)})

    def _node_rows(self, i: int) -> list[tuple]:
        rows = []
        for t in self.starts:
            if not self.window_active(t)[i]:
                continue
            for d, vals in enumerate(self.interval_cells(i, t).tolist()):
                rows.append((i, t, d, *vals))
        return rows

    def measure(self, nodes: Iterable[int] | None = None) -> "IntervalStore":
        """Evaluate every interval of every node observed in its training window."""
        self.prepare()
        nodes = sorted(range(self.tg.n_nodes) if nodes is None else set(nodes))
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                per_node = list(pool.map(self._node_rows, nodes, chunksize=8))
        else:
            per_node = [self._node_rows(i) for i in nodes]
        rows = [r for chunk in per_node for r in chunk]
        return IntervalStore.from_rows(rows, T=self.tg.T, w=self.induction.w,
                                       nodes=self.tg.nodes.names)


def build_interval(tg: TemporalGraph, induction: InductionConfig, model: ModelConfig,
                   lm: LabelMap, i: int, t_start: int) -> PredictionInterval:
    """Single prediction interval for node ``i`` trained on the window ending at ``t_start``."""
    return IntervalEngine(tg, lm, induction, model).interval(i, t_start)


def expect_trajectory(intervals: Sequence[PredictionInterval], T: int | None = None) -> NodeTrajectory:
    """Align intervals at their start and average each Δ over non-null entries."""
    if not intervals:
        raise DataError("expect_trajectory needs at least one interval")
    nodes = {iv.node for iv in intervals}
    if len(nodes) != 1:
        raise DataError("intervals belong to different nodes")
    length = max(len(iv) for iv in intervals) if T is None else T + 1
    block = np.full((len(intervals), length), np.nan)
    for r, iv in enumerate(intervals):
        block[r, :len(iv)] = iv.scores
    means, counts = nan_shifted_mean(block)
    return NodeTrajectory(nodes.pop(), means, counts)


def reference_distribution(trajectories: Mapping[int, NodeTrajectory], S: Iterable[int],
                           delta: int) -> ReferenceDistribution:
    values = []
    for i in sorted(S):
        traj = trajectories.get(i)
        if traj is not None and delta < traj.expected.size and not np.isnan(traj.expected[delta]):
            values.append(traj.expected[delta])
    return ReferenceDistribution(delta, np.array(values, dtype=np.float64))


class IntervalStore:
    """Columnar store of interval cells: (node, t_start, delta, score, pop, attr, rand).

    Rows are kept sorted by (node, t_start, delta); NaN marks null scores and
    the ``null`` column mirrors the network score's null flag.
    """

    def __init__(self, cols: Mapping[str, np.ndarray], T: int, w: int, nodes: Sequence[str],
                 meta: dict | None = None):
        self.cols = {k: np.asarray(v) for k, v in cols.items()}
        self.T = int(T)
        self.w = int(w)
        self.nodes = tuple(nodes)
        self.meta = dict(meta or {})
        order = np.lexsort((self.cols["delta"], self.cols["t_start"], self.cols["node"]))
        if not np.array_equal(order, np.arange(order.size)):
            self.cols = {k: v[order] for k, v in self.cols.items()}

    @classmethod
    def from_rows(cls, rows: Sequence[tuple], T: int, w: int, nodes: Sequence[str],
                  meta: dict | None = None) -> "IntervalStore":
        arr = np.array(rows, dtype=np.float64).reshape(-1, 7)
        cols = {
            "node": arr[:, 0].astype(np.int32),
            "t_start": arr[:, 1].astype(np.int32),
            "delta": arr[:, 2].astype(np.int32),
            "score": arr[:, 3],
            "null": np.isnan(arr[:, 3]).astype(np.uint8),
            "pop": arr[:, 4],
            "attr": arr[:, 5],
            "rand": arr[:, 6],
        }
        return cls(cols, T, w, nodes, meta)

    def __len__(self) -> int:
        return int(self.cols["node"].size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalStore):
            return NotImplemented
        return (self.T == other.T and self.w == other.w and self.nodes == other.nodes
                and all(np.array_equal(self.cols[k], other.cols[k], equal_nan=k not in ("node", "t_start", "delta", "null"))
                        for k in self.cols))

    def node_ids(self) -> np.ndarray:
        return np.unique(self.cols["node"])

    def cube(self, column: str = "score") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense ``(node, t_start, Δ)`` array of one score column.

        Returns ``(node_ids, starts, cube)`` with NaN for absent cells.
        """
        node_ids = self.node_ids()
        starts = np.unique(self.cols["t_start"])
        cube = np.full((node_ids.size, starts.size, self.T + 1), np.nan)
        ni = np.searchsorted(node_ids, self.cols["node"])
        si = np.searchsorted(starts, self.cols["t_start"])
        cube[ni, si, self.cols["delta"]] = self.cols[column]
        return node_ids, starts, cube

    def intervals(self, node: int) -> list[PredictionInterval]:
        sel = self.cols["node"] == node
        out = []
        for t in np.unique(self.cols["t_start"][sel]).tolist():
            rows = sel & (self.cols["t_start"] == t)
            d = self.cols["delta"][rows]
            scores = np.full(self.T - t + 1, np.nan)
            scores[d] = self.cols["score"][rows]
            base = {}
            for name in SCORE_COLUMNS[1:]:
                b = np.full(self.T - t + 1, np.nan)
                b[d] = self.cols[name][rows]
                base[name] = b
            out.append(PredictionInterval(int(node), int(t), scores, base))
        return out

    def trajectories(self, column: str = "score") -> dict[int, NodeTrajectory]:
        node_ids, _, cube = self.cube(column)
        out = {}
        for r, node in enumerate(node_ids.tolist()):
            means, counts = nan_shifted_mean(cube[r])
            out[node] = NodeTrajectory(node, means, counts)
        return out

    def save(self, path) -> None:
        header = {"version": 1, "T": self.T, "w": self.w, "nodes": list(self.nodes),
                  "meta": self.meta}
        formats.write_bytes(path, formats.encode_intervals(header, self.cols))

    @classmethod
    def load(cls, path) -> "IntervalStore":
        header, cols = formats.decode_intervals(Path(path).read_bytes())
        return cls(cols, header["T"], header["w"], header["nodes"], header.get("meta"))

    def to_csv(self, path) -> None:
        """Export network scores with header ``node,t_start,delta,score`` (empty = null)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["node", "t_start", "delta", "score"])
            for n, t, d, s in zip(self.cols["node"].tolist(), self.cols["t_start"].tolist(),
                                  self.cols["delta"].tolist(), self.cols["score"].tolist()):
                writer.writerow([self.nodes[n], t, d, "" if s != s else repr(s)])


def s_complete_cohort(store: IntervalStore, s: int) -> list[int]:
    """Nodes with at least one interval whose network scores are non-null over Δ = 0..s."""
    if s < 0:
        raise DataError("s must be >= 0")
    if s > store.T:
        return []
    node_ids, _, cube = store.cube("score")
    complete = (~np.isnan(cube[:, :, :s + 1])).all(axis=2).any(axis=1)
    return node_ids[complete].tolist()
