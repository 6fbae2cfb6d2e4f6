"""Frozen evaluation graphs: cosine k-NN over aggregated attributes, or edge unions."""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .temporal_graph import (SparseVector, TemporalGraph, aggregate_window, check_window,
                             vectors_to_csr)


class Adjacency:
    """Directed adjacency in CSR form: ``indices[indptr[i]:indptr[i+1]]`` are i's out-neighbors."""

    def __init__(self, indptr: np.ndarray, indices: np.ndarray):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indptr.ndim != 1 or self.indptr.size < 1 or self.indptr[-1] != self.indices.size:
            raise DataError("malformed adjacency")

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[int]]) -> "Adjacency":
        lens = np.array([len(l) for l in lists], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        indices = (np.concatenate([np.asarray(l, dtype=np.int64) for l in lists])
                   if lists and indptr[-1] else np.empty(0, np.int64))
        return cls(indptr, indices)

    @property
    def n_nodes(self) -> int:
        return self.indptr.size - 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degree(self, i: int) -> int:
        return int(self.indptr[i + 1] - self.indptr[i])

    def to_lists(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.n_nodes)]

    def fingerprint(self) -> int:
        return zlib.crc32(self.indptr.tobytes() + self.indices.tobytes())

    def __eq__(self, other) -> bool:
        return (isinstance(other, Adjacency) and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self) -> str:
        return f"Adjacency(n={self.n_nodes}, edges={self.indices.size})"



@dataclass(frozen=True)
class InductionConfig:
    mode: str = "knn"
    k: int = 20
    w: int = 1

    def __post_init__(self):
        if self.mode not in ("knn", "explicit-union"):
            raise ConfigError(f"unknown induction mode {self.mode!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.w < 1:
            raise ConfigError("window w must be >= 1")


def cosine(x: SparseVector, y: SparseVector) -> float:
    """Cosine similarity of two nonnegative sparse vectors; 0 if either is empty.

    Dot products and squared norms accumulate in ascending attribute order,
    which is the summation order :func:`induce_knn` reproduces in bulk.
    """
    if not x or not y:
        return 0.0
    common, ix, iy = np.intersect1d(x.ids, y.ids, assume_unique=True, return_indices=True)
    dot = 0.0
    for a, b in zip(x.weights[ix].tolist(), y.weights[iy].tolist()):
        dot += a * b
    return dot / (_norm(x) * _norm(y))


def _norm(x: SparseVector) -> float:
    sq = 0.0
    for v in x.weights.tolist():
        sq += v * v
    return float(np.sqrt(sq))


def _knn_block(gram, norms, rows, k):
    block = gram[rows].toarray()
    denom = norms[rows, None] * norms[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, block / np.where(denom > 0, denom, 1.0), 0.0)
    cos[np.arange(len(rows)), rows] = -np.inf
    order = np.argsort(-cos, axis=1, kind="stable")
    return order[:, :k]


def induce_knn(agg: Mapping[int, SparseVector], k: int, n_nodes: int | None = None,
               threads: int = 1, block_size: int = 512) -> Adjacency:
    """Directed cosine k-NN graph over the nodes present in ``agg``.

    Each node keeps the ``k`` other present nodes with the highest cosine
    similarity, ties broken by ascending node id.  Empty vectors have cosine 0
    to everything.  Nodes outside ``agg`` get no out-neighbors and are never
    candidates.  Output lists are stored sorted by node id.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if not agg:
        raise DataError("cannot induce a k-NN graph from an empty aggregate")
    keys = np.array(sorted(agg), dtype=np.int64)
    if n_nodes is None:
        n_nodes = int(keys[-1]) + 1
    n_attrs = max((int(v.ids[-1]) + 1 for v in agg.values() if v), default=1)
    x = vectors_to_csr({pos: agg[int(node)] for pos, node in enumerate(keys)}, keys.size, n_attrs)
    gram = (x @ x.T).tocsr()
    norms = np.sqrt(gram.diagonal())
    kk = min(k, keys.size - 1)
    blocks = [np.arange(s, min(s + block_size, keys.size)) for s in range(0, keys.size, block_size)]
    if kk <= 0:
        picked = [np.empty((len(b), 0), dtype=np.int64) for b in blocks]
    elif threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            picked = list(pool.map(lambda b: _knn_block(gram, norms, b, kk), blocks))
    else:
        picked = [_knn_block(gram, norms, b, kk) for b in blocks]
    lists: list[Sequence[int]] = [()] * n_nodes
    for b, chosen in zip(blocks, picked):
        for pos, row in zip(b.tolist(), chosen):
            lists[int(keys[pos])] = np.sort(keys[row])
    return Adjacency.from_lists(lists)


def union_edges(tg: TemporalGraph, t_start: int, w: int) -> Adjacency:
    """Union of snapshot adjacency over ``[t_start, t_start + w)``."""
    check_window(tg, t_start, w)
    acc: list[set] = [set() for _ in range(tg.n_nodes)]
    for t in range(t_start, t_start + w):
        for node, nbrs in tg[t].edges.items():
            acc[node].update(nbrs.tolist())
    return Adjacency.from_lists([sorted(s) for s in acc])


def frozen_adjacency(tg: TemporalGraph, cfg: InductionConfig, t_end: int,
                     threads: int = 1) -> Adjacency:
    """Adjacency trained on the window ending at ``t_end`` (inclusive)."""
    t_start = t_end - cfg.w + 1
    check_window(tg, t_start, cfg.w)
    if cfg.mode == "explicit-union":
        return union_edges(tg, t_start, cfg.w)
    agg = aggregate_window(tg, t_start, cfg.w)
    if not agg:
        return Adjacency.from_lists([()] * tg.n_nodes)
    return induce_knn(agg, cfg.k, tg.n_nodes, threads=threads)
