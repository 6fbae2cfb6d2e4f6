"""Time-binned attributed graphs and attribute -> label derivation."""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, WindowError

LabelSet = tuple  # sorted, deduplicated tuple of label ids


class Dictionary:
    """Bijection between string identifiers and dense indices ``[0, n)``."""

    __slots__ = ("_names", "_index")

    def __init__(self, names: Iterable[str]):
        self._names = tuple(str(n) for n in names)
        self._index = {n: i for i, n in enumerate(self._names)}
        if len(self._index) != len(self._names):
            raise DataError("duplicate identifiers in dictionary")

    @classmethod
    def from_unsorted(cls, names: Iterable[str]) -> "Dictionary":
        return cls(sorted(set(names)))

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown identifier {name!r}") from None

    def name(self, i: int) -> str:
        return self._names[i]

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Dictionary) and self._names == other._names

    def __repr__(self) -> str:
        return f"Dictionary(<{len(self)} names>)"


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Nonnegative sparse vector with strictly increasing ids and positive weights."""

    ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if ids.ndim != 1 or ids.shape != weights.shape:
            raise DataError("SparseVector ids/weights must be equal-length 1-d arrays")
        if ids.size and np.any(np.diff(ids) <= 0):
            raise DataError("SparseVector ids must be strictly increasing")
        if weights.size and not np.all(weights > 0):
            raise DataError("SparseVector weights must be positive")
        ids.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, np.int64), np.empty(0, np.float64))

    @classmethod
    def from_dict(cls, entries: Mapping[int, float]) -> "SparseVector":
        """Build from ``{id: weight}``; zero weights are dropped."""
        items = sorted((int(k), float(v)) for k, v in entries.items() if v != 0)
        if not items:
            return cls.empty()
        ids, weights = zip(*items)
        return cls(np.array(ids), np.array(weights))

    def to_dict(self) -> dict[int, float]:
        return dict(zip(self.ids.tolist(), self.weights.tolist()))

    def __len__(self) -> int:
        return int(self.ids.size)

    def __bool__(self) -> bool:
        return self.ids.size > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.ids.tobytes(), self.weights.tobytes()))

    def __add__(self, other: "SparseVector") -> "SparseVector":
        if not other:
            return self
        if not self:
            return other
        ids = np.union1d(self.ids, other.ids)
        weights = np.zeros(ids.size)
        weights[np.searchsorted(ids, self.ids)] += self.weights
        weights[np.searchsorted(ids, other.ids)] += other.weights
        return SparseVector(ids, weights)

    def __repr__(self) -> str:
        return f"SparseVector({self.to_dict()})"


def _freeze_adjacency(edges: Mapping[int, Iterable[int]]) -> Mapping[int, np.ndarray]:
    out = {}
    for node, nbrs in edges.items():
        arr = np.unique(np.asarray(list(nbrs) if not isinstance(nbrs, np.ndarray) else nbrs,
                                   dtype=np.int64))
        if arr.size:
            arr.flags.writeable = False
            out[int(node)] = arr
    return MappingProxyType(dict(sorted(out.items())))


@dataclass(frozen=True)
class Snapshot:
    """Attributes and edges of one timestep.

    Nodes without data are simply absent from ``attrs``; adjacency lists are
    sorted and deduplicated on construction.
    """

    t: int
    attrs: Mapping[int, SparseVector]
    edges: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        attrs = {int(k): v for k, v in sorted(self.attrs.items()) if v}
        object.__setattr__(self, "attrs", MappingProxyType(attrs))
        object.__setattr__(self, "edges", _freeze_adjacency(self.edges))

    def neighbors(self, node: int) -> np.ndarray:
        return self.edges.get(node, np.empty(0, np.int64))


class TemporalGraph:
    """Contiguous sequence of snapshots ``0..T`` over shared dictionaries."""

    def __init__(self, nodes: Dictionary, attributes: Dictionary,
                 snapshots: Sequence[Snapshot]):
        if not snapshots:
            raise DataError("a temporal graph needs at least one snapshot")
        self.nodes = nodes
        self.attributes = attributes
        self.snapshots = tuple(snapshots)
        n, a = len(nodes), len(attributes)
        for t, snap in enumerate(self.snapshots):
            if snap.t != t:
                raise DataError(f"snapshot index {snap.t} at position {t}: not contiguous")
            for node, vec in snap.attrs.items():
                if not 0 <= node < n:
                    raise DataError(f"snapshot {t}: node index {node} out of range")
                if vec and (vec.ids[0] < 0 or vec.ids[-1] >= a):
                    raise DataError(f"snapshot {t}: attribute id out of range")
            for node, nbrs in snap.edges.items():
                if not 0 <= node < n or (nbrs.size and (nbrs[0] < 0 or nbrs[-1] >= n)):
                    raise DataError(f"snapshot {t}: edge endpoint out of range")
        self._csr: dict[int, sp.csr_matrix] = {}

    @property
    def T(self) -> int:
        return len(self.snapshots) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_attrs(self) -> int:
        return len(self.attributes)

    def __getitem__(self, t: int) -> Snapshot:
        return self.snapshots[t]

    def __len__(self) -> int:
        return len(self.snapshots)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        if self.nodes != other.nodes or self.attributes != other.attributes:
            return False
        if len(self) != len(other):
            return False
        for a, b in zip(self.snapshots, other.snapshots):
            if dict(a.attrs) != dict(b.attrs):
                return False
            if a.edges.keys() != b.edges.keys():
                return False
            if any(not np.array_equal(a.edges[k], b.edges[k]) for k in a.edges):
                return False
        return True

    def attr_matrix(self, t: int) -> sp.csr_matrix:
        """Snapshot ``t`` as an ``n_nodes x n_attrs`` CSR matrix (cached)."""
        if t not in self._csr:
            self._csr[t] = vectors_to_csr(self.snapshots[t].attrs, self.n_nodes, self.n_attrs)
        return self._csr[t]

    def total_weight(self) -> float:
        return float(sum(v.weights.sum() for s in self.snapshots for v in s.attrs.values()))


def vectors_to_csr(vectors: Mapping[int, SparseVector], n_rows: int, n_cols: int) -> sp.csr_matrix:
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    for node, vec in vectors.items():
        indptr[node + 1] = len(vec)
    np.cumsum(indptr, out=indptr)
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1], dtype=np.float64)
    for node, vec in vectors.items():
        indices[indptr[node]:indptr[node + 1]] = vec.ids
        data[indptr[node]:indptr[node + 1]] = vec.weights
    m = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))
    m.has_sorted_indices = True
    return m


def check_window(tg: TemporalGraph, t_start: int, w: int) -> None:
    if w < 1 or t_start < 0 or t_start + w > tg.T + 1:
        raise WindowError(f"window [{t_start}, {t_start + w}) outside [0, {tg.T + 1})")


def aggregate_window(tg: TemporalGraph, t_start: int, w: int) -> dict[int, SparseVector]:
    """Per-node elementwise sum of attribute vectors over ``[t_start, t_start + w)``."""
    check_window(tg, t_start, w)
    out: dict[int, SparseVector] = {}
    for t in range(t_start, t_start + w):
        for node, vec in tg[t].attrs.items():
            prev = out.get(node)
            out[node] = vec if prev is None else prev + vec
    return dict(sorted(out.items()))


class LabelMap:
    """Mapping from attribute ids to label ids, with a derivation threshold.

    ``attr_to_labels=None`` selects identity mode: every attribute is its own
    label and the label dictionary is the attribute dictionary.
    """

    def __init__(self, labels: Dictionary, attr_to_labels: Sequence[Iterable[int]] | None,
                 threshold: int = 0):
        if threshold < 0:
            raise DataError("label threshold must be non-negative")
        self.labels = labels
        self.threshold = int(threshold)
        if attr_to_labels is None:
            self.attr_to_labels = None
        else:
            mapped = tuple(tuple(sorted(set(int(l) for l in ls))) for ls in attr_to_labels)
            for ls in mapped:
                if ls and (ls[0] < 0 or ls[-1] >= len(labels)):
                    raise DataError("label map references an unknown label id")
            self.attr_to_labels = mapped
        self._incidence = None

    @classmethod
    def identity(cls, attributes: Dictionary) -> "LabelMap":
        return cls(attributes, None, 0)

    @property
    def is_identity(self) -> bool:
        return self.attr_to_labels is None

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def labels_of(self, attr: int) -> tuple[int, ...]:
        if self.attr_to_labels is None:
            return (attr,)
        if attr >= len(self.attr_to_labels):
            return ()
        return self.attr_to_labels[attr]

    def with_threshold(self, threshold: int) -> "LabelMap":
        return LabelMap(self.labels, self.attr_to_labels, threshold)

    def incidence(self, n_attrs: int) -> sp.csr_matrix:
        """``n_attrs x n_labels`` 0/1 matrix of the mapping."""
        if self._incidence is not None and self._incidence.shape[0] == n_attrs:
            return self._incidence
        if self.attr_to_labels is None:
            m = sp.identity(n_attrs, dtype=np.float64, format="csr")
        else:
            if n_attrs < len(self.attr_to_labels):
                raise DataError("label map covers more attributes than the graph")
            rows, cols = [], []
            for a, ls in enumerate(self.attr_to_labels):
                rows.extend([a] * len(ls))
                cols.extend(ls)
            m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                              shape=(n_attrs, self.n_labels))
            m.sort_indices()
        self._incidence = m
        return m

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabelMap) and self.labels == other.labels
                and self.attr_to_labels == other.attr_to_labels
                and self.threshold == other.threshold)


def derive_labels(attrs: SparseVector, lm: LabelMap) -> LabelSet:
    """Labels backed by strictly more than ``lm.threshold`` distinct attributes."""
    if not attrs:
        return ()
    if lm.is_identity:
        return tuple(attrs.ids.tolist())
    counts: dict[int, int] = {}
    for a in attrs.ids.tolist():
        for label in lm.labels_of(a):
            counts[label] = counts.get(label, 0) + 1
    return tuple(sorted(label for label, c in counts.items() if c > lm.threshold))


def label_support(attrs: SparseVector, lm: LabelMap) -> dict[int, float]:
    """Summed attribute weight per label; zero-support labels are omitted."""
    support: dict[int, float] = {}
    for a, wgt in zip(attrs.ids.tolist(), attrs.weights.tolist()):
        for label in lm.labels_of(a):
            support[label] = support.get(label, 0.0) + wgt
    return dict(sorted(support.items()))


def support_matrix(x: sp.csr_matrix, lm: LabelMap) -> np.ndarray:
    """Row-wise :func:`label_support` as a dense ``n x n_labels`` array."""
    return np.asarray((x @ lm.incidence(x.shape[1])).todense())


def truth_matrix(x: sp.csr_matrix, lm: LabelMap) -> np.ndarray:
    """Row-wise :func:`derive_labels` as a boolean ``n x n_labels`` array."""
    present = x.copy()
    present.data = np.ones_like(present.data)
    if lm.is_identity:
        return np.asarray(present.todense()) > 0
    counts = np.asarray((present @ lm.incidence(x.shape[1])).todense())
    return counts > lm.threshold
