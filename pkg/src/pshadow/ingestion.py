"""Event-log parsing and equal-width time binning into a TemporalGraph."""
from __future__ import annotations

import bisect
import gzip
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .temporal_graph import Dictionary, LabelMap, Snapshot, SparseVector, TemporalGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttributeEvent:
    time: float
    node: str
    attr: str
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise DataError(f"attribute event weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class EdgeEvent:
    time: float
    src: str
    dst: str

    def __post_init__(self):
        if self.src == self.dst:
            raise DataError(f"self-loop edge event on {self.src!r}")


@dataclass
class BinningConfig:
    """Either ``n_intervals`` equal-width bins over ``[t_min, t_max]`` or explicit ``bin_edges``.

    Missing ``t_min``/``t_max`` are taken from the data.
    """

    n_intervals: int | None = 50
    t_min: float | None = None
    t_max: float | None = None
    bin_edges: list[float] | None = None
    out_of_range: str = "skip"

    def __post_init__(self):
        if self.out_of_range not in ("skip", "fail"):
            raise ConfigError("out_of_range must be 'skip' or 'fail'")
        if self.bin_edges is not None:
            edges = [parse_time(e) for e in self.bin_edges]
            if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
                raise ConfigError("bin_edges must be strictly increasing with at least 2 entries")
            self.bin_edges = edges
        elif self.n_intervals is None or self.n_intervals < 2:
            raise ConfigError("n_intervals must be >= 2")
        if self.t_min is not None:
            self.t_min = parse_time(self.t_min)
        if self.t_max is not None:
            self.t_max = parse_time(self.t_max)
        if self.t_min is not None and self.t_max is not None and not self.t_max > self.t_min:
            raise ConfigError("t_max must exceed t_min")

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) - 1 if self.bin_edges is not None else self.n_intervals


@dataclass
class IngestStats:
    attr_events: int = 0
    edge_events: int = 0
    skipped_attr: int = 0
    skipped_edge: int = 0
    input_weight: float = 0.0
    skipped_weight: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def parse_time(value) -> float:
    """Epoch seconds (int/float) or an ISO-8601 string; naive ISO times are UTC."""
    if isinstance(value, bool):
        raise DataError(f"invalid time value {value!r}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise DataError(f"non-finite time {value!r}")
        return float(value)
    if isinstance(value, str):
        s = value.strip()
        try:
            return float(s)
        except ValueError:
            pass
        if s.endswith("Z"):
            s = s[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(s)
        except ValueError:
            raise DataError(f"unparseable time {value!r}") from None
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()
    raise DataError(f"invalid time value {value!r}")


def open_text(path) -> io.TextIOBase:
    """Open a (possibly gzip-compressed) text file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _jsonl(path) -> Iterator[tuple[int, dict]]:
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def read_attribute_events(path) -> Iterator[AttributeEvent]:
    for lineno, rec in _jsonl(path):
        try:
            yield AttributeEvent(parse_time(rec["time"]), str(rec["node"]), str(rec["attr"]),
                                 float(rec.get("weight", 1.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad attribute event ({exc})") from None


def read_edge_events(path) -> Iterator[EdgeEvent]:
    for lineno, rec in _jsonl(path):
        try:
            yield EdgeEvent(parse_time(rec["time"]), str(rec["src"]), str(rec["dst"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad edge event ({exc})") from None


def read_labelmap(path) -> list[tuple[str, list[str]]]:
    out = []
    for lineno, rec in _jsonl(path):
        try:
            labels = rec["labels"]
            if not isinstance(labels, list):
                raise TypeError("labels must be a list")
            out.append((str(rec["attr"]), [str(l) for l in labels]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: bad label map entry ({exc})") from None
    return out


def bin_index(x: float, cfg: BinningConfig, t_min: float, t_max: float) -> int | None:
    """Bin of time ``x``, or None when it falls outside the configured range."""
    if cfg.bin_edges is not None:
        edges = cfg.bin_edges
        if x < edges[0] or x > edges[-1]:
            return None
        return min(bisect.bisect_right(edges, x) - 1, len(edges) - 2)
    if x < t_min or x > t_max:
        return None
    n = cfg.n_intervals
    return min(int(math.floor(n * (x - t_min) / (t_max - t_min))), n - 1)


def cap_degree(snapshot: Snapshot, cap: int,
               tally: Mapping[int, Mapping[int, float]]) -> Snapshot:
    """Keep each node's ``cap`` highest-tally neighbors (ties: ascending node id)."""
    if cap < 1:
        raise ConfigError("degree cap must be >= 1")
    edges = {}
    for node, nbrs in snapshot.edges.items():
        if nbrs.size <= cap:
            edges[node] = nbrs
            continue
        scores = tally.get(node, {})
        ranked = sorted(nbrs.tolist(), key=lambda j: (-scores.get(j, 0), j))
        edges[node] = sorted(ranked[:cap])
    return Snapshot(snapshot.t, snapshot.attrs, edges)


def bin_events(attr_events: Iterable[AttributeEvent], edge_events: Iterable[EdgeEvent],
               cfg: BinningConfig, *, extra_attrs: Iterable[str] = (),
               degree_cap: int | None = None, directed: bool = False,
               stats: IngestStats | None = None) -> TemporalGraph:
    """Bin attribute and edge events into a :class:`TemporalGraph`.

    Weights are summed per ``(node, attr, bin)`` with an exactly rounded sum so
    the result does not depend on event order.  Edge events are symmetrised
    unless ``directed``; duplicates within a bin collapse, and their
    multiplicity is the tally used by ``degree_cap``.
    """
    stats = stats if stats is not None else IngestStats()
    attr_events = list(attr_events)
    edge_events = list(edge_events)
    if not attr_events:
        raise DataError("attribute event stream is empty")
    stats.attr_events += len(attr_events)
    stats.edge_events += len(edge_events)

    t_min, t_max = cfg.t_min, cfg.t_max
    if cfg.bin_edges is None and (t_min is None or t_max is None):
        times = [e.time for e in attr_events] + [e.time for e in edge_events]
        t_min = min(times) if t_min is None else t_min
        t_max = max(times) if t_max is None else t_max
        if not t_max > t_min:
            raise DataError("event times span a zero-length range")
    n_bins = cfg.n_bins

    weights: list[dict[tuple[str, str], list[float]]] = [defaultdict(list) for _ in range(n_bins)]
    for ev in attr_events:
        stats.input_weight += ev.weight
        b = bin_index(ev.time, cfg, t_min, t_max)
        if b is None:
            if cfg.out_of_range == "fail":
                raise DataError(f"attribute event at time {ev.time} outside binning range")
            stats.skipped_attr += 1
            stats.skipped_weight += ev.weight
            continue
        weights[b][(ev.node, ev.attr)].append(ev.weight)

    tallies: list[dict[tuple[str, str], int]] = [defaultdict(int) for _ in range(n_bins)]
    for ev in edge_events:
        b = bin_index(ev.time, cfg, t_min, t_max)
        if b is None:
            if cfg.out_of_range == "fail":
                raise DataError(f"edge event at time {ev.time} outside binning range")
            stats.skipped_edge += 1
            continue
        tallies[b][(ev.src, ev.dst)] += 1
        if not directed:
            tallies[b][(ev.dst, ev.src)] += 1

    node_names = {e.node for e in attr_events}
    node_names.update(e.src for e in edge_events)
    node_names.update(e.dst for e in edge_events)
    nodes = Dictionary.from_unsorted(node_names)
    attributes = Dictionary.from_unsorted({e.attr for e in attr_events} | set(extra_attrs))

    snapshots = []
    for b in range(n_bins):
        rows: dict[int, dict[int, float]] = defaultdict(dict)
        for (node, attr), ws in weights[b].items():
            rows[nodes.index(node)][attributes.index(attr)] = math.fsum(ws)
        attrs = {node: SparseVector.from_dict(entries) for node, entries in rows.items()}
        adj: dict[int, set[int]] = defaultdict(set)
        tally: dict[int, dict[int, int]] = defaultdict(dict)
        for (src, dst), count in tallies[b].items():
            i, j = nodes.index(src), nodes.index(dst)
            adj[i].add(j)
            tally[i][j] = count
        snap = Snapshot(b, attrs, {i: sorted(js) for i, js in adj.items()})
        if degree_cap is not None:
            snap = cap_degree(snap, degree_cap, tally)
        snapshots.append(snap)
    if stats.skipped_attr or stats.skipped_edge:
        log.info("skipped %d attribute and %d edge events outside the time range",
                 stats.skipped_attr, stats.skipped_edge)
    return TemporalGraph(nodes, attributes, snapshots)


def build_labelmap(entries: Sequence[tuple[str, Sequence[str]]] | None,
                   attributes: Dictionary, threshold: int) -> LabelMap:
    """Label map over ``attributes``; ``entries=None`` selects identity mode."""
    if entries is None:
        return LabelMap.identity(attributes)
    labels = Dictionary.from_unsorted(l for _, ls in entries for l in ls)
    mapping: list[set[int]] = [set() for _ in range(len(attributes))]
    for attr, ls in entries:
        mapping[attributes.index(attr)].update(labels.index(l) for l in ls)
    return LabelMap(labels, mapping, threshold)


def ingest(events_path, cfg: BinningConfig, *, edges_path=None, labelmap_path=None,
           label_threshold: int = 5, degree_cap: int | None = None, directed: bool = False,
           stats: IngestStats | None = None) -> tuple[TemporalGraph, LabelMap]:
    """Read event files and return the binned graph with its label map."""
    entries = read_labelmap(labelmap_path) if labelmap_path else None
    edge_events = read_edge_events(edges_path) if edges_path else ()
    tg = bin_events(read_attribute_events(events_path), edge_events, cfg,
                    extra_attrs=[a for a, _ in entries] if entries else (),
                    degree_cap=degree_cap, directed=directed, stats=stats)
    return tg, build_labelmap(entries, tg.attributes, label_threshold)


def total_weight_check(tg: TemporalGraph, stats: IngestStats, rel_tol: float = 1e-9) -> bool:
    """Weight conservation: binned weight equals input weight minus skipped weight."""
    expected = stats.input_weight - stats.skipped_weight
    return bool(np.isclose(tg.total_weight(), expected, rtol=rel_tol, atol=0.0))
