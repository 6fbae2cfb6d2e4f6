"""Binary containers for graphs, frozen adjacencies and interval stores.

graph.bin layout (all integers unsigned LEB128 varints unless noted)::

    b"PSHD1"
    nodes:       count, then (len, utf-8 bytes) per name
    attributes:  same
    labels:      mode byte (0 identity, 1 mapped); if mapped: label names,
                 threshold, then per attribute a delta-encoded label-id row
    snapshots:   count; per snapshot
                   attrs: row count; per row node-delta, nnz, id deltas,
                          nnz little-endian float64 weights
                   edges: row count; per row node-delta, degree, id deltas
    crc32 of everything above (uint32 little-endian)

Row and id deltas are relative to the previous entry (the first is absolute),
so sorted lists encode as small positive numbers.  Weights are stored raw,
which makes the round trip bit-exact.

adj.bin and intervals.bin share a simpler shape: magic, a length-prefixed
JSON header, then raw little-endian numpy columns.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .induction import Adjacency
from .temporal_graph import Dictionary, LabelMap, Snapshot, SparseVector, TemporalGraph

GRAPH_MAGIC = b"PSHD1"
ADJ_MAGIC = b"PSHA1"
INTERVAL_MAGIC = b"PSHI1"


def _put_varint(buf: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varint must be non-negative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def varint(self) -> int:
        shift = result = 0
        data = self.data
        while True:
            if self.pos >= len(data):
                raise DataError("truncated container")
            byte = data[self.pos]
            self.pos += 1
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return result
            shift += 7

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError("truncated container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _put_names(buf: bytearray, names: Sequence[str]) -> None:
    _put_varint(buf, len(names))
    for name in names:
        raw = name.encode("utf-8")
        _put_varint(buf, len(raw))
        buf += raw


def _get_names(r: _Reader) -> list[str]:
    return [r.raw(r.varint()).decode("utf-8") for _ in range(r.varint())]


def _put_deltas(buf: bytearray, ids) -> None:
    prev = -1
    for i in ids:
        _put_varint(buf, i - prev - 1)
        prev = i


def _get_deltas(r: _Reader, n: int) -> list[int]:
    out, prev = [], -1
    for _ in range(n):
        prev = prev + 1 + r.varint()
        out.append(prev)
    return out


def encode_graph(tg: TemporalGraph, lm: LabelMap | None = None) -> bytes:
    buf = bytearray(GRAPH_MAGIC)
    _put_names(buf, tg.nodes.names)
    _put_names(buf, tg.attributes.names)
    if lm is None or lm.is_identity:
        buf.append(0)
    else:
        buf.append(1)
        _put_names(buf, lm.labels.names)
        _put_varint(buf, lm.threshold)
        rows = list(lm.attr_to_labels) + [()] * (tg.n_attrs - len(lm.attr_to_labels))
        for labels in rows:
            _put_varint(buf, len(labels))
            _put_deltas(buf, labels)
    _put_varint(buf, len(tg))
    for snap in tg.snapshots:
        _put_varint(buf, len(snap.attrs))
        nodes = list(snap.attrs)
        for node, prev in zip(nodes, [-1] + nodes[:-1]):
            vec = snap.attrs[node]
            _put_varint(buf, node - prev - 1)
            _put_varint(buf, len(vec))
            _put_deltas(buf, vec.ids.tolist())
            buf += vec.weights.astype("<f8").tobytes()
        _put_varint(buf, len(snap.edges))
        nodes = list(snap.edges)
        for node, prev in zip(nodes, [-1] + nodes[:-1]):
            nbrs = snap.edges[node]
            _put_varint(buf, node - prev - 1)
            _put_varint(buf, nbrs.size)
            _put_deltas(buf, nbrs.tolist())
    buf += struct.pack("<I", zlib.crc32(buf))
    return bytes(buf)


def decode_graph(data: bytes) -> tuple[TemporalGraph, LabelMap]:
    if not data.startswith(GRAPH_MAGIC):
        raise DataError("not a graph container (bad magic)")
    if len(data) < len(GRAPH_MAGIC) + 4:
        raise DataError("truncated container")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise DataError("graph container checksum mismatch")
    r = _Reader(body, len(GRAPH_MAGIC))
    nodes = Dictionary(_get_names(r))
    attributes = Dictionary(_get_names(r))
    mode = r.raw(1)[0]
    if mode == 0:
        lm = LabelMap.identity(attributes)
    elif mode == 1:
        labels = Dictionary(_get_names(r))
        threshold = r.varint()
        rows = [_get_deltas(r, r.varint()) for _ in range(len(attributes))]
        lm = LabelMap(labels, rows, threshold)
    else:
        raise DataError(f"unknown label mode {mode}")
    snapshots = []
    for t in range(r.varint()):
        attrs, node = {}, -1
        for _ in range(r.varint()):
            node = node + 1 + r.varint()
            nnz = r.varint()
            ids = _get_deltas(r, nnz)
            weights = np.frombuffer(r.raw(8 * nnz), dtype="<f8").astype(np.float64)
            attrs[node] = SparseVector(np.array(ids, dtype=np.int64), weights)
        edges, node = {}, -1
        for _ in range(r.varint()):
            node = node + 1 + r.varint()
            edges[node] = _get_deltas(r, r.varint())
        snapshots.append(Snapshot(t, attrs, edges))
    if r.pos != len(body):
        raise DataError("trailing bytes in graph container")
    return TemporalGraph(nodes, attributes, snapshots), lm


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_graph(path, tg: TemporalGraph, lm: LabelMap | None = None) -> None:
    _atomic_write(path, encode_graph(tg, lm))


def load_graph(path) -> tuple[TemporalGraph, LabelMap]:
    return decode_graph(Path(path).read_bytes())


def _encode_columns(magic: bytes, header: dict, columns: Sequence[tuple[str, np.ndarray]]) -> bytes:
    header = dict(header)
    header["columns"] = [[name, arr.dtype.newbyteorder("<").str, int(arr.size)]
                         for name, arr in columns]
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, struct.pack("<I", len(raw)), raw]
    parts += [np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
              for _, arr in columns]
    return b"".join(parts)


def _decode_columns(magic: bytes, data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(magic):
        raise DataError(f"bad magic, expected {magic!r}")
    r = _Reader(data, len(magic))
    (hlen,) = struct.unpack("<I", r.raw(4))
    header = json.loads(r.raw(hlen))
    cols = {}
    for name, dtype, size in header.pop("columns"):
        dt = np.dtype(dtype)
        cols[name] = np.frombuffer(r.raw(dt.itemsize * size), dtype=dt).astype(dt.newbyteorder("="))
    if r.pos != len(data):
        raise DataError("trailing bytes in container")
    return header, cols


def save_adjacencies(path, adjs: dict[int, Adjacency], meta: dict | None = None) -> None:
    """Write frozen adjacencies keyed by training time ``t0``."""
    header = dict(meta or {})
    header["t0"] = sorted(int(t) for t in adjs)
    cols = []
    for t0 in header["t0"]:
        cols.append((f"indptr_{t0}", adjs[t0].indptr.astype(np.int64)))
        cols.append((f"indices_{t0}", adjs[t0].indices.astype(np.int32)))
    _atomic_write(path, _encode_columns(ADJ_MAGIC, header, cols))


def load_adjacencies(path) -> tuple[dict[int, Adjacency], dict]:
    header, cols = _decode_columns(ADJ_MAGIC, Path(path).read_bytes())
    adjs = {t0: Adjacency(cols[f"indptr_{t0}"], cols[f"indices_{t0}"]) for t0 in header["t0"]}
    return adjs, header


INTERVAL_COLUMNS = (
    ("node", np.int32),
    ("t_start", np.int32),
    ("delta", np.int32),
    ("score", np.float64),
    ("null", np.uint8),
    ("pop", np.float64),
    ("attr", np.float64),
    ("rand", np.float64),
)


def encode_intervals(header: dict, cols: dict[str, np.ndarray]) -> bytes:
    return _encode_columns(INTERVAL_MAGIC, header,
                           [(name, np.asarray(cols[name], dtype=dt)) for name, dt in INTERVAL_COLUMNS])


def decode_intervals(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    header, cols = _decode_columns(INTERVAL_MAGIC, data)
    missing = {name for name, _ in INTERVAL_COLUMNS} - set(cols)
    if missing:
        raise DataError(f"interval store lacks columns {sorted(missing)}")
    return header, cols


def write_bytes(path, data: bytes) -> None:
    _atomic_write(path, data)
