import gzip
import json
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pshadow.errors import ConfigError, DataError
from pshadow.ingestion import (AttributeEvent, BinningConfig, EdgeEvent, IngestStats, bin_events,
                               bin_index, cap_degree, ingest, parse_time, total_weight_check)
from pshadow.temporal_graph import Snapshot


def test_bin_index_examples():
    cfg = BinningConfig(n_intervals=50, t_min=0.0, t_max=100.0)
    assert bin_index(84.9, cfg, 0.0, 100.0) == 42
    assert bin_index(100.0, cfg, 0.0, 100.0) == 49
    assert bin_index(0.0, cfg, 0.0, 100.0) == 0
    assert bin_index(100.5, cfg, 0.0, 100.0) is None


def test_bin_index_explicit_edges():
    cfg = BinningConfig(bin_edges=[0, 10, 30, 31])
    assert [bin_index(x, cfg, 0, 0) for x in (0, 9.99, 10, 30.5, 31)] == [0, 0, 1, 2, 2]
    assert bin_index(-1, cfg, 0, 0) is None


def test_binning_config_validation():
    with pytest.raises(ConfigError):
        BinningConfig(n_intervals=1)
    with pytest.raises(ConfigError):
        BinningConfig(bin_edges=[0, 0, 1])
    with pytest.raises(ConfigError):
        BinningConfig(t_min=5, t_max=5)
    with pytest.raises(ConfigError):
        BinningConfig(out_of_range="drop")


def test_parse_time_formats():
    assert parse_time(12) == 12.0
    assert parse_time("1970-01-01T00:01:00Z") == 60.0
    assert parse_time("1970-01-01T00:01:00") == 60.0
    with pytest.raises(DataError):
        parse_time("yesterday")
    with pytest.raises(DataError):
        parse_time(float("nan"))


def test_repeated_plays_sum():
    ev = [AttributeEvent(1.0, "u", "a"), AttributeEvent(2.0, "u", "a"), AttributeEvent(9.0, "v", "a")]
    tg = bin_events(ev, (), BinningConfig(n_intervals=2, t_min=0, t_max=10))
    u = tg.nodes.index("u")
    assert tg[0].attrs[u].to_dict() == {tg.attributes.index("a"): 2.0}


def _snap_with_edges(edges):
    return Snapshot(0, {}, edges)


def test_cap_degree_keeps_top_tallies():
    snap = _snap_with_edges({0: [1, 2, 3]})
    capped = cap_degree(snap, 2, {0: {1: 5, 2: 5, 3: 1}})
    assert capped.neighbors(0).tolist() == [1, 2]


def test_cap_degree_no_op_and_ties():
    snap = _snap_with_edges({0: [3, 1, 2]})
    assert cap_degree(snap, 3, {}).neighbors(0).tolist() == [1, 2, 3]
    assert cap_degree(snap, 1, {0: {1: 2, 2: 2, 3: 2}}).neighbors(0).tolist() == [1]
    with pytest.raises(ConfigError):
        cap_degree(snap, 0, {})


def test_edges_symmetrised_and_capped():
    ev = [AttributeEvent(0.0, "a", "x"), AttributeEvent(1.0, "b", "x")]
    edges = [EdgeEvent(0.1, "a", "b"), EdgeEvent(0.2, "a", "c"), EdgeEvent(0.3, "a", "c")]
    cfg = BinningConfig(n_intervals=2, t_min=0, t_max=2)
    tg = bin_events(ev, edges, cfg)
    a, b, c = (tg.nodes.index(x) for x in "abc")
    assert tg[0].neighbors(a).tolist() == [b, c]
    assert tg[0].neighbors(b).tolist() == [a]
    capped = bin_events(ev, edges, cfg, degree_cap=1)
    assert capped[0].neighbors(a).tolist() == [c]
    directed = bin_events(ev, edges, cfg, directed=True)
    assert directed[0].neighbors(b).size == 0


events_st = st.lists(st.tuples(st.floats(0, 100, allow_nan=False), st.sampled_from("uvwxy"),
                               st.sampled_from("abcd"), st.floats(0.01, 50, allow_nan=False)),
                     min_size=1, max_size=60)


@given(events_st, st.floats(20, 80))
def test_weight_conservation(raw, t_max):
    ev = [AttributeEvent(t, n, a, w) for t, n, a, w in raw]
    stats = IngestStats()
    cfg = BinningConfig(n_intervals=7, t_min=0.0, t_max=t_max)
    tg = bin_events(ev, (), cfg, stats=stats)
    assert total_weight_check(tg, stats)
    assert stats.skipped_attr == sum(1 for e in ev if e.time > t_max)


@given(events_st, st.randoms(use_true_random=False))
def test_event_order_does_not_matter(raw, rnd):
    ev = [AttributeEvent(t, n, a, w) for t, n, a, w in raw]
    shuffled = list(ev)
    rnd.shuffle(shuffled)
    cfg = BinningConfig(n_intervals=5, t_min=0.0, t_max=100.0)
    assert bin_events(ev, (), cfg) == bin_events(shuffled, (), cfg)


def test_out_of_range_fail_mode():
    ev = [AttributeEvent(5.0, "u", "a"), AttributeEvent(50.0, "u", "a")]
    with pytest.raises(DataError):
        bin_events(ev, (), BinningConfig(n_intervals=2, t_min=0, t_max=10, out_of_range="fail"))


def _write_jsonl(path, records, compress=False):
    text = "".join(json.dumps(r) + "\n" for r in records)
    if compress:
        with gzip.open(path, "wt") as fh:
            fh.write(text)
    else:
        path.write_text(text)


def test_ingest_files_with_labelmap(tmp_path):
    _write_jsonl(tmp_path / "ev.jsonl.gz", [
        {"time": "1970-01-01T00:00:01Z", "node": "u", "attr": "a", "weight": 2},
        {"time": 3, "node": "v", "attr": "b"},
    ], compress=True)
    _write_jsonl(tmp_path / "lm.jsonl", [{"attr": "a", "labels": ["rock"]},
                                         {"attr": "z", "labels": ["rock", "pop"]}])
    tg, lm = ingest(tmp_path / "ev.jsonl.gz", BinningConfig(n_intervals=2),
                    labelmap_path=tmp_path / "lm.jsonl", label_threshold=1)
    assert tg.T == 1 and lm.threshold == 1
    assert set(tg.attributes) == {"a", "b", "z"}
    assert lm.labels.names == ("pop", "rock")
    assert lm.labels_of(tg.attributes.index("z")) == (0, 1)


def test_ingest_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "ev.jsonl"
    path.write_text('{"time": 1, "node": "u", "attr": "a"}\n\n{"time": 2, "node": \n')
    with pytest.raises(DataError, match=":3:"):
        ingest(path, BinningConfig(n_intervals=2))
    path.write_text('{"time": 1, "node": "u"}\n')
    with pytest.raises(DataError, match=":1:"):
        ingest(path, BinningConfig(n_intervals=2))


def test_identity_labelmap_without_file(tmp_path):
    _write_jsonl(tmp_path / "ev.jsonl", [{"time": 0, "node": "u", "attr": "k1"},
                                         {"time": 1, "node": "u", "attr": "k2"}])
    tg, lm = ingest(tmp_path / "ev.jsonl", BinningConfig(n_intervals=2))
    assert lm.is_identity and lm.n_labels == 2


def test_invalid_events():
    with pytest.raises(DataError):
        AttributeEvent(0.0, "u", "a", 0.0)
    with pytest.raises(DataError):
        EdgeEvent(0.0, "u", "u")
    with pytest.raises(DataError):
        bin_events([], (), BinningConfig(n_intervals=2))
