"""Synthetic dynamic attributed graphs with controllable drift.

Each community prefers a block of attributes (sparse Dirichlet weights plus a
small uniform background).  Nodes emit ``m`` unit-weight attribute events per
step by inverse-CDF sampling of their current preference.  The uniforms are
drawn once per node and reused at every step (common random numbers), so:

* ``static`` replays identical per-step vectors,
* ``drift`` with rho=0 is bit-identical to ``static``,
* ``reshuffle`` changes a node's vector only through its community.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingestion import AttributeEvent, BinningConfig, bin_events, build_labelmap
from .temporal_graph import LabelMap, TemporalGraph

REGIMES = ("static", "drift", "reshuffle")


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 300
    n_attrs: int = 200
    n_labels: int = 200
    n_steps: int = 20
    n_communities: int = 10
    regime: str = "static"
    rho: float = 0.0
    m: int = 20
    seed: int = 0
    alpha: float = 0.1
    background: float = 0.05

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        if not 0 <= self.rho <= 1:
            raise ConfigError("rho must be in [0, 1]")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if not 1 <= self.n_communities <= self.n_nodes:
            raise ConfigError("need 1 <= n_communities <= n_nodes")
        if self.n_communities > self.n_attrs or self.n_labels > self.n_attrs:
            raise ConfigError("n_communities and n_labels must not exceed n_attrs")
        if self.n_steps < 2:
            raise ConfigError("n_steps must be >= 2")
        if self.n_nodes < 1 or self.n_labels < 1:
            raise ConfigError("sizes must be positive")
        if not 0 <= self.background < 1 or self.alpha <= 0:
            raise ConfigError("invalid alpha/background")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**d)


def _names(prefix: str, n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


class _Model:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        blocks = np.array_split(np.arange(cfg.n_attrs), cfg.n_communities)
        uniform = np.full(cfg.n_attrs, 1.0 / cfg.n_attrs)
        prefs = np.zeros((cfg.n_communities, cfg.n_attrs))
        for c, block in enumerate(blocks):
            prefs[c, block] = rng.dirichlet(np.full(block.size, cfg.alpha))
        self.base = (1 - cfg.background) * prefs + cfg.background * uniform
        self.uniform = uniform
        communities = np.empty((cfg.n_steps, cfg.n_nodes), dtype=np.int64)
        communities[0] = rng.permutation(np.arange(cfg.n_nodes) % cfg.n_communities)
        for t in range(1, cfg.n_steps):
            if cfg.regime == "reshuffle":
                communities[t] = rng.integers(cfg.n_communities, size=cfg.n_nodes)
            else:
                communities[t] = communities[0]
        self.communities = communities
        self.uniforms = rng.random((cfg.n_nodes, cfg.m))

    def preferences(self, t: int) -> np.ndarray:
        """Community preference matrix in effect at step ``t``."""
        if self.cfg.regime == "drift":
            keep = (1 - self.cfg.rho) ** t
            return keep * self.base + (1 - keep) * self.uniform
        return self.base

    def draws(self, t: int) -> np.ndarray:
        """``n_nodes x m`` attribute indices emitted at step ``t``."""
        cdf = np.cumsum(self.preferences(t), axis=1)
        out = np.empty((self.cfg.n_nodes, self.cfg.m), dtype=np.int64)
        for i, c in enumerate(self.communities[t].tolist()):
            out[i] = np.searchsorted(cdf[c], self.uniforms[i], side="right")
        return np.minimum(out, self.cfg.n_attrs - 1)


def expected_vectors(cfg: SynthConfig, t: int) -> np.ndarray:
    """Per-node expected attribute distribution at step ``t`` (``n_nodes x n_attrs``)."""
    model = _Model(cfg)
    return model.preferences(t)[model.communities[t]]


def community_assignments(cfg: SynthConfig) -> np.ndarray:
    """``n_steps x n_nodes`` community index per node and step."""
    return _Model(cfg).communities.copy()


def generate(cfg: SynthConfig) -> tuple[list[AttributeEvent], list[tuple[str, list[str]]]]:
    """Attribute events and label-map entries for ``cfg``."""
    model = _Model(cfg)
    nodes = _names("n", cfg.n_nodes)
    attrs = _names("a", cfg.n_attrs)
    labels = _names("L", cfg.n_labels)
    events = []
    offsets = (np.arange(cfg.m) + 0.5) / cfg.m
    for t in range(cfg.n_steps):
        draws = model.draws(t)
        for i in range(cfg.n_nodes):
            for j, a in enumerate(draws[i].tolist()):
                events.append(AttributeEvent(t + float(offsets[j]), nodes[i], attrs[a], 1.0))
    labelmap = []
    for l, block in enumerate(np.array_split(np.arange(cfg.n_attrs), cfg.n_labels)):
        for a in block.tolist():
            labelmap.append((attrs[a], [labels[l]]))
    labelmap.sort()
    return events, labelmap


def binning_for(cfg: SynthConfig) -> BinningConfig:
    return BinningConfig(n_intervals=cfg.n_steps, t_min=0.0, t_max=float(cfg.n_steps))


# One label per attribute by default, so any observed attribute is a label and
# Jaccard scores at a fixed step spread over many values instead of saturating.
DEFAULT_LABEL_THRESHOLD = 0


def generate_graph(cfg: SynthConfig,
                   label_threshold: int = DEFAULT_LABEL_THRESHOLD) -> tuple[TemporalGraph, LabelMap]:
    """In-memory equivalent of writing the synth files and ingesting them."""
    events, labelmap = generate(cfg)
    tg = bin_events(events, (), binning_for(cfg), extra_attrs=[a for a, _ in labelmap])
    return tg, build_labelmap(labelmap, tg.attributes, label_threshold)


def write(cfg: SynthConfig, out_dir) -> dict[str, Path]:
    """Write ``events.jsonl``, ``labelmap.jsonl`` and ``synth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events, labelmap = generate(cfg)
    paths = {"events": out / "events.jsonl", "labelmap": out / "labelmap.jsonl",
             "synth": out / "synth.json"}
    with open(paths["events"], "w") as fh:
        for ev in events:
            fh.write(json.dumps({"time": ev.time, "node": ev.node, "attr": ev.attr,
                                 "weight": ev.weight}) + "\n")
    with open(paths["labelmap"], "w") as fh:
        for attr, labels in labelmap:
            fh.write(json.dumps({"attr": attr, "labels": labels}) + "\n")
    binning = binning_for(cfg)
    meta = {"synth": asdict(cfg),
            "binning": {"n_intervals": binning.n_intervals, "t_min": binning.t_min,
                        "t_max": binning.t_max},
            "label_threshold": DEFAULT_LABEL_THRESHOLD}
    paths["synth"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths
