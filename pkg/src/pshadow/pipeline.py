"""Resumable end-to-end pipeline and the CSV/JSON report bundle.

Stages run in order and each persists its artifacts in the output directory:

    ingest   graph.bin, ingest.json
    induce   adj.bin
    measure  intervals.bin, intervals.csv
    shadow   shadow.csv, shadow.json
    profile  profile.csv
    lagdiff  lag.csv
    predict  mae.csv
    report   deltas.csv, summary.json

``config.json`` holds the effective configuration (including the seed) and
``stages.json`` records which stages completed under which configuration.
A stage writes ``<stage>.inprogress`` while running; a stale marker means
its artifacts are partial and the stage reruns.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import formats
from .config import PipelineConfig
from .errors import ConfigError, DataError, InvariantError, PShadowError
from .ingestion import IngestStats, ingest
from .intervals import IntervalEngine, IntervalStore
from .predictor import MaeTable, evaluate_mae, make_regressor
from .shadow import ShadowAnalysis, ShadowRecord, analyze, lag_diff_curve, shadow_profile
from . import synth

log = logging.getLogger(__name__)

STAGES = ("ingest", "induce", "measure", "shadow", "profile", "lagdiff", "predict", "report")

OUTPUTS = {
    "ingest": ("graph.bin", "ingest.json"),
    "induce": ("adj.bin",),
    "measure": ("intervals.bin", "intervals.csv"),
    "shadow": ("shadow.csv", "shadow.json"),
    "profile": ("profile.csv",),
    "lagdiff": ("lag.csv",),
    "predict": ("mae.csv",),
    "report": ("deltas.csv", "summary.json"),
}


def fmt(v) -> str:
    """CSV cell: repr for floats (round-trips exactly), empty for null."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    formats.write_bytes(path, buf.getvalue().encode("utf-8"))


def write_json(path, obj) -> None:
    formats.write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_csv(path) -> list[dict[str, str]]:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


# -- stage bodies shared with the CLI ----------------------------------


def shadow_rows(an: ShadowAnalysis, names: Sequence[str]) -> list[tuple]:
    return [(names[r.node], r.shadow_length, r.initial_percentile) for r in an.records]


def shadow_meta(an: ShadowAnalysis, T: int) -> dict:
    return {"s": an.s, "t_ref": an.t_ref, "T": T, "eta": an.eta.as_dict(),
            "cohort_size": len(an.cohort), "excluded": an.excluded,
            "reference_size": len(an.reference)}


def profile_rows(records: Sequence[ShadowRecord]) -> list[tuple]:
    return [(b.shadow_length, b.fraction, b.median_percentile) for b in shadow_profile(records)]


def lag_rows(an: ShadowAnalysis, delta: int) -> list[tuple]:
    curve = lag_diff_curve((an.rank_trajectories[i].ranks for i in an.cohort), delta)
    return [(b.bucket, b.mean_change, b.count) for b in curve]


def prediction_table(an: ShadowAnalysis, T: int, regressor: str, xs: Sequence[int] | None,
                     resamples: int, seed: int, knn_k: int = 5,
                     test_fraction: float = 0.2) -> MaeTable:
    xs = list(range(T + 1)) if xs is None else [int(x) for x in xs]
    bad = [x for x in xs if not 0 <= x <= T]
    if bad:
        raise ConfigError(f"observation lengths {bad} outside [0, {T}]")
    ranks = {i: an.rank_trajectories[i].ranks for i in an.cohort}
    targets = {r.node: r.shadow_length for r in an.records}
    reg = make_regressor(regressor, eta=an.eta.percentile, T=T, k=knn_k)
    return evaluate_mae(reg, ranks, targets, xs, n_resamples=resamples, seed=seed,
                        test_fraction=test_fraction)


def mae_rows(table: MaeTable) -> list[tuple]:
    return table.rows()


def delta_rows(store: IntervalStore, cohort: Sequence[int]) -> list[tuple]:
    trajs = {c: store.trajectories(c) for c in ("score", "pop", "attr", "rand")}
    rows = []
    for i in cohort:
        for d in range(store.T + 1):
            rows.append((store.nodes[i], d, *(float(trajs[c][i].expected[d])
                                              for c in ("score", "pop", "attr", "rand"))))
    return rows


def _moments(values: Sequence[int]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"count": int(arr.size), "mean": float(arr.mean()), "median": float(np.median(arr)),
            "std": float(arr.std()), "min": int(arr.min()), "max": int(arr.max())}


# -- orchestration --------------------------------------------------------


@dataclass
class StageResult:
    name: str
    ran: bool


class Pipeline:
    def __init__(self, cfg: PipelineConfig, threads: int = 1, force: bool = False):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.force = force
        self.out = cfg.out
        self._store: IntervalStore | None = None
        self._analysis: ShadowAnalysis | None = None

    # bookkeeping

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.cfg.dumps().encode("utf-8")).hexdigest()

    def _stages_file(self) -> Path:
        return self.out / "stages.json"

    def _done(self) -> dict:
        try:
            return json.loads(self._stages_file().read_text())
        except (OSError, json.JSONDecodeError):
            return {}

    def _complete(self, stage: str) -> bool:
        return (self._done().get(stage) == self.config_hash
                and not (self.out / f"{stage}.inprogress").exists()
                and all((self.out / name).exists() for name in OUTPUTS[stage]))

    def _mark_done(self, stage: str) -> None:
        done = self._done()
        done[stage] = self.config_hash
        for later in STAGES[STAGES.index(stage) + 1:]:
            done.pop(later, None)
        write_json(self._stages_file(), done)

    def run(self, stages: Sequence[str] | None = None) -> list[StageResult]:
        """Run ``stages`` (default: all), skipping those already complete for this config."""
        stages = list(STAGES if stages is None else stages)
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}")
        self.out.mkdir(parents=True, exist_ok=True)
        write_json(self.out / "config.json", {"config": self.cfg.to_dict(), "seed": self.cfg.seed})
        results, rerun = [], self.force
        for stage in STAGES:
            if stage not in stages:
                continue
            if not rerun and self._complete(stage):
                log.info("stage %s: up to date", stage)
                results.append(StageResult(stage, False))
                continue
            rerun = True  # everything downstream of a rerun stage reruns too
            marker = self.out / f"{stage}.inprogress"
            marker.write_text(stage + "\n")
            log.info("stage %s: running", stage)
            try:
                getattr(self, f"_stage_{stage}")()
            except PShadowError as exc:
                raise type(exc)(f"stage {stage} failed: {exc}") from exc
            except OSError as exc:
                raise DataError(f"stage {stage} failed: {exc}") from exc
            except Exception as exc:
                raise InvariantError(f"stage {stage} failed unexpectedly: {exc!r}") from exc
            self._mark_done(stage)
            marker.unlink()
            results.append(StageResult(stage, True))
        return results

    # artifact access

    def _need(self, name: str) -> Path:
        path = self.out / name
        if not path.exists():
            raise DataError(f"missing artifact {name} in {self.out}")
        return path

    def store(self) -> IntervalStore:
        if self._store is None:
            self._store = IntervalStore.load(self._need("intervals.bin"))
        return self._store

    def analysis(self) -> ShadowAnalysis:
        if self._analysis is None:
            store = self.store()
            if not store.nodes or len(store) == 0:
                raise DataError("interval store is empty")
            self._analysis = analyze(store, self.cfg.s, self.cfg.eta_percentile(),
                                     stat=self.cfg.eta_stat, t_ref=self.cfg.t_ref)
        return self._analysis

    # stages

    def _stage_ingest(self) -> None:
        cfg = self.cfg
        stats = IngestStats()
        sc = cfg.synth_config()
        if cfg.events is None and sc is None:
            raise ConfigError("config needs either 'events' or a 'synth' section")
        if cfg.events is None:
            paths = synth.write(sc, self.out / "input")
            events, labelmap = paths["events"], paths["labelmap"]
            edges = None
        else:
            events, edges, labelmap = cfg.path(cfg.events), cfg.path(cfg.edges), cfg.path(cfg.labelmap)
        tg, lm = ingest(events, cfg.binning(), edges_path=edges, labelmap_path=labelmap,
                        label_threshold=cfg.effective_label_threshold(),
                        degree_cap=cfg.degree_cap, directed=cfg.directed, stats=stats)
        formats.save_graph(self.out / "graph.bin", tg, lm)
        write_json(self.out / "ingest.json", {**stats.as_dict(), "n_nodes": tg.n_nodes,
                                              "n_attrs": tg.n_attrs, "n_labels": lm.n_labels,
                                              "T": tg.T})

    def _graph(self):
        return formats.load_graph(self._need("graph.bin"))

    def _stage_induce(self) -> None:
        tg, lm = self._graph()
        engine = IntervalEngine(tg, lm, self.cfg.induction(), self.cfg.model(), threads=self.threads)
        adjs = {t: engine.adjacency(t) for t in engine.starts}
        formats.save_adjacencies(self.out / "adj.bin", adjs, {"k": self.cfg.k, "w": self.cfg.w,
                                                             "mode": self.cfg.induction_mode})

    def _stage_measure(self) -> None:
        tg, lm = self._graph()
        adjs, _ = formats.load_adjacencies(self._need("adj.bin"))
        engine = IntervalEngine(tg, lm, self.cfg.induction(), self.cfg.model(), adjacencies=adjs,
                                threads=self.threads)
        store = engine.measure()
        store.meta.update({"seed": self.cfg.seed, "k": self.cfg.k, "w": self.cfg.w})
        store.save(self.out / "intervals.bin")
        store.to_csv(self.out / "intervals.csv")
        self._store, self._analysis = None, None

    def _stage_shadow(self) -> None:
        an = self.analysis()
        store = self.store()
        write_csv(self.out / "shadow.csv", ("node", "shadow_length", "initial_percentile"),
                  shadow_rows(an, store.nodes))
        write_json(self.out / "shadow.json", shadow_meta(an, store.T))

    def _stage_profile(self) -> None:
        write_csv(self.out / "profile.csv", ("shadow_length", "fraction", "median_percentile"),
                  profile_rows(self.analysis().records))

    def _stage_lagdiff(self) -> None:
        write_csv(self.out / "lag.csv", ("percentile_bucket", "mean_change", "count"),
                  lag_rows(self.analysis(), self.cfg.lag_delta))

    def _stage_predict(self) -> None:
        cfg = self.cfg
        table = prediction_table(self.analysis(), self.store().T, cfg.regressor, cfg.xs,
                                 cfg.resamples, cfg.seed, cfg.knn_k, cfg.test_fraction)
        write_csv(self.out / "mae.csv", ("x", "mean_mae", "std_mae"), mae_rows(table))

    def _stage_report(self) -> None:
        emit_report(self.out, self.cfg, store=self.store(), analysis=self.analysis())


def emit_report(out_dir, cfg: PipelineConfig, store: IntervalStore | None = None,
                analysis: ShadowAnalysis | None = None) -> dict:
    """Write deltas.csv and summary.json from the artifacts in ``out_dir``.

    profile.csv, lag.csv and mae.csv must already exist; their absence is an
    error naming the missing file.
    """
    out = Path(out_dir)
    for name in ("intervals.bin", "profile.csv", "lag.csv", "mae.csv"):
        if not (out / name).exists():
            raise DataError(f"missing artifact {name} in {out}")
    store = store or IntervalStore.load(out / "intervals.bin")
    if analysis is None:
        try:
            analysis = analyze(store, cfg.s, cfg.eta_percentile(), stat=cfg.eta_stat,
                               t_ref=cfg.t_ref)
        except DataError as exc:
            raise DataError(f"report refused: {exc}") from None
    if not analysis.cohort or not analysis.records:
        raise DataError(f"report refused: the s={cfg.s} cohort is empty")
    write_csv(out / "deltas.csv", ("node", "delta", "network", "pop", "attr", "rand"),
              delta_rows(store, analysis.cohort))
    lengths = [r.shadow_length for r in analysis.records]
    profile = read_csv(out / "profile.csv")
    mae = read_csv(out / "mae.csv")
    summary = {
        "seed": cfg.seed,
        "T": store.T,
        "n_nodes": len(store.nodes),
        "s": cfg.s,
        "t_ref": cfg.t_ref,
        "cohort_size": len(analysis.cohort),
        "excluded": analysis.excluded,
        "eta": analysis.eta.as_dict(),
        "shadow_length": _moments(lengths),
        "fraction_infinite": sum(1 for v in lengths if v == store.T + 1) / len(lengths),
        "fraction_zero": sum(1 for v in lengths if v == 0) / len(lengths),
        "profile_bins": len(profile),
        "mae": [{"x": int(r["x"]), "mean_mae": float(r["mean_mae"]),
                 "std_mae": float(r["std_mae"])} for r in mae],
    }
    write_json(out / "summary.json", summary)
    return summary


def run_pipeline(cfg: PipelineConfig, threads: int = 1, force: bool = False,
                 stages: Sequence[str] | None = None) -> list[StageResult]:
    return Pipeline(cfg, threads=threads, force=force).run(stages)
