"""Command-line entry point: ``pshadow <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import formats, pipeline, synth
from .config import PipelineConfig
from .errors import ConfigError, DataError, InvariantError, PShadowError
from .ingestion import IngestStats, ingest
from .intervals import IntervalEngine, IntervalStore, reference_distribution, s_complete_cohort
from .shadow import EtaThreshold, ShadowAnalysis, ShadowRecord, analyze, rank_trajectory

log = logging.getLogger("pshadow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("PSHADOW_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"PSHADOW_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _manifest(out, command: str, cfg: PipelineConfig | None, **extra) -> None:
    """Record the effective configuration next to a single-stage output."""
    out = Path(out)
    body = {"command": command, **extra}
    if cfg is not None:
        body["config"] = cfg.to_dict()
        body["seed"] = cfg.seed
    pipeline.write_json(out.with_name(out.name + ".manifest.json"), body)


def _parse_eta(value: str) -> float | None:
    if value == "auto":
        return None
    try:
        eta = float(value)
    except ValueError:
        raise ConfigError(f"--eta must be 'auto' or a percentile, got {value!r}") from None
    if not 0 <= eta <= 100:
        raise ConfigError("--eta percentile must be in [0, 100]")
    return eta


def _parse_xs(value: str | None):
    if value is None:
        return None
    try:
        xs = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--xs must be comma-separated integers, got {value!r}") from None
    if not xs:
        raise ConfigError("--xs is empty")
    return xs


# -- subcommands ----------------------------------------------------------


def cmd_ingest(args) -> None:
    cfg = _config(args)
    stats = IngestStats()
    # a config with a synth section bins like the generator that wrote the events
    tg, lm = ingest(args.events, cfg.binning(), edges_path=args.edges,
                    labelmap_path=args.labelmap,
                    label_threshold=cfg.effective_label_threshold(),
                    degree_cap=cfg.degree_cap, directed=cfg.directed, stats=stats)
    formats.save_graph(args.out, tg, lm)
    _manifest(args.out, "ingest", cfg, stats=stats.as_dict(), T=tg.T, n_nodes=tg.n_nodes)
    print(f"{tg.n_nodes} nodes, {tg.n_attrs} attributes, {len(tg)} snapshots -> {args.out}")


def cmd_induce(args) -> None:
    cfg = _config(args)
    tg, lm = formats.load_graph(args.graph)
    engine = IntervalEngine(tg, lm, cfg.induction(), cfg.model(), threads=_threads(args))
    starts = list(engine.starts) if args.t0 is None else [args.t0]
    adjs = {t: engine.adjacency(t) for t in starts}
    formats.save_adjacencies(args.out, adjs, {"k": cfg.k, "w": cfg.w, "mode": cfg.induction_mode})
    _manifest(args.out, "induce", cfg, t0=starts)
    print(f"{len(adjs)} adjacencies -> {args.out}")


def cmd_measure(args) -> None:
    cfg = _config(args)
    tg, lm = formats.load_graph(args.graph)
    adjs = formats.load_adjacencies(args.adj)[0] if args.adj else None
    engine = IntervalEngine(tg, lm, cfg.induction(), cfg.model(), adjacencies=adjs,
                            threads=_threads(args))
    store = engine.measure()
    store.meta.update({"seed": cfg.seed, "k": cfg.k, "w": cfg.w})
    store.save(args.out)
    if args.csv:
        store.to_csv(args.csv)
    _manifest(args.out, "measure", cfg)
    print(f"{len(store)} interval cells -> {args.out}")


def _analysis(intervals, s: int, eta: float | None, stat: str, t_ref: int):
    store = IntervalStore.load(intervals)
    return store, analyze(store, s, eta, stat=stat, t_ref=t_ref)


def cmd_shadow(args) -> None:
    store, an = _analysis(args.intervals, args.s, _parse_eta(args.eta), args.stat, args.t_ref)
    pipeline.write_csv(args.out, ("node", "shadow_length", "initial_percentile"),
                       pipeline.shadow_rows(an, store.nodes))
    meta = pipeline.shadow_meta(an, store.T)
    pipeline.write_json(Path(args.out).with_suffix(".json"), meta)
    print(f"cohort {meta['cohort_size']}, eta percentile {an.eta.percentile:.3f} "
          f"({an.eta.provenance}) -> {args.out}")


def _read_shadow(path, store: IntervalStore) -> tuple[list[ShadowRecord], dict]:
    meta_path = Path(path).with_suffix(".json")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read shadow metadata {meta_path}: {exc}") from None
    index = {name: i for i, name in enumerate(store.nodes)}
    records = []
    for row in pipeline.read_csv(path):
        try:
            pct = float(row["initial_percentile"]) if row["initial_percentile"] else float("nan")
            records.append(ShadowRecord(index[row["node"]], int(row["shadow_length"]), pct))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: bad shadow row {row} ({exc})") from None
    return records, meta


def cmd_profile(args) -> None:
    if args.shadow:
        rows = pipeline.read_csv(args.shadow)
        try:
            records = [ShadowRecord(i, int(r["shadow_length"]),
                                    float(r["initial_percentile"] or "nan"))
                       for i, r in enumerate(rows)]
        except (KeyError, ValueError) as exc:
            raise DataError(f"{args.shadow}: bad shadow row ({exc})") from None
    else:
        if not args.intervals:
            raise ConfigError("profile needs --shadow or --intervals")
        records = _analysis(args.intervals, args.s, _parse_eta(args.eta), args.stat,
                            args.t_ref)[1].records
    pipeline.write_csv(args.out, ("shadow_length", "fraction", "median_percentile"),
                       pipeline.profile_rows(records))
    print(f"profile -> {args.out}")


def cmd_lagdiff(args) -> None:
    if args.delta < 1:
        raise ConfigError("--delta must be >= 1")
    _, an = _analysis(args.intervals, args.s, _parse_eta(args.eta), args.stat, args.t_ref)
    pipeline.write_csv(args.out, ("percentile_bucket", "mean_change", "count"),
                       pipeline.lag_rows(an, args.delta))
    print(f"lag-diff curve (delta={args.delta}) -> {args.out}")


def cmd_predict(args) -> None:
    store = IntervalStore.load(args.intervals)
    records, meta = _read_shadow(args.shadow, store)
    s, t_ref = int(meta["s"]), int(meta.get("t_ref", 0))
    trajs = store.trajectories("score")
    cohort = s_complete_cohort(store, s)
    ref = reference_distribution(trajs, cohort, t_ref)
    ranks = {i: rank_trajectory(trajs[i], ref) for i in cohort}
    eta = meta["eta"]
    an = ShadowAnalysis(s, t_ref, cohort, ref,
                        EtaThreshold(float("nan") if eta["score_value"] is None else eta["score_value"],
                                     float(eta["percentile"]), eta["provenance"]),
                        ranks, [r for r in records if r.node in ranks])
    table = pipeline.prediction_table(an, store.T, args.regressor, _parse_xs(args.xs),
                                      args.resamples, args.seed, args.k, args.test_fraction)
    pipeline.write_csv(args.out, ("x", "mean_mae", "std_mae"), pipeline.mae_rows(table))
    _manifest(args.out, "predict", None, regressor=args.regressor, seed=args.seed,
              resamples=args.resamples, xs=table.xs)
    print(f"MAE table ({len(table.xs)} observation lengths) -> {args.out}")


def cmd_synth(args) -> None:
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read synth config {args.config}: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("synth"), dict):
        sc = PipelineConfig.from_dict(data, Path(args.config).parent).synth_config()
    else:
        sc = synth.SynthConfig.from_dict(data)
    paths = synth.write(sc, args.out_dir)
    print(f"synthetic {sc.regime} graph -> {', '.join(str(p) for p in paths.values())}")


def cmd_run(args) -> None:
    cfg = _config(args)
    if args.out_dir:
        cfg = cfg.replace(output_dir=str(Path(args.out_dir).resolve()))
    stages = args.stages.split(",") if args.stages else None
    results = pipeline.run_pipeline(cfg, threads=_threads(args), force=args.force, stages=stages)
    for r in results:
        print(f"{r.name:8s} {'ran' if r.ran else 'up to date'}")


def cmd_report(args) -> None:
    out = Path(args.dir)
    try:
        saved = json.loads((out / "config.json").read_text())["config"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"missing artifact config.json in {out}: {exc}") from None
    cfg = PipelineConfig.from_dict(saved, out)
    summary = pipeline.emit_report(out, cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))


# -- argument parsing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pshadow", description="Privacy-shadow measurement pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def threads(sp):
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: PSHADOW_THREADS or 1)")

    def analysis_opts(sp, need_intervals=True):
        sp.add_argument("--intervals", required=need_intervals)
        sp.add_argument("--s", type=int, default=10)
        sp.add_argument("--eta", default="auto", help="'auto' or a percentile")
        sp.add_argument("--stat", choices=("mean", "median"), default="mean")
        sp.add_argument("--t-ref", dest="t_ref", type=int, default=0)

    sp = add("ingest", cmd_ingest, "bin event files into graph.bin")
    sp.add_argument("--events", required=True)
    sp.add_argument("--edges")
    sp.add_argument("--labelmap")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)

    sp = add("induce", cmd_induce, "build frozen adjacencies")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--config")
    sp.add_argument("--t0", type=int, help="window end (default: every trainable window)")
    sp.add_argument("--out", required=True)
    threads(sp)

    sp = add("measure", cmd_measure, "evaluate every prediction interval")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--config")
    sp.add_argument("--adj", help="precomputed adjacencies from 'induce'")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", help="also export node,t_start,delta,score")
    threads(sp)

    sp = add("shadow", cmd_shadow, "rank trajectories and privacy shadows")
    analysis_opts(sp)
    sp.add_argument("--out", required=True)

    sp = add("profile", cmd_profile, "shadow-length histogram")
    sp.add_argument("--shadow", help="shadow.csv written by 'shadow'")
    analysis_opts(sp, need_intervals=False)
    sp.add_argument("--out", required=True)

    sp = add("lagdiff", cmd_lagdiff, "mean rank change after delta steps")
    analysis_opts(sp)
    sp.add_argument("--delta", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "MAE of shadow-length prediction")
    sp.add_argument("--intervals", required=True)
    sp.add_argument("--shadow", required=True)
    sp.add_argument("--regressor", default="knn",
                    help="constant-median | knn | curvefit | external:CMD")
    sp.add_argument("--xs", help="comma-separated observation lengths (default 0..T)")
    sp.add_argument("--resamples", type=int, default=30)
    sp.add_argument("--k", type=int, default=5, help="neighbors for the knn regressor")
    sp.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("synth", cmd_synth, "write a synthetic event set")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", dest="out_dir", required=True)

    sp = add("run", cmd_run, "run the full pipeline")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", dest="out_dir", help="override output_dir")
    sp.add_argument("--stages", help="comma-separated subset of stages")
    sp.add_argument("--force", action="store_true", help="rerun completed stages")
    sp.add_argument("--seed", type=int)
    threads(sp)

    sp = add("report", cmd_report, "re-emit deltas.csv and summary.json")
    sp.add_argument("--dir", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except PShadowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        log.exception("unexpected failure")
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
