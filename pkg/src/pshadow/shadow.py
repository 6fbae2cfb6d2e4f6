"""Percentile ranks against a fixed reference, eta thresholds and privacy shadows."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .intervals import (IntervalStore, NodeTrajectory, ReferenceDistribution,
                        reference_distribution, s_complete_cohort)

log = logging.getLogger(__name__)

BASELINES = ("pop", "attr", "rand")
STATS = ("mean", "median")


def _ref_values(ref) -> np.ndarray:
    values = ref.values if isinstance(ref, ReferenceDistribution) else ref
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("reference distribution is empty")
    return values


def rank(ref, x: float) -> float:
    """Midrank percentile of ``x`` within ``ref``: 100 * (#below + #equal / 2) / n."""
    return float(rank_many(ref, np.array([x], dtype=np.float64))[0])


def rank_many(ref, xs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rank`; NaN inputs give NaN."""
    values = np.sort(_ref_values(ref))
    xs = np.asarray(xs, dtype=np.float64)
    lo = np.searchsorted(values, xs, side="left")
    hi = np.searchsorted(values, xs, side="right")
    out = 100.0 * (lo + 0.5 * (hi - lo)) / values.size
    return np.where(np.isnan(xs), np.nan, out)


@dataclass(frozen=True, eq=False)
class RankTrajectory:
    node: int
    ranks: np.ndarray  # NaN marks null

    def __len__(self) -> int:
        return int(self.ranks.size)


def rank_trajectory(traj: NodeTrajectory, ref) -> RankTrajectory:
    return RankTrajectory(traj.node, rank_many(ref, traj.expected))


@dataclass(frozen=True)
class EtaThreshold:
    score_value: float  # NaN for a manual percentile
    percentile: float
    provenance: str

    def as_dict(self) -> dict:
        return {"score_value": None if math.isnan(self.score_value) else self.score_value,
                "percentile": self.percentile, "provenance": self.provenance}


def resolve_eta(baselines: Mapping[str, Sequence[float]], ref, stat: str = "mean",
                manual_percentile: float | None = None) -> EtaThreshold:
    """Largest baseline summary statistic, expressed as a percentile of ``ref``.

    ``baselines`` maps a baseline name to the per-node expected baseline
    scores of the cohort at the reference shift.  Ties between baselines go
    to the first in pop, attr, rand order.
    """
    if manual_percentile is not None:
        if not 0 <= manual_percentile <= 100:
            raise ConfigError("eta percentile must be in [0, 100]")
        return EtaThreshold(math.nan, float(manual_percentile), "manual")
    if stat not in STATS:
        raise ConfigError(f"stat must be one of {STATS}")
    best = None
    for name in sorted(baselines, key=lambda b: (BASELINES.index(b) if b in BASELINES else 99, b)):
        vals = np.asarray(baselines[name], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            log.warning("baseline %s has no values; excluded from eta", name)
            continue
        value = float(np.mean(vals) if stat == "mean" else np.median(vals))
        if best is None or value > best[0]:
            best = (value, name)
    if best is None:
        raise DataError("every baseline distribution is empty")
    return EtaThreshold(best[0], rank(ref, best[0]), best[1])


@dataclass(frozen=True)
class ShadowRecord:
    node: int
    shadow_length: int
    initial_percentile: float


def shadow_length(ranks: np.ndarray, eta: float) -> int | None:
    """Smallest t after which every non-null rank is <= eta; ``len(ranks)`` if none.

    Returns None for an all-null trajectory.
    """
    ranks = np.asarray(ranks, dtype=np.float64)
    present = ~np.isnan(ranks)
    if not present.any():
        return None
    above = np.flatnonzero(present & (ranks > eta))
    return 0 if above.size == 0 else int(above[-1]) + 1


def privacy_shadow(rt: RankTrajectory, eta: float) -> ShadowRecord:
    length = shadow_length(rt.ranks, eta)
    if length is None:
        raise DataError(f"node {rt.node} has an all-null rank trajectory")
    return ShadowRecord(rt.node, length, float(rt.ranks[0]))


@dataclass(frozen=True)
class ProfileBin:
    shadow_length: int
    count: int
    fraction: float
    median_percentile: float


def shadow_profile(records: Sequence[ShadowRecord]) -> list[ProfileBin]:
    """Histogram of shadow lengths (non-empty bins) with each bin's median initial percentile."""
    if not records:
        raise DataError("shadow profile needs at least one record")
    groups: dict[int, list[float]] = {}
    for rec in records:
        groups.setdefault(rec.shadow_length, []).append(rec.initial_percentile)
    n = len(records)
    out = []
    for length in sorted(groups):
        pct = np.array(groups[length])
        pct = pct[~np.isnan(pct)]
        med = float(np.median(pct)) if pct.size else math.nan
        out.append(ProfileBin(length, len(groups[length]), len(groups[length]) / n, med))
    return out


@dataclass(frozen=True)
class LagBucket:
    bucket: int
    mean_change: float
    count: int


def lag_diff_curve(rank_rows: Iterable[np.ndarray], delta: int) -> list[LagBucket]:
    """Mean rank change after ``delta`` steps, grouped by the integer part of the current rank."""
    if delta < 1:
        raise ConfigError("delta must be >= 1")
    changes: dict[int, list[float]] = {}
    for ranks in rank_rows:
        ranks = np.asarray(ranks, dtype=np.float64)
        if ranks.size <= delta:
            continue
        now, later = ranks[:-delta], ranks[delta:]
        ok = ~(np.isnan(now) | np.isnan(later))
        for r, diff in zip(now[ok].tolist(), (later[ok] - now[ok]).tolist()):
            changes.setdefault(int(math.floor(r)), []).append(diff)
    return [LagBucket(b, math.fsum(changes[b]) / len(changes[b]), len(changes[b]))
            for b in sorted(changes)]


@dataclass
class ShadowAnalysis:
    """Everything derived from an interval store for one (s, eta) choice."""

    s: int
    t_ref: int
    cohort: list[int]
    reference: ReferenceDistribution
    eta: EtaThreshold
    rank_trajectories: dict[int, RankTrajectory]
    records: list[ShadowRecord]
    excluded: int = 0
    baseline_values: dict[str, np.ndarray] = field(default_factory=dict)


def analyze(store: IntervalStore, s: int, eta_percentile: float | None = None,
            stat: str = "mean", t_ref: int = 0) -> ShadowAnalysis:
    """Cohort, reference distribution, eta, rank trajectories and shadows of ``store``."""
    cohort = s_complete_cohort(store, s)
    if not cohort:
        raise DataError(f"the s={s} cohort is empty")
    trajectories = store.trajectories("score")
    ref = reference_distribution(trajectories, cohort, t_ref)
    if len(ref) == 0:
        raise DataError(f"no cohort node has a score at delta={t_ref}")
    baseline_values = {}
    for name in BASELINES:
        trajs = store.trajectories(name)
        baseline_values[name] = reference_distribution(trajs, cohort, t_ref).values
    eta = resolve_eta(baseline_values, ref, stat=stat, manual_percentile=eta_percentile)
    ranks, records, excluded = {}, [], 0
    for i in cohort:
        rt = rank_trajectory(trajectories[i], ref)
        ranks[i] = rt
        length = shadow_length(rt.ranks, eta.percentile)
        if length is None:
            excluded += 1
            continue
        records.append(ShadowRecord(i, length, float(rt.ranks[t_ref])))
    if excluded:
        log.warning("%d cohort nodes have all-null rank trajectories", excluded)
    return ShadowAnalysis(s, t_ref, cohort, ref, eta, ranks, records, excluded, baseline_values)
