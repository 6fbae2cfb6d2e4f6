"""Measure how long a node's labels stay re-inferable from its frozen neighborhood.

The pipeline bins event logs into a :class:`TemporalGraph`, induces k-NN
adjacencies per training window, scores prediction intervals against
zero-information baselines, ranks the resulting trajectories, and reports
per-node privacy-shadow lengths along with predictors for them.
"""
from .config import PipelineConfig
from .errors import ConfigError, DataError, InvariantError, PShadowError, WindowError
from .induction import Adjacency, InductionConfig, induce_knn
from .intervals import IntervalEngine, IntervalStore, build_interval, s_complete_cohort
from .model import ModelConfig, jaccard, predict_score
from .shadow import analyze, privacy_shadow, rank, resolve_eta
from .temporal_graph import LabelMap, SparseVector, TemporalGraph

__version__ = "0.1.0"

__all__ = [
    "Adjacency", "ConfigError", "DataError", "InductionConfig", "IntervalEngine",
    "IntervalStore", "InvariantError", "LabelMap", "ModelConfig", "PShadowError",
    "PipelineConfig", "SparseVector", "TemporalGraph", "WindowError", "analyze",
    "build_interval", "induce_knn", "jaccard", "predict_score", "privacy_shadow", "rank",
    "resolve_eta", "s_complete_cohort",
]
