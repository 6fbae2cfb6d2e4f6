"""Pipeline configuration: one flat JSON object validated against every stage."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, DataError
from .induction import InductionConfig
from .ingestion import BinningConfig
from .model import ModelConfig
from .synth import DEFAULT_LABEL_THRESHOLD, SynthConfig, binning_for

DEFAULT_LABEL_THRESHOLD_FILES = 5


@dataclass
class PipelineConfig:
    seed: int = 0
    # inputs: event files, or a synth section that generates them
    events: str | None = None
    edges: str | None = None
    labelmap: str | None = None
    synth: dict | None = None
    # ingestion
    n_intervals: int | None = 50
    t_min: float | str | None = None
    t_max: float | str | None = None
    bin_edges: list | None = None
    out_of_range: str = "skip"
    label_threshold: int | None = None  # None: 5 for event files, the synth default otherwise
    degree_cap: int | None = None
    directed: bool = False
    # induction and model
    induction_mode: str = "knn"
    k: int = 20
    w: int = 1
    bootstrap_p: float = 0.5
    n_realizations: int = 10
    pop_k: int = 20
    # shadow analysis
    s: int = 10
    eta: float | str = "auto"
    eta_stat: str = "mean"
    t_ref: int = 0
    lag_delta: int = 1
    # prediction
    regressor: str = "knn"
    knn_k: int = 5
    xs: list | None = None  # None: 0..T
    resamples: int = 30
    test_fraction: float = 0.2
    output_dir: str = "out"
    base_dir: str = field(default=".", repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    # -- construction --------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d, base_dir=str(base_dir))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def replace(self, **changes) -> "PipelineConfig":
        d = self.to_dict()
        d.update(changes)
        return PipelineConfig.from_dict(d, self.base_dir)

    # -- derived stage configs ----------------------------------------

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out(self) -> Path:
        return self.path(self.output_dir)

    def synth_config(self) -> SynthConfig | None:
        if self.synth is None:
            return None
        d = dict(self.synth)
        d.setdefault("seed", self.seed)
        return SynthConfig.from_dict(d)

    def binning(self) -> BinningConfig:
        sc = self.synth_config()
        if sc is not None and self.events is None:
            return binning_for(sc)
        return BinningConfig(n_intervals=self.n_intervals, t_min=self.t_min, t_max=self.t_max,
                             bin_edges=self.bin_edges, out_of_range=self.out_of_range)

    def effective_label_threshold(self) -> int:
        if self.label_threshold is not None:
            return self.label_threshold
        if self.synth is not None and self.events is None:
            return DEFAULT_LABEL_THRESHOLD
        return DEFAULT_LABEL_THRESHOLD_FILES

    def induction(self) -> InductionConfig:
        return InductionConfig(mode=self.induction_mode, k=self.k, w=self.w)

    def model(self) -> ModelConfig:
        return ModelConfig(bootstrap_p=self.bootstrap_p, n_realizations=self.n_realizations,
                           pop_k=self.pop_k, seed=self.seed)

    def eta_percentile(self) -> float | None:
        return None if self.eta == "auto" else float(self.eta)

    # -- validation ----------------------------------------------------

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.seed, int) and not isinstance(self.seed, bool) and self.seed >= 0,
             "seed must be a non-negative integer")
        try:
            if self.synth is not None:
                need(isinstance(self.synth, dict), "'synth' must be an object")
                self.synth_config()
            self.binning()
            self.induction()
            self.model()
        except (TypeError, DataError) as exc:
            raise ConfigError(str(exc)) from None
        need(self.label_threshold is None or (isinstance(self.label_threshold, int)
                                              and not isinstance(self.label_threshold, bool)
                                              and self.label_threshold >= 0),
             "label_threshold must be a non-negative integer")
        need(self.degree_cap is None or (isinstance(self.degree_cap, int) and self.degree_cap >= 1),
             "degree_cap must be a positive integer")
        need(isinstance(self.directed, bool), "directed must be a boolean")
        need(isinstance(self.s, int) and self.s >= 0, "s must be a non-negative integer")
        if self.eta != "auto":
            need(isinstance(self.eta, (int, float)) and not isinstance(self.eta, bool)
                 and math.isfinite(self.eta) and 0 <= self.eta <= 100,
                 "eta must be 'auto' or a percentile in [0, 100]")
        need(self.eta_stat in ("mean", "median"), "eta_stat must be 'mean' or 'median'")
        need(isinstance(self.t_ref, int) and 0 <= self.t_ref <= self.s,
             "t_ref must be an integer in [0, s]")
        need(isinstance(self.lag_delta, int) and self.lag_delta >= 1, "lag_delta must be >= 1")
        need(self.regressor in ("constant-median", "knn", "curvefit")
             or (isinstance(self.regressor, str) and self.regressor.startswith("external:")
                 and len(self.regressor) > len("external:")),
             "regressor must be constant-median, knn, curvefit or external:CMD")
        need(isinstance(self.knn_k, int) and self.knn_k >= 1, "knn_k must be >= 1")
        if self.xs is not None:
            need(isinstance(self.xs, list) and self.xs
                 and all(isinstance(x, int) and x >= 0 for x in self.xs),
                 "xs must be a non-empty list of non-negative integers")
        need(isinstance(self.resamples, int) and self.resamples >= 1, "resamples must be >= 1")
        need(0 < self.test_fraction < 1, "test_fraction must be in (0, 1)")
        need(isinstance(self.output_dir, str) and self.output_dir, "output_dir must be a path")
