"""Pipeline configuration: a single JSON document with defaults for every key
except the input path and the seed."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .community.dynamic import DEFAULT_THRESHOLDS
from .community.partition import ALGORITHMS, algorithm_name
from .errors import ConfigError, IoError

DEFAULT_SAMPLING = {
    "num_sample": 1,
    "min_interval": 1,
    "max_interval": None,
    "k_neighbors": 5,
    "enn_n_neighbors": 3,
    "ratio": 1.0,
    "train_fraction": 0.7,
    "balance_before_split": False,
}
DEFAULT_MODEL = {
    "grid": {"max_depth": [4, 8], "n_trees": [30]},
    "cv_folds": 3,
    "n_iter": None,
}
DEFAULT_EXPLAIN = {"n_repeats": 5, "n_perturb": 1000, "n_instances": 5, "top_k": None, "kernel_width": None}
DEFAULT_STATS = {"zscore_threshold": 3.0, "min_alarm_duration": 5, "cadence": 1}


@dataclass
class PipelineConfig:
    input: str
    seed: int
    targets: list
    output_dir: str = "artifacts"
    timestamp_column: str = "timestamp"
    stationary_predicate: list = field(default_factory=list)
    impute_before_filter: bool = False
    protocol_patterns: list = field(default_factory=list)
    categorical_cap: int = 20
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    exclusions: list = field(default_factory=list)
    top_k: int = 1
    horizon: int = 1200
    sampling: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLING))
    model: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_MODEL))
    explain: dict = field(default_factory=lambda: dict(DEFAULT_EXPLAIN))
    stats: dict = field(default_factory=lambda: dict(DEFAULT_STATS))
    max_workers: int = 1

    def validate(self) -> "PipelineConfig":
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("config must set an integer seed")
        if not self.input:
            raise ConfigError("config must name an input file")
        if not self.targets:
            raise ConfigError("config must list at least one target alarm")
        t = [float(v) for v in self.thresholds]
        if not t or t != sorted(t) or any(not 0.0 <= v <= 1.0 for v in t):
            raise ConfigError("thresholds must be a nonempty ascending ladder within [0, 1]")
        if not self.algorithms:
            raise ConfigError("algorithms must be nonempty")
        try:
            self.algorithms = [algorithm_name(a) for a in self.algorithms]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 1 <= self.top_k <= 3:
            raise ConfigError("top_k must be between 1 and 3")
        if self.horizon < 1:
            raise ConfigError("horizon must be a positive number of seconds")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be at least 1")
        self.stationary_predicate = [
            [c, "<=", 0.0] if isinstance(c, str) else list(c) for c in self.stationary_predicate
        ]
        for clause in self.stationary_predicate:
            if len(clause) != 3:
                raise ConfigError(f"stationary clause must be a column name or [column, comparator, value]: {clause}")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        if "seed" not in data or data["seed"] is None:
            raise ConfigError("config must set an integer seed")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, defaults in (("sampling", DEFAULT_SAMPLING), ("model", DEFAULT_MODEL), ("explain", DEFAULT_EXPLAIN), ("stats", DEFAULT_STATS)):
            merged = copy.deepcopy(defaults)
            merged.update(data.get(key) or {})
            data[key] = merged
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cfg.validate()

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def section(self, *keys) -> dict:
        """The config keys a stage depends on (for its input hash)."""
        return {k: getattr(self, k) for k in keys}
