"""Run configuration: built-in defaults < YAML config file < command-line flags."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import yaml

from .errors import ConfigurationError

THRESHOLDS = (2.0, 3.0)


@dataclass
class RunConfig:
    scene: Optional[str] = None
    episodes: List[str] = field(default_factory=list)  # empty means all
    backend: str = "greedy"  # greedy | external
    backtrack: bool = True
    endpoint: str = ""
    mode: str = "native"  # native | chat
    model: str = ""
    temperature: float = 0.0
    token_env: str = "WAYNAV_API_TOKEN"
    timeout: float = 60.0
    predictor: str = "oracle"  # "oracle" or a path to a TWP1 params file
    params: List[str] = field(default_factory=list)  # extra params files for paired waypoint evaluation
    lambda_occ: List[float] = field(default_factory=lambda: [0.5])
    epochs: int = 500
    lr: float = 0.1
    train_scenes: int = 100
    eval_poses: int = 100
    max_steps: int = 20
    threshold: float = 3.0
    allow_threshold: bool = False  # accept a threshold other than 2.0 / 3.0
    seed: int = 0
    workers: Optional[int] = None  # None: 1
    out: str = "out"
    trace: List[str] = field(default_factory=list)
    heatmaps: Optional[str] = None

    def validate(self, need_scene: bool = False) -> "RunConfig":
        if self.backend not in ("greedy", "external"):
            raise ConfigurationError(f"backend must be 'greedy' or 'external', got {self.backend!r}")
        if self.mode not in ("native", "chat"):
            raise ConfigurationError(f"mode must be 'native' or 'chat', got {self.mode!r}")
        if self.backend == "external" and not self.endpoint:
            raise ConfigurationError("the external backend needs an endpoint")
        if self.threshold not in THRESHOLDS and not self.allow_threshold:
            raise ConfigurationError(f"threshold must be one of {THRESHOLDS} (set allow_threshold to override)")
        if not self.threshold > 0:
            raise ConfigurationError("threshold must be positive")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be at least 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        if any(lam < 0 for lam in self.lambda_occ):
            raise ConfigurationError("lambda_occ must be non-negative")
        if need_scene and not self.scene:
            raise ConfigurationError("a scene file is required (--scene)")
        for p in ([self.scene] if self.scene else []) + ([] if self.predictor == "oracle" else [self.predictor]) + self.params:
            if not Path(p).exists():
                raise ConfigurationError(f"path does not exist: {p}")
        return self

    @property
    def worker_count(self) -> int:
        # external runs stay sequential unless asked otherwise, to respect rate limits
        return self.workers if self.workers is not None else 1


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    f = FIELDS[name]
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            value = [value]
        if name == "lambda_occ":
            return [float(v) for v in value]
        return [str(v) for v in value]
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return bool(value)
    if isinstance(default, int) or name == "workers":
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    return None if value is None else str(value)


def load_config_file(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except yaml.YAMLError as err:
        raise ConfigurationError(f"{path}: not valid YAML: {err}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in doc.items()}


def build_config(file_values: Optional[dict] = None, cli_values: Optional[dict] = None) -> RunConfig:
    """Layer the config file, then CLI flags, over the defaults."""
    cfg = RunConfig()
    for layer, origin in ((file_values or {}, "config file"), (cli_values or {}, "command line")):
        for k, v in layer.items():
            if k not in FIELDS:
                raise ConfigurationError(f"unknown {origin} key {k!r}")
            if v is None:
                continue
            try:
                setattr(cfg, k, _coerce(k, v))
            except (TypeError, ValueError) as err:
                raise ConfigurationError(f"{origin} key {k!r}: {err}") from None
    return cfg
