"""Strict YAML run configuration.

Unknown keys are rejected anywhere in the document (a typo must fail loudly,
not silently train with defaults). The resolved configuration (defaults
applied) is what gets serialized and hashed alongside every run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .gan import GanTrainConfig
from .diffusion import DiffusionTrainConfig
from .manifest import config_hash
from .normalize import MINMAX_WINDOW, ZSCORE_RECORDING
from .windowing import CANONICAL_CHANNELS

__all__ = ["ConfigError", "DataConfig", "EvalConfig", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """User-facing configuration problem (maps to exit code 2)."""


@dataclass
class DataConfig:
    channels: tuple[str, ...] = CANONICAL_CHANNELS
    sample_rate: float = 250.0
    overlap: float = 0.5
    window_seconds: float = 1.0
    normalization: str = MINMAX_WINDOW
    filtering: str = "raw"

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.normalization not in (MINMAX_WINDOW, ZSCORE_RECORDING):
            raise ConfigError(
                f"data.normalization must be '{MINMAX_WINDOW}' or '{ZSCORE_RECORDING}', "
                f"got '{self.normalization}'")
        if self.filtering != "raw":
            raise ConfigError("only filtering: raw is supported (models operate on raw signals)")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError("data.overlap must be in [0, 1)")


@dataclass
class EvalConfig:
    nperseg: int | None = None
    overlap: float = 0.5
    max_lag: int = 50
    knn_k: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    ddpm: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def resolved(self) -> dict:
        """Full configuration with defaults applied, JSON-serializable."""
        out = dataclasses.asdict(self)
        out["data"]["channels"] = list(self.data.channels)
        out["gan"]["channels"] = list(self.gan.channels)
        out["ddpm"]["widths"] = list(self.ddpm.widths)
        return out

    def hash(self) -> str:
        return config_hash(self.resolved())


def _require_mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return node


def _build(cls, node: dict, path: str, drop: tuple[str, ...] = ()):
    fields = {f.name for f in dataclasses.fields(cls)} - set(drop)
    unknown = set(node) - fields
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} under '{path}' "
                          f"(allowed: {sorted(fields)})")
    try:
        return cls(**node)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{path}' block: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    with open(path) as f:
        doc = yaml.safe_load(f)
    doc = _require_mapping(doc, "<root>")

    allowed_top = {"seed", "output_dir", "data", "model", "eval"}
    unknown = set(doc) - allowed_top
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)} "
                          f"(allowed: {sorted(allowed_top)})")

    data = _build(DataConfig, _require_mapping(doc.get("data"), "data"), "data")
    model = _require_mapping(doc.get("model"), "model")
    unknown_model = set(model) - {"gan", "ddpm"}
    if unknown_model:
        raise ConfigError(f"unknown key(s) {sorted(unknown_model)} under 'model'")
    seed = int(doc.get("seed", 0))

    gan_node = dict(_require_mapping(model.get("gan"), "model.gan"))
    if "seed" in gan_node:
        raise ConfigError("model.gan.seed is not allowed; set the top-level seed")
    gan_node["seed"] = seed
    gan = _build(GanTrainConfig, gan_node, "model.gan")

    ddpm_node = dict(_require_mapping(model.get("ddpm"), "model.ddpm"))
    if "seed" in ddpm_node:
        raise ConfigError("model.ddpm.seed is not allowed; set the top-level seed")
    ddpm_node["seed"] = seed
    ddpm = _build(DiffusionTrainConfig, ddpm_node, "model.ddpm")

    eval_cfg = _build(EvalConfig, _require_mapping(doc.get("eval"), "eval"), "eval")

    return RunConfig(seed=seed, output_dir=str(doc.get("output_dir", "runs/out")),
                     data=data, gan=gan, ddpm=ddpm, eval=eval_cfg)
