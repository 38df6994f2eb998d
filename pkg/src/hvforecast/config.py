"""Run configuration: one JSON document with per-stage sections, strict
unknown-key rejection, full validation before any work starts, and a
reduced "tiny" profile for fast end-to-end runs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from datetime import datetime

from .errors import ConfigurationError, ParseError
from .model import DEFAULT_QUANTILE_LEVELS


@dataclass(frozen=True)
class SimulatorSection:
    days: int = 365
    start: str = "2021-01-01"

    def validate(self) -> None:
        if self.days < 1:
            raise ConfigurationError("simulator.days must be >= 1")
        try:
            datetime.strptime(self.start, "%Y-%m-%d")
        except ValueError:
            raise ConfigurationError(
                f"simulator.start must be YYYY-MM-DD, got "
                f"{self.start!r}") from None

    def start_datetime(self) -> datetime:
        return datetime.strptime(self.start, "%Y-%m-%d")


@dataclass(frozen=True)
class PipelineSection:
    n_past: int = 672
    n_future: int = 96
    stride: int = 1
    noise_sd: float = 0.01
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def validate(self) -> None:
        for name in ("n_past", "n_future", "stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"pipeline.{name} must be >= 1")
        if self.noise_sd < 0:
            raise ConfigurationError("pipeline.noise_sd must be >= 0")
        if len(self.fractions) != 3 or min(self.fractions) <= 0 \
                or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigurationError(
                f"pipeline.fractions must be three positive values summing "
                f"to 1, got {self.fractions}")


@dataclass(frozen=True)
class ModelSection:
    rnn_units: int = 200
    mha_heads: int = 4
    d_model: int | None = None
    dropout_rate: float = 0.3
    quantile_levels: tuple[float, ...] = DEFAULT_QUANTILE_LEVELS

    def validate(self) -> None:
        if self.rnn_units < 1:
            raise ConfigurationError("model.rnn_units must be >= 1")
        if self.mha_heads < 1:
            raise ConfigurationError("model.mha_heads must be >= 1")
        d_model = self.d_model if self.d_model is not None \
            else 2 * self.rnn_units
        if d_model % self.mha_heads != 0:
            raise ConfigurationError(
                f"model.d_model ({d_model}) must be divisible by "
                f"model.mha_heads ({self.mha_heads})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("model.dropout_rate must be in [0, 1)")
        levels = tuple(self.quantile_levels)
        if not levels or any(not 0 < q < 1 for q in levels) \
                or any(b <= a for a, b in zip(levels, levels[1:])) \
                or 0.5 not in levels:
            raise ConfigurationError(
                "model.quantile_levels must be strictly ascending values in "
                "(0, 1) including 0.5")


@dataclass(frozen=True)
class TrainingSection:
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    grad_clip_norm: float = 1.0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigurationError("training.batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError(
                "training.learning_rate must be positive")
        if self.max_epochs < 1:
            raise ConfigurationError("training.max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigurationError("training.patience must be >= 0")
        if self.grad_clip_norm <= 0:
            raise ConfigurationError(
                "training.grad_clip_norm must be positive")


@dataclass(frozen=True)
class EvaluationSection:
    nominal_intervals: tuple[float, ...] = (0.90, 0.95, 0.99)

    def validate(self) -> None:
        for level in self.nominal_intervals:
            if not 0.0 < level < 1.0:
                raise ConfigurationError(
                    f"evaluation.nominal_intervals entry {level} outside "
                    f"(0, 1)")


@dataclass(frozen=True)
class PathsSection:
    dataset: str = "dataset.csv"
    manifest: str = "manifest.json"
    checkpoint: str = "model.ckpt"
    train_log: str = "training.jsonl"
    forecast_dump: str = "forecasts.csv"
    metrics_dir: str = "metrics"

    def validate(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name):
                raise ConfigurationError(f"paths.{f.name} must be non-empty")


_SECTION_TYPES = {
    "simulator": SimulatorSection,
    "pipeline": PipelineSection,
    "model": ModelSection,
    "training": TrainingSection,
    "evaluation": EvaluationSection,
    "paths": PathsSection,
}


@dataclass(frozen=True)
class RunConfig:
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit value")
        for name in _SECTION_TYPES:
            getattr(self, name).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _build_section(cls, data: dict, section: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigurationError(
            f"unknown key {unknown[0]!r} in section {section!r}")
    kwargs = {}
    for name, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(
            f"bad value in section {section!r}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be an object")
    known = set(_SECTION_TYPES) | {"seed"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown top-level key {unknown[0]!r}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            section = data[name]
            if not isinstance(section, dict):
                raise ConfigurationError(
                    f"section {name!r} must be an object")
            kwargs[name] = _build_section(cls, section, name)
    if "seed" in data:
        seed = data["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigurationError("seed must be an integer")
        kwargs["seed"] = seed
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc}",
                         row=exc.lineno) from exc
    return config_from_dict(data)


def tiny_profile(cfg: RunConfig) -> RunConfig:
    """Reduced geometry for desk-scale runs: short windows, a small model,
    small batches, and lighter dropout (the full-scale rate starves a
    model this small); everything else inherited."""
    return dataclasses.replace(
        cfg,
        pipeline=dataclasses.replace(cfg.pipeline, n_past=48, n_future=12),
        model=dataclasses.replace(cfg.model, rnn_units=16, mha_heads=2,
                                  d_model=32, dropout_rate=0.1),
        training=dataclasses.replace(cfg.training, batch_size=32),
    )


def apply_profile(cfg: RunConfig, profile: str) -> RunConfig:
    if profile == "full":
        return cfg
    if profile == "tiny":
        return tiny_profile(cfg)
    raise ConfigurationError(
        f"unknown profile {profile!r}, expected 'tiny' or 'full'")
