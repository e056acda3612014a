"""Dataclass configs and the config-file loader.

Precedence is CLI flag > config file > dataclass default. Config files are
YAML or JSON with one mapping per section (``model``, ``ablation``, ``train``,
``data``, ``amr``, ``judge``, ``eval``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

ENCODER_MODES = ("both", "graph_only", "sequence_only")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 0  # 0 means 4 * d_model
    dropout: float = 0.1
    max_len: int = 512
    pretrained_sequence_encoder: str = ""

    def validate(self) -> None:
        if self.d_model <= 0 or self.n_layers <= 0 or self.n_heads <= 0:
            raise ConfigError("model sizes must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class AblationConfig:
    use_gate: bool = True
    use_contrastive: bool = True
    encoder_mode: str = "both"

    def validate(self) -> None:
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"encoder_mode must be one of {ENCODER_MODES}")

    @classmethod
    def variant(cls, name: str) -> "AblationConfig":
        """Named ablation variants: full, wo_gm, wo_cl, wo_gm_cl, graph_only, sequence_only."""
        table = {
            "full": cls(),
            "wo_gm": cls(use_gate=False),
            "wo_cl": cls(use_contrastive=False),
            "wo_gm_cl": cls(use_gate=False, use_contrastive=False),
            "graph_only": cls(encoder_mode="graph_only"),
            "sequence_only": cls(encoder_mode="sequence_only"),
        }
        try:
            return table[name]
        except KeyError:
            raise ConfigError(f"unknown ablation variant {name!r}; known: {sorted(table)}") from None


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    grad_clip: float = 1.0
    temperature: float = 0.1
    seed: int = 0
    min_freq: int = 1
    token_dropout: float = 0.0  # training-time rate of replacing word tokens with <unk>

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigError("epochs >= 0 and batch_size >= 2 required")
        if not 0.0 <= self.token_dropout < 1.0:
            raise ConfigError("token_dropout must be in [0, 1)")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ConfigError("learning_rate and temperature must be positive")


@dataclass
class DataConfig:
    train: str = ""
    validation: str = ""
    test: str = ""
    format: str = "dailydialogpp"
    eval_sets: list[str] = field(default_factory=list)
    annotations: str = ""

    def validate(self) -> None:
        if self.format not in ("dailydialogpp", "augmented_pairs"):
            raise ConfigError(f"unknown data.format {self.format!r}")


@dataclass
class AmrConfig:
    backend: str = "fixture"  # "fixture" | "command"
    fixtures: list[str] = field(default_factory=list)
    command: str = ""
    graphs: list[str] = field(default_factory=list)
    timeout: float = 60.0

    def validate(self) -> None:
        if self.backend not in ("fixture", "command"):
            raise ConfigError("amr.backend must be 'fixture' or 'command'")
        if self.backend == "command" and not self.command:
            raise ConfigError("amr.command required for the command backend")


@dataclass
class JudgeConfig:
    client: str = "mock"  # "mock" | "openai"
    model: str = "gpt-4"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "DIALEVAL_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 8
    timeout: float = 30.0
    max_retries: int = 2
    backoff: float = 1.0
    max_in_flight: int = 4
    rate_per_second: float = 5.0
    style: str = "compact"
    mock_rules: str = ""
    mock_default: str = ""
    checkpoint: str = ""
    scores: str = ""

    def validate(self) -> None:
        if self.client not in ("mock", "openai"):
            raise ConfigError("judge.client must be 'mock' or 'openai'")
        if self.max_retries < 0 or self.max_in_flight < 1 or self.rate_per_second <= 0:
            raise ConfigError("invalid judge dispatch settings")
        if self.style not in ("compact", "spaced"):
            raise ConfigError("judge.style must be 'compact' or 'spaced'")


@dataclass
class EvalConfig:
    judgments: str = ""
    scores: str = ""
    include_slm: bool = False
    n_per_dataset: int = 400


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    amr: AmrConfig = field(default_factory=AmrConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    checkpoint: str = ""

    def validate(self) -> "RunConfig":
        for f in fields(self):
            section = getattr(self, f.name)
            if hasattr(section, "validate"):
                section.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, raw: Any, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {where or '<root>'!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where or '<root>'!r}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        f = known[name]
        key = f"{where}.{name}" if where else name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
            continue
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number")
            value = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a string")
        elif isinstance(default, list):
            if isinstance(value, str):
                value = [value]
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be a list")
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML/JSON config, apply dotted-key overrides, validate.

    Relative paths inside the file are kept as written; callers resolve them
    against the config file's directory via :func:`resolve_path`.
    """
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text) if text.strip() else {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        raw = loaded
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return _build(RunConfig, raw, "").validate()


def resolve_path(base: Path | None, value: str) -> Path:
    p = Path(value)
    if base is None or p.is_absolute():
        return p
    return (base / p).resolve()
