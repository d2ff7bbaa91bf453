"""Configuration dataclasses and the dotted key/value config file format.

A config file is a sequence of ``section.key = value`` lines.  Blank lines and
``#`` comments are ignored.  Lists are comma-separated.  Any key may be
overridden from the environment with ``LIPVSR_<SECTION>__<KEY>``, where dots
become double underscores (``LIPVSR_TRAIN__STAGE1_EPOCHS=3``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

SUPPORTED_CROPS = (80, 96, 112, 128)
ENV_PREFIX = "LIPVSR_"


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class FrontendConfig:
    block_depths: tuple[int, ...] = (3, 4, 6, 3)
    block_channels: tuple[int, ...] = (32, 64, 128, 256)
    stem_channels: int = 32
    input_channels: int = 1
    stem_kernel: tuple[int, int, int] = (5, 7, 7)

    def validate(self, prefix: str = "model.frontend") -> None:
        if len(self.block_depths) != 4 or len(self.block_channels) != 4:
            raise ConfigError(f"{prefix}.block_depths", "need exactly 4 stages")
        if any(d < 1 for d in self.block_depths):
            raise ConfigError(f"{prefix}.block_depths", "each stage needs >= 1 block")
        if any(b <= a for a, b in zip(self.block_channels, self.block_channels[1:])):
            raise ConfigError(f"{prefix}.block_channels", "must be strictly increasing")
        if self.stem_channels != self.block_channels[0]:
            raise ConfigError(f"{prefix}.stem_channels", "must equal block_channels[0]")
        if self.input_channels not in (1, 3):
            raise ConfigError(f"{prefix}.input_channels", "must be 1 or 3")

    @property
    def output_dim(self) -> int:
        return self.block_channels[-1]


@dataclass
class EncoderConfig:
    variant: str = "e_branchformer"
    num_layers: int = 12
    model_dim: int = 256
    num_heads: int = 4
    feedforward_dim: int = 1024
    dropout: float = 0.1
    conv_kernel: int = 31
    # width of the convolutional gating MLP in (E-)Branchformer
    cgmlp_dim: int = 1024
    merge_kernel: int = 3

    VARIANTS = ("conformer", "branchformer", "e_branchformer")

    def validate(self, prefix: str = "model.encoder") -> None:
        if self.variant not in self.VARIANTS:
            raise ConfigError(f"{prefix}.variant", f"expected one of {self.VARIANTS}")
        if self.num_layers < 1:
            raise ConfigError(f"{prefix}.num_layers", "must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"{prefix}.model_dim", "must be divisible by num_heads")
        if self.conv_kernel % 2 == 0 or self.merge_kernel % 2 == 0:
            raise ConfigError(f"{prefix}.conv_kernel", "kernel sizes must be odd")
        if self.cgmlp_dim % 2:
            raise ConfigError(f"{prefix}.cgmlp_dim", "must be even (split into gate halves)")


@dataclass
class DecoderConfig:
    num_layers: int = 3
    num_heads: int = 4
    feedforward_dim: int = 2048
    model_dim: int = 256
    dropout: float = 0.1
    max_len: int = 512

    def validate(self, prefix: str = "model.decoder") -> None:
        if self.model_dim % self.num_heads:
            raise ConfigError(f"{prefix}.model_dim", "must be divisible by num_heads")
        if self.num_layers < 1:
            raise ConfigError(f"{prefix}.num_layers", "must be >= 1")


@dataclass
class LossWeights:
    """Mixing weights of the joint objective (CTC share and R2L share)."""

    ctc_weight: float = 0.3
    reverse_weight: float = 0.3
    label_smoothing: float = 0.1

    def validate(self, prefix: str = "model.loss") -> None:
        for name in ("ctc_weight", "reverse_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{prefix}.{name}", "must lie in [0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"{prefix}.label_smoothing", "must lie in [0, 1)")


@dataclass
class ModelConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        self.frontend.validate()
        self.encoder.validate()
        self.decoder.validate()
        self.loss.validate()
        if self.encoder.model_dim != self.frontend.output_dim:
            raise ConfigError(
                "model.encoder.model_dim", "must equal frontend block_channels[-1]"
            )
        if self.decoder.model_dim != self.encoder.model_dim:
            raise ConfigError("model.decoder.model_dim", "must equal encoder model_dim")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AugmentConfig:
    rotation_degrees: float = 10.0
    flip_probability: float = 0.5
    color_jitter: float = 0.2
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)

    def validate(self, prefix: str = "data.augment") -> None:
        if self.rotation_degrees < 0:
            raise ConfigError(f"{prefix}.rotation_degrees", "must be >= 0")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(f"{prefix}.flip_probability", "must lie in [0, 1]")
        if not 0.0 <= self.color_jitter <= 1.0:
            raise ConfigError(f"{prefix}.color_jitter", "must lie in [0, 1]")
        if not self.speed_factors or any(f <= 0 for f in self.speed_factors):
            raise ConfigError(f"{prefix}.speed_factors", "factors must be > 0")


@dataclass
class SyntheticConfig:
    seed: int = 7
    num_train: int = 20
    num_dev: int = 6
    num_eval: int = 6
    vocab_size: int = 12
    max_len: int = 4
    frames_per_token: int = 4


@dataclass
class DataConfig:
    data_dir: str = "data"
    crop: int = 80
    grayscale: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def validate(self) -> None:
        if self.crop not in SUPPORTED_CROPS:
            raise ConfigError("data.crop", f"expected one of {SUPPORTED_CROPS}")
        self.augment.validate()
        syn = self.synthetic
        if syn.vocab_size < 2:
            raise ConfigError("data.synthetic.vocab_size", "need >= 2 content tokens")
        if syn.num_train < 1:
            raise ConfigError("data.synthetic.num_train", "must be >= 1")
        if syn.max_len < 1 or syn.frames_per_token < 1:
            raise ConfigError("data.synthetic.max_len", "lengths must be >= 1")


@dataclass
class TrainConfig:
    stage1_epochs: int = 50
    stage2_epochs: int = 10
    average_top_k: int = 15
    batch_size: int = 8
    lr: float = 1e-3
    stage2_lr: float = 2e-4
    warmup_steps: int = 25000
    grad_clip: float = 5.0
    seed: int = 0
    augment: bool = True
    stage1_splits: tuple[str, ...] = ("train",)
    stage2_splits: tuple[str, ...] = ("train",)
    dev_split: str = "dev"
    threads: int = 1

    def validate(self) -> None:
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("train.stage1_epochs", "epochs must be >= 0")
        if self.stage1_epochs and not 1 <= self.average_top_k <= self.stage1_epochs:
            raise ConfigError("train.average_top_k", "must lie in [1, stage1_epochs]")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.lr <= 0 or self.stage2_lr <= 0:
            raise ConfigError("train.lr", "learning rates must be > 0")
        if self.warmup_steps < 1:
            raise ConfigError("train.warmup_steps", "must be >= 1")


@dataclass
class DecodeConfig:
    beam_size: int = 64
    ctc_weight: float = 0.3
    reverse_weight: float = 0.3
    split: str = "eval"

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ConfigError("decode.beam_size", "must be >= 1")
        if self.ctc_weight < 0:
            raise ConfigError("decode.ctc_weight", "must be >= 0")
        if not 0.0 <= self.reverse_weight <= 1.0:
            raise ConfigError("decode.reverse_weight", "must lie in [0, 1]")


@dataclass
class PathsConfig:
    work_dir: str = "exp"
    checkpoint_dir: str = "exp/checkpoints"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        self.data.validate()
        self.train.validate()
        self.decode.validate()
        if self.model.frontend.input_channels != (1 if self.data.grayscale else 3):
            raise ConfigError(
                "model.frontend.input_channels", "inconsistent with data.grayscale"
            )
        return self

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_lines(self) -> list[str]:
        return [f"{k} = {_format(v)}" for k, v in _flatten(self)]


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.extend(_flatten(value, key + "."))
        else:
            out.append((key, value))
    return out


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, raw: str, hint: Any) -> Any:
    raw = raw.strip()
    try:
        if hint is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if hint in (int, float, str):
            return hint(raw)
        if typing.get_origin(hint) is tuple:
            args = typing.get_args(hint)
            item = args[0]
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            values = tuple(item(p) for p in parts)
            if Ellipsis not in args and len(values) != len(args):
                raise ValueError(f"expected {len(args)} items")
            return values
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from None
    raise ConfigError(key, f"unsupported field type {hint!r}")


def _set(cfg: ExperimentConfig, key: str, raw: str) -> None:
    parts = key.split(".")
    obj: Any = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, part):
            raise ConfigError(key, "unknown config key")
        obj = getattr(obj, part)
    name = parts[-1]
    if not dataclasses.is_dataclass(obj) or name not in {
        f.name for f in dataclasses.fields(obj)
    }:
        raise ConfigError(key, "unknown config key")
    hint = typing.get_type_hints(type(obj))[name]
    if dataclasses.is_dataclass(hint):
        raise ConfigError(key, "is a section, not a value")
    setattr(obj, name, _coerce(key, raw, hint))


def parse_lines(lines: list[str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        _set(cfg, key.strip(), value)
    return cfg


def apply_env(cfg: ExperimentConfig, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            _set(cfg, key, environ[name])
    return cfg


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> ExperimentConfig:
    """File, then environment, then explicit ``key=value`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file not found: {p}")
        parse_lines(p.read_text(encoding="utf-8").splitlines(), cfg)
    apply_env(cfg, environ)
    parse_lines(overrides or [], cfg)
    return cfg


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text("\n".join(cfg.to_lines()) + "\n", encoding="utf-8")
