"""Model/training configuration and the flat ``key = value`` file format.

Files are UTF-8, one ``key = value`` pair per line, ``#`` starts a comment.
Unknown keys are rejected before any computation happens.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError

ATTENTION_VARIANTS = ("successive", "plain-cross", "self-on-concat")
SCM_VARIANTS = ("eq6", "eq7", "eq8")
DOWNSAMPLE_METHODS = ("bilinear", "avgpool")


@dataclass
class EncoderConfig:
    channels: tuple = (8, 16, 32, 64)
    blocks_per_stage: int = 1
    height: int = 64
    width: int = 64

    def validate(self):
        if len(self.channels) != 4:
            raise ConfigError("encoder needs exactly 4 stage channel counts")
        if any(a >= b for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"stage channels must strictly increase: {self.channels}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        for dim, name in ((self.height, "height"), (self.width, "width")):
            if dim % 64:
                raise ConfigError(
                    f"image {name} {dim} must be divisible by 64")
        return self


@dataclass
class DecoderConfig:
    num_blocks: int = 4
    heads: tuple = (1, 1, 1)  # per output level 2, 3, 4
    ffn_expansion: int = 4
    attention_variant: str = "successive"
    scm_variant: str = "eq6"
    head_channels: int = 32
    num_classes: int = 4
    ase_embed_dim: int | None = None
    attention_bias: bool = True
    downsample: str = "bilinear"

    def validate(self):
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if len(self.heads) != 3:
            raise ConfigError("heads needs one entry per level (3 values)")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigError(
                f"attention_variant must be one of {ATTENTION_VARIANTS}, "
                f"got {self.attention_variant!r}")
        if self.scm_variant not in SCM_VARIANTS:
            raise ConfigError(
                f"scm_variant must be one of {SCM_VARIANTS}, got {self.scm_variant!r}")
        if self.ffn_expansion != 4:
            raise ConfigError("ffn_expansion is fixed at 4")
        if self.downsample not in DOWNSAMPLE_METHODS:
            raise ConfigError(
                f"downsample must be one of {DOWNSAMPLE_METHODS}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        return self


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    base_lr: float = 1e-4
    poly_power: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    train_samples: int = 200
    val_samples: int = 32
    eval_interval: int = 200

    def validate(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        return self


@dataclass
class FullConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.encoder.validate()
        self.decoder.validate()
        self.train.validate()
        return self


def _int_list(raw: str) -> tuple:
    try:
        return tuple(int(v.strip()) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}")


def _boolean(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _optional_int(raw: str):
    if raw.strip().lower() in ("none", ""):
        return None
    return int(raw)


# key -> (section, field, parser)
_SCHEMA = {
    "image_height": ("encoder", "height", int),
    "image_width": ("encoder", "width", int),
    "encoder_channels": ("encoder", "channels", _int_list),
    "encoder_blocks_per_stage": ("encoder", "blocks_per_stage", int),
    "num_blocks": ("decoder", "num_blocks", int),
    "heads": ("decoder", "heads", _int_list),
    "ffn_expansion": ("decoder", "ffn_expansion", int),
    "attention_variant": ("decoder", "attention_variant", str),
    "scm_variant": ("decoder", "scm_variant", str),
    "head_channels": ("decoder", "head_channels", int),
    "num_classes": ("decoder", "num_classes", int),
    "ase_embed_dim": ("decoder", "ase_embed_dim", _optional_int),
    "attention_bias": ("decoder", "attention_bias", _boolean),
    "downsample": ("decoder", "downsample", str),
    "iterations": ("train", "iterations", int),
    "batch_size": ("train", "batch_size", int),
    "base_lr": ("train", "base_lr", float),
    "poly_power": ("train", "poly_power", float),
    "weight_decay": ("train", "weight_decay", float),
    "seed": ("train", "seed", int),
    "train_samples": ("train", "train_samples", int),
    "val_samples": ("train", "val_samples", int),
    "eval_interval": ("train", "eval_interval", int),
}


def parse_config_text(text: str) -> dict:
    """Parse config text into a raw {key: string} dict, rejecting unknown keys."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return values


def build_config(values: dict, overrides: dict | None = None) -> FullConfig:
    """Apply raw string values (file, then overrides) onto the defaults."""
    cfg = FullConfig()
    merged = dict(values)
    if overrides:
        for key, raw in overrides.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = raw
    for key, raw in merged.items():
        section, name, parser = _SCHEMA[key]
        try:
            parsed = parser(raw)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {raw!r}")
        target = getattr(cfg, section)
        setattr(cfg, section, replace(target, **{name: parsed}))
    return cfg.validate()


def load_config(path=None, overrides: dict | None = None) -> FullConfig:
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    return build_config(values, overrides)
