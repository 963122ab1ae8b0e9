"""Run configuration: defaults, flat key=value config files, flag overrides.

Config files are plain text, one ``key = value`` per line, ``#`` comments
allowed.  Command-line flags override file values, which override the
defaults below.  A run's effective configuration is written back to
``<run_dir>/run_manifest`` in the same format, so re-running with
``--config <run_dir>/run_manifest`` reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .exceptions import ConfigError
from .losses import LossWeights
from .synthbench import SynthSpec
from .training import TrainConfig

VARIANTS = ("cycle_gan", "cycle_medgan")


def _float_list(text):
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


@dataclass
class RunConfig:
    """Union of synthesis, pretraining, training, and path settings."""

    # shared
    variant: str = "cycle_medgan"
    seed: int = 0
    resolution: int = 64
    # paths
    data_root: str = ""
    run_dir: str = ""
    checkpoint: str = ""
    extractor: str = ""
    # corpus synthesis
    n_images: int = 200
    transform: str = "invert_blur_texture"
    blur_sigma: float = 2.0
    texture_amplitude: float = 0.15
    # split
    val_fraction: float = 0.2
    split_seed: int = 0
    # extractor pretraining
    extractor_epochs: int = 20
    extractor_base_filters: int = 16
    # training
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adv_mode: str = "non_saturating"
    checkpoint_every: int = 200
    validate_every: int = 1
    base_filters: int = 32
    residual_blocks: int = 4
    disc_base_filters: int = 32
    # loss weights
    cycle_weight: float = 10.0
    perceptual_weight: float = 1.0
    style_weight: float = 10.0
    perceptual_layer_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    style_layer_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    # informational (accepted so run_manifest files reload cleanly)
    code_version: str = __version__

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.variant == "cycle_gan":
            # baseline variant: feature-based losses are off by definition
            object.__setattr__(self, "perceptual_weight", 0.0)
            object.__setattr__(self, "style_weight", 0.0)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            cycle_weight=self.cycle_weight,
            perceptual_weight=self.perceptual_weight,
            style_weight=self.style_weight,
            perceptual_layer_weights=_float_list(self.perceptual_layer_weights),
            style_layer_weights=_float_list(self.style_layer_weights),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            weights=self.loss_weights(),
            seed=self.seed,
            adv_mode=self.adv_mode,
            checkpoint_every=self.checkpoint_every,
            resolution=self.resolution,
            base_filters=self.base_filters,
            residual_blocks=self.residual_blocks,
            disc_base_filters=self.disc_base_filters,
            validate_every=self.validate_every,
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            n_images=self.n_images,
            resolution=self.resolution,
            transform=self.transform,
            blur_sigma=self.blur_sigma,
            texture_amplitude=self.texture_amplitude,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _cast(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return _float_list(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """key=value lines -> typed dict; unknown keys are an error."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _cast(key, raw)
    return values


def load_run_config(config_path=None, overrides: dict | None = None) -> RunConfig:
    """defaults <- config file <- explicit overrides."""
    values: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text()))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return RunConfig(**values)


def serialize_run_config(cfg: RunConfig) -> str:
    """Effective configuration as a reloadable key=value document."""
    lines = ["# effective configuration (reloadable with --config)"]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(repr(float(v)) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def serialize_manifest(train_cfg: TrainConfig, extra: dict) -> str:
    """run_manifest body for a training run started from ``train_cfg``.

    ``extra`` carries CLI-level keys (variant, paths, split) when present.
    """
    merged = dict(extra)
    t = train_cfg.to_dict()
    weights = t.pop("weights")
    merged.update(t)
    merged["cycle_weight"] = weights["cycle_weight"]
    merged["perceptual_weight"] = weights["perceptual_weight"]
    merged["style_weight"] = weights["style_weight"]
    merged["perceptual_layer_weights"] = ",".join(
        repr(float(v)) for v in weights["perceptual_layer_weights"]
    )
    merged["style_layer_weights"] = ",".join(
        repr(float(v)) for v in weights["style_layer_weights"]
    )
    merged.setdefault("code_version", __version__)
    lines = ["# effective configuration (reloadable with --config)"]
    for key in sorted(merged):
        if key not in _FIELD_TYPES:
            raise ConfigError(f"manifest key {key!r} is not a config key")
        lines.append(f"{key} = {merged[key]}")
    return "\n".join(lines) + "\n"
