import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from enums.data_source import DataSourceEnum
from enums.warmup_objective import WarmupObjectiveEnum
from exceptions.pipeline_exceptions import ConfigurationException, ConfigValidationException


STRONG_OPS: Tuple[str, ...] = (
    "autocontrast", "equalize", "rotate", "solarize", "color", "posterize", "contrast",
    "brightness", "sharpness", "shear_x", "shear_y", "translate_x", "translate_y",
)


def num_visible(num_patches: int, mask_ratio: float) -> int:
    """round(N * (1 - ratio)), halves rounded up."""
    return int(math.floor(num_patches * (1.0 - mask_ratio) + 0.5))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelParams(_Section):
    """ViT encoder/classifier and MAE decoder geometry."""
    num_classes: int = Field(default=10, ge=1)
    image_size: int = Field(default=32, ge=1, description="Square image side in pixels")
    patch_size: int = Field(default=4, ge=1)
    in_channels: int = Field(default=3, ge=1)
    encoder_depth: int = Field(default=4, ge=0)
    encoder_width: int = Field(default=64, ge=1)
    encoder_heads: int = Field(default=4, ge=1)
    decoder_depth: int = Field(default=2, ge=0)
    decoder_width: int = Field(default=64, ge=1)
    decoder_heads: int = Field(default=4, ge=1)
    mlp_ratio: float = Field(default=4.0, gt=0.0)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)


class MAEParams(_Section):
    mask_ratio: float = Field(default=0.75, ge=0.0, lt=1.0)
    norm_pix_target: bool = Field(default=False, description="Standardize each target patch")
    branch: str = Field(default="mae", description="Masked-image-modeling branch implementation")


class SSLParams(_Section):
    tau: float = Field(default=0.95, gt=0.0, le=1.0, description="Pseudo-label confidence threshold")
    lambda_u: float = Field(default=10.0, ge=0.0, description="Unsupervised loss weight")
    mu_mae: float = Field(default=5.0, ge=0.0, description="Reconstruction loss weight")


class OptimParams(_Section):
    lr_init: float = Field(default=1e-3, gt=0.0)
    lr_final: float = Field(default=1e-5, gt=0.0)
    weight_decay: float = Field(default=0.05, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    grad_clip_norm: Optional[float] = Field(default=None, gt=0.0, description="Global-norm clip; unset disables")


class TrainerParams(_Section):
    warmup_epochs: int = Field(default=2, ge=0)
    total_epochs: int = Field(default=12, ge=1, description="Warmup plus main-phase epochs")
    warmup_objective: WarmupObjectiveEnum = WarmupObjectiveEnum.SUPERVISED_MAE
    eval_every_epochs: int = Field(default=1, ge=1)
    checkpoint_every_epochs: int = Field(default=1, ge=1)
    log_every_steps: int = Field(default=1, ge=1)
    eval_batch_size: int = Field(default=256, ge=1)


class DataParams(_Section):
    source: DataSourceEnum = DataSourceEnum.SYNTHETIC
    root: Optional[str] = Field(default=None, description="Dataset directory or .npz file")
    labeled_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    labeled_per_batch: int = Field(default=8, ge=1)
    unlabeled_ratio: int = Field(default=7, ge=1, description="Unlabeled images per labeled image")
    synthetic_train_size: int = Field(default=2000, ge=1)
    synthetic_val_size: int = Field(default=500, ge=1)
    num_workers: int = Field(default=0, ge=0)
    split_manifest: Optional[str] = None


class AugmentParams(_Section):
    weak_flip_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    weak_crop_scale: Tuple[float, float] = (0.8, 1.0)
    weak_crop_ratio: Tuple[float, float] = (0.75, 1.3333)
    strong_num_ops: int = Field(default=2, ge=0)
    strong_max_magnitude: float = Field(default=1.0, ge=0.0, le=1.0)
    strong_ops: Tuple[str, ...] = STRONG_OPS
    erase_prob: float = Field(default=1.0, ge=0.0, le=1.0)
    erase_scale: Tuple[float, float] = (0.02, 0.25)
    erase_ratio: Tuple[float, float] = (0.3, 3.3)
    erase_value: float = Field(default=0.5, ge=0.0, le=1.0)

    @field_validator("strong_ops")
    @classmethod
    def _known_ops(cls, ops: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = [op for op in ops if op not in STRONG_OPS]
        if unknown:
            raise ValueError(f"unknown strong ops {unknown}; choose from {list(STRONG_OPS)}")
        return ops

    @field_validator("weak_crop_scale", "weak_crop_ratio", "erase_scale", "erase_ratio")
    @classmethod
    def _ordered_range(cls, bounds: Tuple[float, float]) -> Tuple[float, float]:
        if not 0.0 < bounds[0] <= bounds[1]:
            raise ValueError(f"expected 0 < low <= high, got {bounds}")
        return bounds


class TrainConfig(BaseSettings):
    """Every hyperparameter of a run in one validated, immutable record."""

    model_config = SettingsConfigDict(
        env_prefix="SEMIMAE_", env_nested_delimiter="__", extra="forbid", frozen=True
    )

    seed: int = 0
    preset: str = "desk"
    model: ModelParams = Field(default_factory=ModelParams)
    mae: MAEParams = Field(default_factory=MAEParams)
    ssl: SSLParams = Field(default_factory=SSLParams)
    optim: OptimParams = Field(default_factory=OptimParams)
    trainer: TrainerParams = Field(default_factory=TrainerParams)
    data: DataParams = Field(default_factory=DataParams)
    augment: AugmentParams = Field(default_factory=AugmentParams)

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings,
                                   dotenv_settings, file_secret_settings):
        return init_settings, env_settings

    @model_validator(mode="after")
    def _check_invariants(self) -> "TrainConfig":
        m, o, t = self.model, self.optim, self.trainer
        if m.image_size % m.patch_size != 0:
            raise ConfigValidationException(
                f"model.image_size ({m.image_size}) must be divisible by model.patch_size ({m.patch_size})")
        if m.encoder_width % m.encoder_heads != 0:
            raise ConfigValidationException(
                f"model.encoder_width ({m.encoder_width}) must be divisible by model.encoder_heads ({m.encoder_heads})")
        if m.decoder_width % m.decoder_heads != 0:
            raise ConfigValidationException(
                f"model.decoder_width ({m.decoder_width}) must be divisible by model.decoder_heads ({m.decoder_heads})")
        if m.encoder_width % 4 != 0 or m.decoder_width % 4 != 0:
            raise ConfigValidationException(
                f"model.encoder_width ({m.encoder_width}) and model.decoder_width ({m.decoder_width}) "
                f"must be multiples of 4 for the 2-D sine-cosine table")
        visible = num_visible(self.num_patches, self.mae.mask_ratio)
        if visible < 1:
            raise ConfigValidationException(
                f"mae.mask_ratio ({self.mae.mask_ratio}) leaves no visible patch out of {self.num_patches}")
        if self.ssl.mu_mae > 0 and visible == self.num_patches:
            raise ConfigValidationException(
                f"mae.mask_ratio ({self.mae.mask_ratio}) masks no patch out of {self.num_patches} "
                f"while ssl.mu_mae ({self.ssl.mu_mae}) is active")
        if o.lr_final > o.lr_init:
            raise ConfigValidationException(
                f"optim.lr_final ({o.lr_final}) must be <= optim.lr_init ({o.lr_init})")
        if t.warmup_epochs >= t.total_epochs:
            raise ConfigValidationException(
                f"trainer.warmup_epochs ({t.warmup_epochs}) must be < trainer.total_epochs ({t.total_epochs})")
        if self.preset not in PRESETS:
            raise ConfigValidationException(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        return self

    @property
    def num_patches(self) -> int:
        return (self.model.image_size // self.model.patch_size) ** 2

    @property
    def unlabeled_per_batch(self) -> int:
        return self.data.labeled_per_batch * self.data.unlabeled_ratio

    @classmethod
    def from_preset(cls, name: str = "desk", **overrides: Any) -> "TrainConfig":
        if name not in PRESETS:
            raise ConfigurationException(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return _build(deep_merge(PRESETS[name], {"preset": name}, overrides))


PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    # ViT-Small backbone, MAE default decoder, 100 warmup + 600 semi-supervised epochs
    "vit_small": {
        "model": {
            "num_classes": 1000, "image_size": 224, "patch_size": 16,
            "encoder_depth": 12, "encoder_width": 384, "encoder_heads": 6,
            "decoder_depth": 8, "decoder_width": 512, "decoder_heads": 16,
        },
        "trainer": {"warmup_epochs": 100, "total_epochs": 700},
    },
}


def deep_merge(*layers: Mapping[str, Any]) -> Dict[str, Any]:
    merged: Dict[str, Any] = {}
    for layer in layers:
        for key, value in layer.items():
            if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
                merged[key] = deep_merge(merged[key], value)
            elif isinstance(value, Mapping):
                merged[key] = deep_merge(value)
            else:
                merged[key] = value
    return merged


def _build(values: Dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        keys = [".".join(str(p) for p in err["loc"]) for err in e.errors()]
        details = "; ".join(f"{k}: {err['msg']}" for k, err in zip(keys, e.errors()))
        raise ConfigurationException(f"Invalid config key(s) {keys}: {details}") from e


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    """Turn ['trainer.total_epochs=2', ...] into a nested dict; values parse as JSON when possible."""
    nested: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationException(f"Override {pair!r} is not of the form dotted.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationException(f"Override {key!r} conflicts with a scalar override")
        node[parts[-1]] = value
    return nested


def load_config(path: Optional[Path] = None,
                overrides: Optional[Mapping[str, Any]] = None,
                preset: Optional[str] = None) -> TrainConfig:
    """
    Load a TOML run config, layer it over its preset and apply overrides.

    Args:
        path: TOML file with flat dotted keys or [section] tables; None uses the preset alone
        overrides: nested dict (see parse_overrides) applied last
        preset: preset name used when neither the file nor the overrides name one

    Returns:
        Validated TrainConfig
    """
    file_values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationException(f"Config file not found: {path}")
        try:
            file_values = dict(TomlConfigSettingsSource(TrainConfig, toml_file=path)())
        except ValueError as e:
            raise ConfigurationException(f"Failed to parse config {path}: {e}") from e
        logger.debug(f"Loaded config file {path} with top-level keys {sorted(file_values)}")

    overrides = dict(overrides or {})
    name = overrides.get("preset") or file_values.get("preset") or preset or "desk"
    if name not in PRESETS:
        raise ConfigValidationException(f"preset must be one of {sorted(PRESETS)}, got {name!r}")
    config = _build(deep_merge(PRESETS[name], {"preset": name}, file_values, overrides))
    logger.info(f"Resolved config (preset={name}): tau={config.ssl.tau}, lambda_u={config.ssl.lambda_u}, "
                f"mu_mae={config.ssl.mu_mae}, mask_ratio={config.mae.mask_ratio}")
    return config


def _flatten(values: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in values.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{dotted}."))
        elif value is not None:
            flat[dotted] = value
    return flat


def dump_config(config: TrainConfig) -> str:
    """Render as flat dotted TOML; unset optional keys are omitted."""
    flat = _flatten(config.model_dump(mode="json"))
    return "\n".join(f"{key} = {json.dumps(value)}" for key, value in flat.items()) + "\n"
