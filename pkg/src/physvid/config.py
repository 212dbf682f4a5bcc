"""Central validated configuration: model shapes, diffusion schedule, training knobs.

Two named presets ship in-repo: "full" (the full-scale dimensions) and "toy"
(small enough that a full train step runs in well under a second on one CPU
core). The toy preset is the default everywhere, including all tests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    """Raised for missing files, parse errors, unknown keys, or invariant violations."""


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 12
    latent_frames: int = 8
    latent_height: int = 8
    latent_width: int = 8
    text_len: int = 16
    text_dim: int = 64
    phys_tokens: int = 64
    phys_dim: int = 32
    hidden_dim: int = 64
    predictor_layers: int = 2
    predictor_heads: int = 4
    gen_spatial_blocks: int = 2
    gen_temporal_blocks: int = 2
    gen_heads: int = 4
    timestep_embed_dim: int = 64


@dataclass(frozen=True)
class DiffusionConfig:
    num_timesteps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    schedule_kind: str = "linear"


@dataclass(frozen=True)
class TrainConfig:
    lambda_phys: float = 0.1
    learning_rate: float = 2e-3
    weight_decay: float = 0.01
    batch_size: int = 16
    max_steps: int = 500
    seed: int = 0
    checkpoint_every: int = 100
    log_every: int = 1
    detach_physics: bool = False


# Full-scale dimensions; not runnable on a desk but kept as the documented target.
_FULL_MODEL = ModelConfig(
    latent_channels=4,
    latent_frames=16,
    latent_height=32,
    latent_width=32,
    text_len=226,
    text_dim=4096,
    phys_tokens=2048,
    phys_dim=1408,
    hidden_dim=512,
    predictor_layers=4,
    predictor_heads=8,
    gen_spatial_blocks=12,
    gen_temporal_blocks=12,
    gen_heads=8,
    timestep_embed_dim=512,
)
# Full-scale schedule keeps the same linear beta defaults, just with more steps.
_FULL_DIFFUSION = DiffusionConfig(num_timesteps=1000)
_FULL_TRAIN = TrainConfig(learning_rate=1e-5, batch_size=2, max_steps=10000)

_TOY_MODEL = ModelConfig()
_TOY_DIFFUSION = DiffusionConfig(num_timesteps=50)
_TOY_TRAIN = TrainConfig()

PRESETS = {
    "full": (_FULL_MODEL, _FULL_DIFFUSION, _FULL_TRAIN),
    "toy": (_TOY_MODEL, _TOY_DIFFUSION, _TOY_TRAIN),
}


def _build_section(cls, section: str, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}' section: {', '.join(unknown)}")
    return cls(**data)


def _check_positive_counts(cfg: ModelConfig) -> None:
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if not isinstance(v, int) or v < 1:
            raise ConfigError(f"model.{f.name} must be a count >= 1, got {v!r}")


def validate(model: ModelConfig, diffusion: DiffusionConfig, train: TrainConfig) -> None:
    """Hard invariants; raises ConfigError naming the offending field."""
    _check_positive_counts(model)
    if model.hidden_dim % model.predictor_heads != 0:
        raise ConfigError(
            f"model.hidden_dim ({model.hidden_dim}) must be divisible by "
            f"predictor_heads ({model.predictor_heads})"
        )
    if model.hidden_dim % model.gen_heads != 0:
        raise ConfigError(
            f"model.hidden_dim ({model.hidden_dim}) must be divisible by "
            f"gen_heads ({model.gen_heads})"
        )
    if model.timestep_embed_dim % 2 != 0:
        raise ConfigError(f"model.timestep_embed_dim must be even, got {model.timestep_embed_dim}")
    for name in ("latent_frames", "latent_height", "latent_width"):
        if getattr(model, name) % 2 != 0:
            raise ConfigError(f"model.{name} must be even (predictor encoder halves it)")
    if diffusion.num_timesteps < 1:
        raise ConfigError(f"diffusion.num_timesteps must be >= 1, got {diffusion.num_timesteps}")
    if not (0.0 < diffusion.beta_start <= diffusion.beta_end < 1.0):
        bad = "beta_start" if diffusion.beta_start <= 0 else "beta_end"
        raise ConfigError(
            f"diffusion.{bad}: need 0 < beta_start <= beta_end < 1, "
            f"got beta_start={diffusion.beta_start}, beta_end={diffusion.beta_end}"
        )
    if diffusion.schedule_kind != "linear":
        raise ConfigError(f"diffusion.schedule_kind must be 'linear', got {diffusion.schedule_kind!r}")
    if train.lambda_phys < 0:
        raise ConfigError(f"train.lambda_phys must be >= 0, got {train.lambda_phys}")
    if train.learning_rate <= 0:
        raise ConfigError(f"train.learning_rate must be > 0, got {train.learning_rate}")
    if train.batch_size < 1:
        raise ConfigError(f"train.batch_size must be >= 1, got {train.batch_size}")
    if train.max_steps < 0:
        raise ConfigError(f"train.max_steps must be >= 0, got {train.max_steps}")


def validate_shapes(cfg: ModelConfig) -> list[str]:
    """Soft cross-field checks; returns human-readable warnings (empty = all good)."""
    warnings = []
    for name in ("latent_frames", "latent_height", "latent_width"):
        v = getattr(cfg, name)
        if v % 2 != 0:
            warnings.append(
                f"{name}={v} is odd; the predictor's conv encoder halves this axis "
                f"and will truncate"
            )
    if cfg.hidden_dim % cfg.predictor_heads != 0:
        warnings.append(
            f"hidden_dim={cfg.hidden_dim} not divisible by predictor_heads={cfg.predictor_heads}"
        )
    if cfg.hidden_dim % cfg.gen_heads != 0:
        warnings.append(f"hidden_dim={cfg.hidden_dim} not divisible by gen_heads={cfg.gen_heads}")
    if cfg.timestep_embed_dim % 2 != 0:
        warnings.append(f"timestep_embed_dim={cfg.timestep_embed_dim} is odd")
    return warnings


def load_config(path: str) -> tuple[ModelConfig, DiffusionConfig, TrainConfig]:
    """Load a JSON config file with optional "model"/"diffusion"/"train" sections.

    Unknown keys (at either level) are hard errors to prevent silent typo drift.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    unknown = sorted(set(raw) - {"model", "diffusion", "train"})
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {', '.join(unknown)}")
    model = _build_section(ModelConfig, "model", raw.get("model", {}))
    diffusion = _build_section(DiffusionConfig, "diffusion", raw.get("diffusion", {}))
    train = _build_section(TrainConfig, "train", raw.get("train", {}))
    validate(model, diffusion, train)
    return model, diffusion, train


def save_config(
    path: str, model: ModelConfig, diffusion: DiffusionConfig, train: TrainConfig
) -> None:
    doc = {
        "model": dataclasses.asdict(model),
        "diffusion": dataclasses.asdict(diffusion),
        "train": dataclasses.asdict(train),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def get_preset(name: str) -> tuple[ModelConfig, DiffusionConfig, TrainConfig]:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def config_fingerprint(model: ModelConfig) -> str:
    """Stable 16-hex-char digest of the model shape; guards shard/checkpoint reuse."""
    blob = json.dumps(dataclasses.asdict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
