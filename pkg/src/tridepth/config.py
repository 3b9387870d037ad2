"""Experiment configuration: typed settings, TOML loading, config hashing."""

from __future__ import annotations

import hashlib
import json
import math
import tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tridepth.errors import ConfigError


class Settings(BaseSettings):
    # Scene
    z_dim: int = 64
    w_dim: int = 64
    mapping_hidden: int = 64
    n_classes: int = 2
    feat_dim: int = 8
    plane_res: int = 32
    synthesis_channels: int = 32
    decoder_hidden: int = 64
    cube_scale: float = 0.5  # half-width of the world box covered by the tri-plane

    # Camera (Ball-in-Sphere)
    outer_radius: float = 1.0
    yaw_min: float = -math.pi
    yaw_max: float = math.pi
    pitch_min: float = math.pi / 2 - 0.8
    pitch_max: float = math.pi / 2 + 0.8
    fov_min: float = 0.2
    fov_max: float = 1.2
    lookat_yaw_min: float = -math.pi
    lookat_yaw_max: float = math.pi
    lookat_pitch_min: float = 0.0
    lookat_pitch_max: float = math.pi
    lookat_radius_min: float = 0.0
    lookat_radius_max: float = 0.3
    camera_prior_family: Literal["uniform", "gaussian"] = "uniform"
    camera_prior_std_fraction: float = 0.25  # gaussian std as a fraction of the range
    camera_hidden: int = 32

    # Render
    near: float = 0.75
    far: float = 1.25
    n_steps: int = 48
    img_res: int = 32
    patch_res: int = 32
    patch_scale_min: float = 0.5
    white_background: bool = True

    # Depth supervision
    use_depth: bool = True
    p_depth: float = 0.5
    adaptor_channels: int = 64
    blur_sigma: float = 1.0
    depth_noise_std: float = 0.01
    remap_strength: float = 0.5

    # Discriminator / teacher
    disc_channels: int = 32
    disc_hidden: int = 64
    teacher_channels: int = 16
    teacher_dim: int = 16
    teacher_seed: int = 1234
    teacher_features_path: str | None = None

    # Loss weights
    lambda_pos: float = 0.3
    lambda_fov: float = 0.03
    lambda_lookat: float = 0.003
    lambda_dist: float = 1.0
    lambda_r1: float = 0.1
    r1_interval: int = 1
    camera_reg: Literal["gradpen", "emd", "none", "residual"] = "gradpen"
    emd_samples: int = 64

    # Optimizer
    lr: float = 2e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 16
    steps: int = 5000
    ema_half_life_images: float = 2000.0
    seed: int = 0

    # Dataset
    n_scenes: int = 512
    data_workers: int = 4

    # Evaluation
    nfs_maps: int = 256
    nfs_bins: int = 64
    nfs_cull_fraction: float = 0.5
    collapse_draws: int = 1024

    # Checkpoint / logging
    checkpoint_interval: int = 1000
    log_interval: int = 50
    log_level: str = "INFO"
    log_dir: str = "logs"

    model_config = SettingsConfigDict(env_prefix="TRIDEPTH_", extra="forbid")

    @model_validator(mode="after")
    def _check_ranges(self) -> Settings:
        if not self.near < self.far:
            raise ValueError("near must be smaller than far")
        for name in ("yaw", "pitch", "fov", "lookat_yaw", "lookat_pitch", "lookat_radius"):
            lo, hi = getattr(self, f"{name}_min"), getattr(self, f"{name}_max")
            if not lo < hi:
                raise ValueError(f"{name}_min must be smaller than {name}_max")
        if self.lookat_radius_min < 0 or self.lookat_radius_max >= self.outer_radius:
            raise ValueError("lookat radius range must lie in [0, outer_radius)")
        if self.plane_res % 8 != 0:
            raise ValueError("plane_res must be divisible by 8")
        if not 0.0 <= self.p_depth <= 1.0:
            raise ValueError("p_depth must lie in [0, 1]")
        if not 0.0 < self.patch_scale_min <= 1.0:
            raise ValueError("patch_scale_min must lie in (0, 1]")
        if self.r1_interval < 1:
            raise ValueError("r1_interval must be >= 1")
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        return self

    @property
    def depth_shift_max(self) -> float:
        """Upper bound of the learnable depth shift b."""
        return min((self.near + self.far) / 2, 0.9 * (self.far - self.near))


def load_settings(path: str | Path | None = None, **overrides: Any) -> Settings:
    """Build Settings from an optional TOML file plus non-None overrides.

    Explicit overrides win over the file, the file wins over environment
    variables, which win over defaults.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Settings(**data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"invalid config key {loc}: {first['msg']}") from exc


def config_hash(cfg: Settings) -> str:
    """Short stable digest identifying a configuration."""
    payload = json.dumps(cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


settings = Settings()
