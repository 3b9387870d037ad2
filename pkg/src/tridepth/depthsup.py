"""Adversarial depth supervision: adaptor, selection policy, real-depth handling.

Fake samples show the discriminator either the normalized rendered depth
d̄ or one of three adapted maps; real samples show the estimated depth of
the image normalized into [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage
from torch import nn

from tridepth.config import Settings
from tridepth.diffmath import DTYPE, tensor

REMAP_CURVATURE = 4.0


class DepthAdaptor(nn.Module):
    """Three 5x5 conv layers; a shared 1x1 head reads out a map after each.

    Output maps are tanh-squashed into [-1, 1]. Keeping the adaptor this
    shallow stops it from faking depth on its own.
    """

    n_layers = 3

    def __init__(self, channels: int = 64) -> None:
        super().__init__()
        self.layers = nn.ModuleList([
            nn.Conv2d(1 if i == 0 else channels, channels, 5, padding=2)
            for i in range(self.n_layers)
        ])
        self.act = nn.LeakyReLU(0.2)
        self.head = nn.Conv2d(channels, 1, 1)
        self.to(DTYPE)

    def forward(self, d_bar: torch.Tensor) -> tuple[torch.Tensor, ...]:
        x = d_bar[:, None]
        maps = []
        for layer in self.layers:
            x = self.act(layer(x))
            maps.append(torch.tanh(self.head(x))[:, 0])
        return tuple(maps)


def adapt(adaptor: DepthAdaptor, d_bar: torch.Tensor) -> tuple[torch.Tensor, ...]:
    """(d_a1, d_a2, d_a3) for a batch of normalized depth maps [B, h, w]."""
    return adaptor(d_bar)


@dataclass(frozen=True)
class SelectionPolicy:
    """P(d̄) for the raw rendered depth; the rest is split evenly over the adapted maps."""

    p_raw: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_raw <= 1.0:
            raise ValueError(f"P(d̄) must lie in [0, 1], got {self.p_raw}")

    @property
    def probabilities(self) -> torch.Tensor:
        rest = (1.0 - self.p_raw) / 3.0
        return tensor([self.p_raw, rest, rest, rest])


def select_depth(
    d_bar: torch.Tensor,
    adapted: tuple[torch.Tensor, ...],
    policy: SelectionPolicy,
    rng: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pick one map per sample; returns (selected [B, h, w], choices [B]).

    Choice 0 is d̄ itself, 1..3 the adapted maps.
    """
    candidates = torch.stack((d_bar, *adapted), dim=1)  # [B, 4, h, w]
    b = candidates.shape[0]
    choices = torch.multinomial(
        policy.probabilities.expand(b, -1), 1, generator=rng,
    )[:, 0]
    index = choices.view(b, 1, 1, 1).expand(-1, 1, *candidates.shape[2:])
    return candidates.gather(1, index)[:, 0], choices


def normalize_real_depth(depth: np.ndarray | torch.Tensor):
    """Affine map of each [h, w] map sending (min, max) to (-1, +1).

    Works on a single map or a stack [..., h, w]; constant maps become zeros.
    """
    if isinstance(depth, torch.Tensor):
        lo = depth.amin(dim=(-2, -1), keepdim=True)
        hi = depth.amax(dim=(-2, -1), keepdim=True)
        span = hi - lo
        safe = torch.where(span > 0, span, torch.ones_like(span))
        return torch.where(span > 0, 2.0 * (depth - lo) / safe - 1.0, torch.zeros_like(depth))
    depth = np.asarray(depth, dtype=np.float64)
    lo = depth.min(axis=(-2, -1), keepdims=True)
    hi = depth.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, 2.0 * (depth - lo) / safe - 1.0, 0.0)


@dataclass(frozen=True)
class CorruptionConfig:
    """Simulated monocular estimator: blur sigma (px), noise std, remap strength in [0, 1]."""

    blur_sigma: float = 1.0
    noise_std: float = 0.01
    remap_strength: float = 0.5

    def __post_init__(self) -> None:
        if self.blur_sigma < 0 or self.noise_std < 0:
            raise ValueError("corruption parameters must be nonnegative")
        if not 0.0 <= self.remap_strength <= 1.0:
            raise ValueError("remap strength must lie in [0, 1]")

    @classmethod
    def from_settings(cls, cfg: Settings) -> CorruptionConfig:
        return cls(cfg.blur_sigma, cfg.depth_noise_std, cfg.remap_strength)


def monotone_remap(depth: np.ndarray) -> np.ndarray:
    """Concave, strictly increasing curve over the map's own value range."""
    lo, hi = float(depth.min()), float(depth.max())
    if hi <= lo:
        return depth.copy()
    u = (depth - lo) / (hi - lo)
    curved = np.log1p(REMAP_CURVATURE * u) / np.log1p(REMAP_CURVATURE)
    return lo + (hi - lo) * curved


def simulate_estimated_depth(
    depth: np.ndarray, cfg: CorruptionConfig, rng: np.random.Generator,
) -> np.ndarray:
    """Blur, monotone remap and additive noise, in that order.

    Blur uses reflective borders, so the per-image mean is preserved.
    """
    out = np.asarray(depth, dtype=np.float64)
    if cfg.blur_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=cfg.blur_sigma, mode="reflect")
    if cfg.remap_strength > 0:
        out = (1.0 - cfg.remap_strength) * out + cfg.remap_strength * monotone_remap(out)
    if cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, size=out.shape)
    return out
