"""Tri-plane scene: mapping network, plane synthesis, feature lookup, decoder."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from tridepth.config import Settings
from tridepth.diffmath import DTYPE

# Plane order inside TriPlane.planes and the world axes each one spans.
PLANE_AXES: tuple[tuple[int, int], ...] = ((0, 1), (1, 2), (0, 2))  # xy, yz, xz

SceneFn = Callable[[torch.Tensor], tuple[torch.Tensor, torch.Tensor]]


@dataclass
class TriPlane:
    """Three feature planes per scene, ``planes`` of shape [B, 3, C, P, P]."""

    planes: torch.Tensor

    def __post_init__(self) -> None:
        if self.planes.dim() != 5 or self.planes.shape[1] != 3:
            raise ValueError(f"tri-plane must be [B, 3, C, P, P], got {tuple(self.planes.shape)}")
        if self.planes.shape[-1] != self.planes.shape[-2]:
            raise ValueError("tri-plane planes must be square")

    @property
    def feat_dim(self) -> int:
        return self.planes.shape[2]

    @property
    def resolution(self) -> int:
        return self.planes.shape[-1]

    @property
    def batch_size(self) -> int:
        return self.planes.shape[0]


class MappingNetwork(nn.Module):
    """(z, one-hot c) → w through two LeakyReLU layers."""

    def __init__(self, z_dim: int, n_classes: int, hidden: int, w_dim: int) -> None:
        super().__init__()
        self.n_classes = n_classes
        self.net = nn.Sequential(
            nn.Linear(z_dim + n_classes, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, w_dim), nn.LeakyReLU(0.2),
        )
        self.to(DTYPE)

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        onehot = F.one_hot(c, self.n_classes).to(z.dtype)
        return self.net(torch.cat([z, onehot], dim=1))


class SynthesisNetwork(nn.Module):
    """w → tri-plane via a linear stem and three ×2 transposed-conv stages.

    A fixed gain calibrated at construction brings plane values to about
    unit variance for standard-normal latents.
    """

    def __init__(self, w_dim: int, feat_dim: int, resolution: int, channels: int) -> None:
        super().__init__()
        if resolution % 8 != 0:
            raise ValueError("plane resolution must be divisible by 8")
        self.feat_dim = feat_dim
        self.resolution = resolution
        self.channels = channels
        self.base = resolution // 8
        self.stem = nn.Linear(w_dim, channels * self.base * self.base)
        self.up = nn.Sequential(
            nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose2d(channels, channels, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose2d(channels, 3 * feat_dim, 4, stride=2, padding=1),
        )
        self.register_buffer("gain", torch.ones((), dtype=DTYPE))
        self.to(DTYPE)
        self._calibrate(w_dim)

    @torch.no_grad()
    def _calibrate(self, w_dim: int, n: int = 8) -> None:
        w_sample = torch.randn(n, w_dim, generator=torch.Generator().manual_seed(0), dtype=DTYPE)
        std = float(self._raw(w_sample).std())
        if std > 0 and math.isfinite(std):
            self.gain.fill_(1.0 / std)

    def _raw(self, w: torch.Tensor) -> torch.Tensor:
        x = self.stem(w).view(-1, self.channels, self.base, self.base)
        return self.up(x)

    def forward(self, w: torch.Tensor) -> TriPlane:
        x = self._raw(w) * self.gain
        p = self.resolution
        return TriPlane(x.view(-1, 3, self.feat_dim, p, p))


def lookup(planes: TriPlane, xyz: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Average bilinear features of the three planes at ``xyz`` [B, N, 3].

    Coordinates live in the scene cube [-1, 1]^3 and are clamped into it;
    the second return value flags clamped points. Plane pixel (0, 0) sits
    at (-1, -1), the last pixel at (+1, +1); the first projected
    coordinate indexes plane columns.
    """
    if xyz.dim() != 3 or xyz.shape[-1] != 3:
        raise ValueError(f"xyz must be [B, N, 3], got {tuple(xyz.shape)}")
    out_of_cube = (xyz.abs() > 1.0).any(dim=-1)
    xyz = xyz.clamp(-1.0, 1.0)
    b, n, _ = xyz.shape
    feats = planes.planes
    c, p = planes.feat_dim, planes.resolution

    grid = torch.stack([xyz[..., list(axes)] for axes in PLANE_AXES], dim=1)  # [B, 3, N, 2]
    sampled = F.grid_sample(
        feats.reshape(b * 3, c, p, p),
        grid.reshape(b * 3, 1, n, 2).to(feats.dtype),
        mode="bilinear", padding_mode="border", align_corners=True,
    )  # [B*3, C, 1, N]
    sampled = sampled.view(b, 3, c, n).mean(dim=1)
    return sampled.permute(0, 2, 1), out_of_cube


class SceneDecoder(nn.Module):
    """feature → (RGB in [0, 1]^3, σ ≥ 0): two layers, LeakyReLU in between."""

    def __init__(self, feat_dim: int, hidden: int = 64) -> None:
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(feat_dim, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, 4),
        )
        self.to(DTYPE)

    def forward(self, feature: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.net(feature)
        return torch.sigmoid(out[..., :3]), F.softplus(out[..., 3])


class Generator(nn.Module):
    """Scene generator G: mapping, synthesis, decoder and the depth shift b.

    World points are divided by ``cube_scale`` before the lookup, so the
    tri-plane covers the box [-cube_scale, cube_scale]^3. The depth shift
    is b = b_max * sigmoid(beta) with b_max from the render bounds.
    """

    def __init__(self, cfg: Settings) -> None:
        super().__init__()
        self.cube_scale = cfg.cube_scale
        self.shift_max = cfg.depth_shift_max
        self.mapping = MappingNetwork(cfg.z_dim, cfg.n_classes, cfg.mapping_hidden, cfg.w_dim)
        self.synthesis = SynthesisNetwork(
            cfg.w_dim, cfg.feat_dim, cfg.plane_res, cfg.synthesis_channels,
        )
        self.decoder = SceneDecoder(cfg.feat_dim, cfg.decoder_hidden)
        self.shift_logit = nn.Parameter(torch.zeros((), dtype=DTYPE))

    @property
    def depth_shift(self) -> torch.Tensor:
        return self.shift_max * torch.sigmoid(self.shift_logit)

    def map_latent(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return self.mapping(z, c)

    def synthesize(self, w: torch.Tensor) -> TriPlane:
        return self.synthesis(w)

    def scene_fn(self, planes: TriPlane) -> SceneFn:
        """Field over world points [B, N, 3] → (rgb [B, N, 3], σ [B, N])."""

        def field(points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
            feats, _ = lookup(planes, points / self.cube_scale)
            return self.decoder(feats)

        return field

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> SceneFn:
        return self.scene_fn(self.synthesize(self.map_latent(z, c)))
