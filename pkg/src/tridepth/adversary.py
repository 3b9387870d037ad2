"""Two-headed discriminator, frozen teacher and the adversarial objectives."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from tridepth.config import Settings
from tridepth.diffmath import DTYPE, grad, tensor
from tridepth.errors import ContractError
from tridepth.logging import get_logger

logger = get_logger(__name__)

RGBD_CHANNELS = 4
PATCH_CHANNELS = 3


class Discriminator(nn.Module):
    """Conv trunk over (RGB ∥ depth ∥ ψ) patches with a score head and a feature head.

    ψ = (scale, offset_x, offset_y) enters as three constant channels. The
    class label enters the score through a projection term ⟨embed(c), h⟩.
    """

    def __init__(self, n_classes: int, feat_dim: int, channels: int = 32, hidden: int = 64) -> None:
        super().__init__()
        ch = channels
        self.trunk = nn.Sequential(
            nn.Conv2d(RGBD_CHANNELS + PATCH_CHANNELS, ch, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(ch, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(ch, 2 * ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(2 * ch, hidden), nn.LeakyReLU(0.2),
        )
        self.score_head = nn.Linear(hidden, 1)
        self.embed = nn.Embedding(n_classes, hidden)
        self.feature_head = nn.Linear(hidden, feat_dim)
        self.to(DTYPE)

    def forward(
        self, rgbd: torch.Tensor, c: torch.Tensor, psi: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if rgbd.dim() != 4 or rgbd.shape[1] != RGBD_CHANNELS:
            raise ContractError(f"discriminator expects [B, 4, h, w], got {tuple(rgbd.shape)}")
        b, _, h, w = rgbd.shape
        psi_maps = psi.to(rgbd.dtype).view(b, PATCH_CHANNELS, 1, 1).expand(-1, -1, h, w)
        hid = self.trunk(torch.cat([rgbd, psi_maps], dim=1))
        score = self.score_head(hid)[:, 0] + (self.embed(c) * hid).sum(dim=1)
        return score, self.feature_head(hid)


def disc_forward(
    disc: Discriminator, rgbd: torch.Tensor, c: torch.Tensor, psi: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(score [B], ê [B, E])."""
    return disc(rgbd, c, psi)


class TeacherExtractor(nn.Module):
    """Frozen, randomly initialized conv net mapping RGB images to features.

    Weights come from a private seed so building the teacher never moves
    the global torch RNG; they never receive gradient.
    """

    def __init__(self, feat_dim: int = 16, channels: int = 16, seed: int = 1234) -> None:
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(3, channels, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
                nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
                nn.Conv2d(channels, channels, 3, padding=1), nn.LeakyReLU(0.2),
                nn.AdaptiveAvgPool2d(1), nn.Flatten(),
                nn.Linear(channels, feat_dim),
            )
        self.to(DTYPE)
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        return self.net(rgb.to(DTYPE))


def load_external_features(path: str | Path, n_items: int) -> torch.Tensor:
    """Precomputed teacher features, one row per dataset item, from a .npy file."""
    table = np.load(path)
    if table.ndim != 2 or table.shape[0] != n_items:
        raise ValueError(f"{path}: expected features of shape ({n_items}, E), got {table.shape}")
    logger.info("external teacher features loaded", path=str(path), dim=table.shape[1])
    return torch.as_tensor(table, dtype=DTYPE)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    pos: float = 0.3
    fov: float = 0.03
    lookat: float = 0.003
    dist: float = 1.0
    r1: float = 0.1

    def __post_init__(self) -> None:
        for name in ("pos", "fov", "lookat", "dist", "r1"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    @classmethod
    def from_settings(cls, cfg: Settings) -> LossWeights:
        return cls(cfg.lambda_pos, cfg.lambda_fov, cfg.lambda_lookat, cfg.lambda_dist, cfg.lambda_r1)

    def camera_vector(self) -> torch.Tensor:
        """λ per camera parameter, in camera column order."""
        return tensor([self.pos, self.pos, self.fov, self.lookat, self.lookat, self.lookat])


def g_adv_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_scores).mean()


def d_adv_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()


def adv_losses(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating (L_G, L_D) = (E softplus(-s_f), E softplus(-s_r) + E softplus(s_f))."""
    return g_adv_loss(fake_scores), d_adv_loss(real_scores, fake_scores)


ScoreFn = Callable[[torch.Tensor], torch.Tensor]


def r1_penalty(score_fn: ScoreFn, real: torch.Tensor) -> torch.Tensor:
    """½ · batch mean of ‖∇_x score(x)‖² at real inputs; differentiable in D's weights."""
    x = real.detach().clone().requires_grad_(True)
    score = score_fn(x)
    (g,) = grad(score.sum(), x, create_graph=True)
    return 0.5 * g.pow(2).flatten(1).sum(dim=1).mean()


def distill_loss(e: torch.Tensor, e_hat: torch.Tensor) -> torch.Tensor:
    """Batch mean of ‖e - ê‖² over real samples; an empty batch gives 0."""
    if e.shape != e_hat.shape:
        raise ValueError(f"teacher/student feature shapes differ: {tuple(e.shape)} vs {tuple(e_hat.shape)}")
    if e.shape[0] == 0:
        return torch.zeros((), dtype=e_hat.dtype)
    return (e - e_hat).pow(2).sum(dim=-1).mean()


@dataclass
class GeneratorLossParts:
    adv: torch.Tensor
    camera: torch.Tensor = field(default_factory=lambda: torch.zeros(6, dtype=DTYPE))


@dataclass
class DiscriminatorLossParts:
    adv: torch.Tensor
    dist: torch.Tensor = field(default_factory=lambda: torch.zeros((), dtype=DTYPE))
    r1: torch.Tensor = field(default_factory=lambda: torch.zeros((), dtype=DTYPE))


def generator_loss(parts: GeneratorLossParts, weights: LossWeights) -> torch.Tensor:
    """L_G = L_adv + Σ_i λ_i L_φi."""
    return parts.adv + (weights.camera_vector() * parts.camera).sum()


def discriminator_loss(
    parts: DiscriminatorLossParts, weights: LossWeights, r1_scale: float = 1.0,
) -> torch.Tensor:
    """L_D = L_adv + λ_dist L_dist + r1_scale · λ_r R1 (r1_scale = k for lazy R1)."""
    return parts.adv + weights.dist * parts.dist + r1_scale * weights.r1 * parts.r1
