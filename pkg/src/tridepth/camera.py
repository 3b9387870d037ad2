"""Ball-in-Sphere camera: prior, camera generator, view frame, regularizers.

A camera is six numbers per sample, always in this column order::

    0 yaw            position on the outer sphere
    1 pitch          (polar angle from +z, in (0, pi))
    2 fov            full field of view, radians
    3 lookat_yaw     look-at point inside the inner ball
    4 lookat_pitch
    5 lookat_radius

Spherical convention (origin and look-at point alike)::

    x = R sin(pitch) cos(yaw)
    y = R sin(pitch) sin(yaw)
    z = R cos(pitch)
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import torch
from torch import nn

from tridepth.config import Settings
from tridepth.diffmath import DTYPE, grad, tensor
from tridepth.errors import DegenerateViewError, NonFiniteError

PARAM_NAMES: tuple[str, ...] = (
    "yaw", "pitch", "fov", "lookat_yaw", "lookat_pitch", "lookat_radius",
)
POS = slice(0, 2)
FOV = slice(2, 3)
LOOKAT = slice(3, 6)

PITCH_EPS = 1e-3
PENALTY_CAP = 1e6
# Below this slope 1/|g| continues along its tangent, reaching PENALTY_CAP at g = 0.
COLLAPSE_SLOPE = 2.0 / PENALTY_CAP


@dataclass(frozen=True)
class ParamPrior:
    """Distribution of one camera parameter before the camera generator."""

    low: float
    high: float
    family: Literal["uniform", "gaussian"] = "uniform"
    mean: float | None = None
    std: float | None = None

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError(f"prior needs low < high, got [{self.low}, {self.high}]")
        if self.family not in ("uniform", "gaussian"):
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.family == "gaussian" and (self.std is None or self.std <= 0):
            raise ValueError("gaussian prior needs std > 0")

    @property
    def center(self) -> float:
        if self.family == "gaussian" and self.mean is not None:
            return self.mean
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class CameraPrior:
    """One ParamPrior per camera parameter, in PARAM_NAMES order."""

    params: tuple[ParamPrior, ...]

    def __post_init__(self) -> None:
        if len(self.params) != len(PARAM_NAMES):
            raise ValueError(f"camera prior needs {len(PARAM_NAMES)} parameters")

    @classmethod
    def from_settings(cls, cfg: Settings) -> CameraPrior:
        specs = []
        for name in PARAM_NAMES:
            lo, hi = getattr(cfg, f"{name}_min"), getattr(cfg, f"{name}_max")
            if cfg.camera_prior_family == "gaussian":
                specs.append(ParamPrior(
                    lo, hi, "gaussian",
                    mean=0.5 * (lo + hi), std=cfg.camera_prior_std_fraction * (hi - lo),
                ))
            else:
                specs.append(ParamPrior(lo, hi))
        return cls(tuple(specs))

    @property
    def low(self) -> torch.Tensor:
        return tensor([p.low for p in self.params])

    @property
    def high(self) -> torch.Tensor:
        return tensor([p.high for p in self.params])

    def mean_camera(self) -> torch.Tensor:
        """The prior's central camera, shape [1, 6]."""
        return tensor([[p.center for p in self.params]])


@dataclass
class CameraParams:
    """Batch of cameras, ``values`` of shape [B, 6]."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        if self.values.dim() != 2 or self.values.shape[1] != len(PARAM_NAMES):
            raise ValueError(f"camera values must be [B, 6], got {tuple(self.values.shape)}")

    @property
    def pos(self) -> torch.Tensor:
        return self.values[:, POS]

    @property
    def fov(self) -> torch.Tensor:
        return self.values[:, 2]

    @property
    def lookat(self) -> torch.Tensor:
        return self.values[:, LOOKAT]

    def within(self, prior: CameraPrior) -> bool:
        v = self.values.detach()
        return bool(((v >= prior.low) & (v <= prior.high)).all())


def sample_prior(rng: torch.Generator, prior: CameraPrior, batch_size: int) -> CameraParams:
    """Draw φ′ independently per parameter; gaussians are clamped into [low, high]."""
    columns = []
    for p in prior.params:
        if p.family == "uniform":
            u = torch.rand(batch_size, generator=rng, dtype=DTYPE)
            columns.append(p.low + (p.high - p.low) * u)
        else:
            n = torch.randn(batch_size, generator=rng, dtype=DTYPE)
            columns.append((p.center + p.std * n).clamp(p.low, p.high))
    return CameraParams(torch.stack(columns, dim=1))


# ---------------------------------------------------------------------------
# Camera generator
# ---------------------------------------------------------------------------


def _softplus_mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden), nn.Softplus(),
        nn.Linear(hidden, hidden), nn.Softplus(),
        nn.Linear(hidden, out_dim),
    )


class CameraGenerator(nn.Module):
    """C(φ′, z, c) → φ with three Softplus heads and a sigmoid range map.

    The position head sees the normalized prior position and the class
    one-hot; the fov and look-at heads see their prior values and z.
    Outputs land in the open interval (low, high) of each parameter.
    """

    def __init__(self, prior: CameraPrior, z_dim: int, n_classes: int, hidden: int = 32) -> None:
        super().__init__()
        self.n_classes = n_classes
        self.register_buffer("low", prior.low)
        self.register_buffer("high", prior.high)
        self.pos_head = _softplus_mlp(2 + n_classes, hidden, 2)
        self.fov_head = _softplus_mlp(1 + z_dim, hidden, 1)
        self.lookat_head = _softplus_mlp(3 + z_dim, hidden, 3)
        self.to(DTYPE)

    def forward(self, phi_prior: torch.Tensor, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        x = 2 * (phi_prior - self.low) / (self.high - self.low) - 1
        onehot = nn.functional.one_hot(c, self.n_classes).to(x.dtype)
        logits = torch.cat([
            self.pos_head(torch.cat([x[:, POS], onehot], dim=1)),
            self.fov_head(torch.cat([x[:, FOV], z], dim=1)),
            self.lookat_head(torch.cat([x[:, LOOKAT], z], dim=1)),
        ], dim=1)
        return self.low + (self.high - self.low) * torch.sigmoid(logits)


class ResidualCameraGenerator(nn.Module):
    """φ = clamp(φ′ + Δ(φ′, z, c)): residual baseline for the camera ablation."""

    def __init__(self, prior: CameraPrior, z_dim: int, n_classes: int, hidden: int = 32) -> None:
        super().__init__()
        self.n_classes = n_classes
        self.register_buffer("low", prior.low)
        self.register_buffer("high", prior.high)
        self.net = nn.Sequential(
            nn.Linear(6 + z_dim + n_classes, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, 6),
        )
        self.to(DTYPE)

    def forward(self, phi_prior: torch.Tensor, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        x = 2 * (phi_prior - self.low) / (self.high - self.low) - 1
        onehot = nn.functional.one_hot(c, self.n_classes).to(x.dtype)
        delta = self.net(torch.cat([x, z, onehot], dim=1)) * (self.high - self.low)
        return torch.minimum(torch.maximum(phi_prior + delta, self.low), self.high)


CameraFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def generator_forward(
    camera: CameraFn, phi_prior: CameraParams, z: torch.Tensor, c: torch.Tensor,
) -> CameraParams:
    """Posterior cameras φ = C(φ′, z, c)."""
    if not (torch.isfinite(phi_prior.values).all() and torch.isfinite(z).all()):
        raise NonFiniteError("camera generator input is not finite")
    return CameraParams(camera(phi_prior.values, z, c))


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------


@dataclass
class CameraPenalty:
    """Per-parameter penalties [6] (batch mean), per-sample slopes [B, 6]."""

    losses: torch.Tensor
    slopes: torch.Tensor
    collapsed: bool


def diagonal_slopes(
    camera: CameraFn, phi_prior: torch.Tensor, z: torch.Tensor, c: torch.Tensor,
    *, create_graph: bool = True,
) -> torch.Tensor:
    """∂φ_i/∂φ′_i for every sample and parameter, shape [B, 6].

    Samples do not interact inside C, so the batch sum isolates each
    sample's own derivative.
    """
    x = phi_prior.detach().clone().requires_grad_(True)
    out = camera(x, z, c)
    columns = []
    for i in range(out.shape[1]):
        (g,) = grad(out[:, i].sum(), x, create_graph=create_graph)
        columns.append(g[:, i])
    return torch.stack(columns, dim=1)


def camera_gradient_penalty(
    camera: CameraFn, phi_prior: CameraParams, z: torch.Tensor, c: torch.Tensor,
) -> CameraPenalty:
    """L_φi = |g| + 1/|g| with g = ∂φ_i/∂φ′_i, averaged over the batch.

    Slopes below COLLAPSE_SLOPE mark a collapsed head and set ``collapsed``.
    There the penalty follows the tangent of 1/|g|: bounded by PENALTY_CAP,
    with a nonzero slope.
    """
    slopes = diagonal_slopes(camera, phi_prior.values, z, c)
    mag = slopes.abs()
    collapsed = mag < COLLAPSE_SLOPE
    inverse = 1.0 / mag.clamp_min(COLLAPSE_SLOPE)
    tangent = PENALTY_CAP - mag * (PENALTY_CAP**2 / 4.0)
    per_sample = mag + torch.where(collapsed, tangent, inverse)
    return CameraPenalty(
        losses=per_sample.mean(dim=0),
        slopes=slopes.detach(),
        collapsed=bool(collapsed.any()),
    )


def emd_to_uniform(samples: torch.Tensor, low: float, high: float) -> torch.Tensor:
    """Exact 1-D EMD between n samples and U[low, high].

    Sorted samples are matched to the n uniform quantile midpoints
    low + (high - low) (k + 1/2) / n.
    """
    n = samples.shape[0]
    if n < 2:
        raise ValueError("EMD needs at least two samples")
    ordered, _ = torch.sort(samples)
    k = torch.arange(n, dtype=samples.dtype, device=samples.device)
    targets = low + (high - low) * (k + 0.5) / n
    return (ordered - targets).abs().mean()


def emd_entropy_reg(
    camera: CameraFn,
    prior: CameraPrior,
    z: torch.Tensor,
    c: torch.Tensor,
    rng: torch.Generator,
) -> torch.Tensor:
    """Per-parameter EMD [6] between posterior samples and each uniform range.

    One prior draw per row of ``z``; the batch size is the sample count.
    """
    phi_prior = sample_prior(rng, prior, z.shape[0])
    phi = camera(phi_prior.values, z, c)
    return torch.stack([
        emd_to_uniform(phi[:, i], p.low, p.high) for i, p in enumerate(prior.params)
    ])


# ---------------------------------------------------------------------------
# View frame
# ---------------------------------------------------------------------------


def spherical_to_cartesian(yaw: torch.Tensor, pitch: torch.Tensor, radius) -> torch.Tensor:
    return torch.stack([
        radius * torch.sin(pitch) * torch.cos(yaw),
        radius * torch.sin(pitch) * torch.sin(yaw),
        radius * torch.cos(pitch),
    ], dim=-1)


@dataclass
class ViewFrame:
    """Camera origin, orthonormal basis and look-at point, each [B, 3]."""

    origin: torch.Tensor
    forward: torch.Tensor
    right: torch.Tensor
    up: torch.Tensor
    lookat: torch.Tensor

    def rotation(self) -> torch.Tensor:
        """Camera-to-world rotation [B, 3, 3] with columns (right, up, -forward)."""
        return torch.stack([self.right, self.up, -self.forward], dim=-1)


def build_view(phi: CameraParams, outer_radius: float) -> ViewFrame:
    """Origin on the outer sphere, forward axis towards the inner-ball look-at point.

    World +z is the up reference; pitch is kept PITCH_EPS away from the
    poles so the basis never degenerates.
    """
    v = phi.values
    pitch = v[:, 1].clamp(PITCH_EPS, math.pi - PITCH_EPS)
    origin = spherical_to_cartesian(v[:, 0], pitch, outer_radius)
    lookat = spherical_to_cartesian(v[:, 3], v[:, 4], v[:, 5])

    offset = lookat - origin
    dist = offset.norm(dim=-1, keepdim=True)
    if bool((dist < 1e-9).any()):
        raise DegenerateViewError("camera origin coincides with its look-at point")
    forward = offset / dist

    world_up = torch.zeros_like(forward)
    world_up[:, 2] = 1.0
    right = torch.linalg.cross(forward, world_up)
    right_norm = right.norm(dim=-1, keepdim=True)
    if bool((right_norm < 1e-9).any()):
        raise DegenerateViewError("forward axis is parallel to world up")
    right = right / right_norm
    up = torch.linalg.cross(right, forward)
    return ViewFrame(origin=origin, forward=forward, right=right, up=up, lookat=lookat)
