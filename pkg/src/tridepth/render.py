"""Patch rays, volumetric integration of color and depth, depth files.

Image conventions: pixel (row i, column j) of an h x w patch covers the
normalized image point

    x = offset_x + scale * (j + 0.5) / w
    y = offset_y + scale * (i + 0.5) / h

with (0, 0) the top-left corner of the full image. Camera-space screen
coordinates are u = 2x - 1 (right) and v = 1 - 2y (up).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from tridepth.camera import ViewFrame
from tridepth.diffmath import DTYPE
from tridepth.errors import DepthFormatError, NonFiniteError
from tridepth.scene import SceneFn

DEPTH_MAGIC = b"DEPTHF32"
DEPTH_HEADER = struct.Struct("<8sII")  # magic, h, w: 16 bytes


@dataclass(frozen=True)
class PatchSpec:
    """Square sub-window [offset, offset + scale] of the unit image, h x w pixels."""

    scale: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0
    h: int = 32
    w: int = 32

    def __post_init__(self) -> None:
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"patch scale must lie in (0, 1], got {self.scale}")
        limit = 1.0 - self.scale + 1e-12
        if not (0.0 <= self.offset_x <= limit and 0.0 <= self.offset_y <= limit):
            raise ValueError("patch offsets must lie in [0, 1 - scale]")
        if self.h < 1 or self.w < 1:
            raise ValueError("patch needs h, w >= 1")

    def as_vector(self) -> tuple[float, float, float]:
        """ψ = (scale, offset_x, offset_y), the discriminator's patch condition."""
        return (self.scale, self.offset_x, self.offset_y)

    @classmethod
    def full(cls, h: int, w: int) -> PatchSpec:
        return cls(1.0, 0.0, 0.0, h, w)


def sample_patch(rng: torch.Generator, scale_min: float, h: int, w: int) -> PatchSpec:
    """Scale uniform in [scale_min, 1], offsets uniform over the remaining room."""
    u = torch.rand(3, generator=rng, dtype=DTYPE).tolist()
    s = scale_min + (1.0 - scale_min) * u[0]
    return PatchSpec(s, (1.0 - s) * u[1], (1.0 - s) * u[2], h, w)


@dataclass
class RayBatch:
    """Rays of B views, origins and unit directions of shape [B, h*w, 3]."""

    origins: torch.Tensor
    directions: torch.Tensor
    near: float
    far: float
    h: int
    w: int

    def __post_init__(self) -> None:
        if not self.near < self.far:
            raise ValueError("ray bounds need near < far")

    @property
    def batch_size(self) -> int:
        return self.origins.shape[0]


def pixel_grid(patch: PatchSpec, dtype=DTYPE) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalized image coordinates (x, y) of the patch pixel centers, each [h, w]."""
    cols = (torch.arange(patch.w, dtype=dtype) + 0.5) / patch.w
    rows = (torch.arange(patch.h, dtype=dtype) + 0.5) / patch.h
    y, x = torch.meshgrid(
        patch.offset_y + patch.scale * rows,
        patch.offset_x + patch.scale * cols,
        indexing="ij",
    )
    return x, y


def gen_rays(
    view: ViewFrame, fov: torch.Tensor, patch: PatchSpec, near: float, far: float,
) -> RayBatch:
    """Pinhole rays through the patch window; ``fov`` [B] is the full field of view."""
    x, y = pixel_grid(patch, view.origin.dtype)
    u = (2 * x - 1).reshape(1, -1, 1)
    v = (1 - 2 * y).reshape(1, -1, 1)
    half = torch.tan(fov / 2).reshape(-1, 1, 1)
    d = (
        view.forward[:, None, :]
        + half * (u * view.right[:, None, :] + v * view.up[:, None, :])
    )
    d = d / d.norm(dim=-1, keepdim=True)
    origins = view.origin[:, None, :].expand_as(d)
    return RayBatch(origins, d, near, far, patch.h, patch.w)


@dataclass
class RenderOut:
    """rgb [B, 3, h, w]; raw depth and accumulated weight [B, h, w]."""

    rgb: torch.Tensor
    depth: torch.Tensor
    weight: torch.Tensor


def sample_depths(
    batch: int, n_rays: int, n_steps: int, near: float, far: float,
    rng: torch.Generator | None = None, dtype=DTYPE,
) -> tuple[torch.Tensor, float]:
    """Sample distances [B, R, n] and the bin width Δ.

    Bin midpoints without ``rng``, one uniform draw per bin with it.
    """
    delta = (far - near) / n_steps
    base = near + delta * torch.arange(n_steps, dtype=dtype)
    if rng is None:
        jitter = torch.full((batch, n_rays, n_steps), 0.5, dtype=dtype)
    else:
        jitter = torch.rand(batch, n_rays, n_steps, generator=rng, dtype=dtype)
    return base + delta * jitter, delta


def ray_weights(sigma: torch.Tensor, delta: float) -> tuple[torch.Tensor, torch.Tensor]:
    """T_i = exp(-Σ_{j<i} σ_j Δ) and w_i = T_i (1 - exp(-σ_i Δ)) along the last axis."""
    tau = sigma * delta
    before = torch.cumsum(F.pad(tau[..., :-1], (1, 0)), dim=-1)
    transmittance = torch.exp(-before)
    return transmittance, transmittance * (1.0 - torch.exp(-tau))


def composite(
    sigma: torch.Tensor, rgb: torch.Tensor, t: torch.Tensor, delta: float, background: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Quadrature along the last sample axis.

    Returns (rgb, depth = Σ w_i t_i, weight = Σ w_i).
    """
    _, weights = ray_weights(sigma, delta)
    acc = weights.sum(dim=-1)
    color = (weights[..., None] * rgb).sum(dim=-2) + (1.0 - acc)[..., None] * background
    depth = (weights * t).sum(dim=-1)
    return color, depth, acc


def cull_density(sigma: torch.Tensor, fraction: float) -> torch.Tensor:
    """Zero every density at or below the per-scene ``fraction`` quantile."""
    if fraction <= 0:
        return sigma
    flat = sigma.reshape(sigma.shape[0], -1)
    threshold = torch.quantile(flat.detach(), fraction, dim=1)
    keep = flat > threshold[:, None]
    return torch.where(keep, flat, torch.zeros_like(flat)).view_as(sigma)


def volume_render(
    scene: SceneFn,
    rays: RayBatch,
    n_steps: int,
    *,
    rng: torch.Generator | None = None,
    background: float = 1.0,
    cull_fraction: float = 0.0,
) -> RenderOut:
    """Integrate color, raw depth and opacity of ``scene`` along ``rays``.

    Raw depth is not divided by the accumulated weight: empty rays get
    d = 0. ``cull_fraction`` zeroes the lowest densities per scene before
    integration (used for the flatness metric).
    """
    if n_steps < 2:
        raise ValueError("volume_render needs n_steps >= 2")
    b, r, _ = rays.origins.shape
    t, delta = sample_depths(b, r, n_steps, rays.near, rays.far, rng, rays.origins.dtype)
    points = rays.origins[:, :, None, :] + t[..., None] * rays.directions[:, :, None, :]
    rgb, sigma = scene(points.reshape(b, r * n_steps, 3))
    sigma = sigma.reshape(b, r, n_steps)
    if not torch.isfinite(sigma).all():
        raise NonFiniteError("density field returned non-finite values")
    sigma = cull_density(sigma, cull_fraction)
    color, depth, acc = composite(sigma, rgb.reshape(b, r, n_steps, 3), t, delta, background)
    h, w = rays.h, rays.w
    return RenderOut(
        rgb=color.reshape(b, h, w, 3).permute(0, 3, 1, 2),
        depth=depth.reshape(b, h, w),
        weight=acc.reshape(b, h, w),
    )


def normalize_depth(
    d: torch.Tensor, weight: torch.Tensor | None, near: float, far: float, shift,
) -> torch.Tensor:
    """d̄ = 2 (d - (near + far + b) / 2) / (far - near - b), clamped to [-1, 1].

    With ``weight`` the transparent remainder (1 - weight) is placed at the
    far plane first, so empty rays read as background (+1) like real depth.
    """
    span = far - near - shift
    if bool(torch.as_tensor(span <= 0).any()):
        raise ValueError(f"depth shift {float(shift):.4g} leaves no depth range in [{near}, {far}]")
    if weight is not None:
        d = d + (1.0 - weight) * far
    return (2.0 * (d - (near + far + shift) / 2.0) / span).clamp(-1.0, 1.0)


def extract_patch(images: torch.Tensor, patch: PatchSpec) -> torch.Tensor:
    """Bilinearly resample images [B, C, H, W] at the patch pixel centers."""
    x, y = pixel_grid(patch, images.dtype)
    grid = torch.stack([2 * x - 1, 2 * y - 1], dim=-1)
    grid = grid[None].expand(images.shape[0], -1, -1, -1)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="border", align_corners=False)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_pixmap(path: str | Path, rgb: np.ndarray | torch.Tensor) -> None:
    """8-bit binary portable pixmap (P6) from an [h, w, 3] array in [0, 1]."""
    if isinstance(rgb, torch.Tensor):
        rgb = rgb.detach().cpu().numpy()
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"pixmap needs [h, w, 3], got {rgb.shape}")
    h, w, _ = rgb.shape
    data = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pixmap(path: str | Path) -> np.ndarray:
    """Read a P6 pixmap into a float [h, w, 3] array in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DepthFormatError(f"{path}: truncated pixmap header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P6":
        raise DepthFormatError(f"{path}: not a P6 pixmap")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DepthFormatError(f"{path}: bad pixmap header") from exc
    if maxval != 255:
        raise DepthFormatError(f"{path}: only 8-bit pixmaps are supported")
    body = raw[pos : pos + h * w * 3]
    if len(body) != h * w * 3:
        raise DepthFormatError(f"{path}: pixmap raster is truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_depth(path: str | Path, depth: np.ndarray | torch.Tensor) -> None:
    """Little-endian float32 depth map behind a 16-byte (magic, h, w) header."""
    if isinstance(depth, torch.Tensor):
        depth = depth.detach().cpu().numpy()
    if depth.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_HEADER.pack(DEPTH_MAGIC, h, w))
        fh.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def read_depth(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < DEPTH_HEADER.size:
        raise DepthFormatError(f"{path}: shorter than the depth header")
    magic, h, w = DEPTH_HEADER.unpack_from(raw)
    if magic != DEPTH_MAGIC:
        raise DepthFormatError(f"{path}: bad magic {magic!r}")
    body = raw[DEPTH_HEADER.size :]
    if len(body) != 4 * h * w:
        raise DepthFormatError(f"{path}: expected {4 * h * w} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).copy()

