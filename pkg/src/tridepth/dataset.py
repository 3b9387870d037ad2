"""Procedural desk-scale dataset: analytic primitives, true and estimated depth.

On-disk layout of a dataset directory::

    meta.json              sizes, render bounds, config hash, seed
    labels.npy             int64 class per scene (class = primitive kind)
    rgb/00000.ppm          8-bit renders on a white background
    depth/00000.depth      true ray depth (far where nothing is hit)
    est_depth/00000.depth  simulated monocular estimate of the true depth
    cameras.json           ground-truth cameras, for analysis only

Training reads ``rgb``, ``est_depth`` and ``labels`` only; replacing the
``est_depth`` files plugs in a real depth estimator.
"""

from __future__ import annotations

import json
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch

from tridepth.camera import CameraParams, build_view
from tridepth.config import Settings, config_hash
from tridepth.depthsup import CorruptionConfig, normalize_real_depth, simulate_estimated_depth
from tridepth.diffmath import DTYPE, tensor
from tridepth.errors import DatasetExistsError, DepthFormatError
from tridepth.logging import get_logger, logged
from tridepth.render import (
    PatchSpec,
    gen_rays,
    read_depth,
    read_pixmap,
    volume_render,
    write_depth,
    write_pixmap,
)

logger = get_logger(__name__)

KINDS: tuple[str, ...] = ("sphere", "box")
GT_CAMERAS_FILE = "cameras.json"
META_FILE = "meta.json"
LIGHT_DIR = np.array([0.4, -0.5, 0.77]) / np.linalg.norm([0.4, -0.5, 0.77])
AMBIENT = 0.35
INSIDE_DENSITY = 1e3
VOLUME_CHECK_STEPS = 256
VOLUME_CHECK_TOL = 1e-2


@dataclass(frozen=True)
class Primitive:
    """Sphere (``size`` = radius) or axis-aligned box (``size`` = half-extent)."""

    kind: Literal["sphere", "box"]
    center: tuple[float, float, float]
    size: float
    albedo: tuple[float, float, float]

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First hit distance (inf on miss) and unit normals, for rays [R, 3]."""
        c = np.asarray(self.center)
        if self.kind == "sphere":
            oc = origins - c
            b = np.einsum("ij,ij->i", dirs, oc)
            disc = b * b - (np.einsum("ij,ij->i", oc, oc) - self.size**2)
            root = np.sqrt(np.maximum(disc, 0.0))
            t = np.where(-b - root > 0, -b - root, -b + root)
            t = np.where((disc >= 0) & (t > 0), t, np.inf)
            hit = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
            normals = (hit - c) / self.size
            return t, normals
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (c - self.size - origins) / dirs
            t2 = (c + self.size - origins) / dirs
        t_enter = np.nanmax(np.minimum(t1, t2), axis=1)
        t_exit = np.nanmin(np.maximum(t1, t2), axis=1)
        t = np.where(t_enter > 0, t_enter, t_exit)
        t = np.where((t_exit >= t_enter) & (t > 0), t, np.inf)
        hit = origins + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
        rel = (hit - c) / self.size
        axis = np.argmax(np.abs(rel), axis=1)
        normals = np.zeros_like(rel)
        normals[np.arange(len(rel)), axis] = np.sign(rel[np.arange(len(rel)), axis])
        return t, normals

    def contains(self, points: torch.Tensor) -> torch.Tensor:
        c = torch.as_tensor(self.center, dtype=points.dtype)
        if self.kind == "sphere":
            return (points - c).norm(dim=-1) <= self.size
        return ((points - c).abs() <= self.size).all(dim=-1)


@dataclass
class SyntheticScene:
    """A few primitives of one kind; the kind is the scene's class."""

    primitives: list[Primitive]
    label: int

    def trace(self, origins: np.ndarray, dirs: np.ndarray, near: float, far: float) -> tuple[np.ndarray, np.ndarray]:
        """Lambertian color [R, 3] on white and ray depth [R] (far on miss)."""
        best = np.full(len(origins), np.inf)
        color = np.ones((len(origins), 3))
        for prim in self.primitives:
            t, normals = prim.intersect(origins, dirs)
            closer = t < best
            shade = AMBIENT + (1 - AMBIENT) * np.clip(normals @ LIGHT_DIR, 0.0, 1.0)
            color[closer] = np.asarray(prim.albedo) * shade[closer, None]
            best = np.where(closer, t, best)
        depth = np.where(np.isfinite(best), np.clip(best, near, far), far)
        return color, depth

    def field(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Analytic density field: large constant σ inside a primitive, 0 outside."""
        sigma = torch.zeros(points.shape[:-1], dtype=points.dtype)
        rgb = torch.ones((*points.shape[:-1], 3), dtype=points.dtype)
        for prim in self.primitives:
            inside = prim.contains(points)
            sigma = torch.where(inside, torch.full_like(sigma, INSIDE_DENSITY), sigma)
            albedo = torch.as_tensor(prim.albedo, dtype=points.dtype)
            rgb = torch.where(inside[..., None], albedo, rgb)
        return rgb, sigma


def random_scene(rng: np.random.Generator, label: int) -> SyntheticScene:
    kind = KINDS[label]
    prims = []
    for i in range(int(rng.integers(1, 3))):
        center = tuple(rng.uniform(-0.08, 0.08, size=3)) if i == 0 else tuple(rng.uniform(-0.15, 0.15, size=3))
        size = float(rng.uniform(0.12, 0.2)) if i == 0 else float(rng.uniform(0.05, 0.1))
        if kind == "box":
            size *= 0.8
        prims.append(Primitive(kind, center, size, tuple(rng.uniform(0.15, 0.85, size=3))))
    return SyntheticScene(prims, label)


@dataclass(frozen=True)
class GroundTruthCamera:
    """Frontal-ish dataset camera: yaw ~ N(0, 0.35), pitch ~ π/2 + N(0, 0.15), fixed fov."""

    yaw: float
    pitch: float
    fov: float = 0.9

    @classmethod
    def sample(cls, rng: np.random.Generator) -> GroundTruthCamera:
        yaw = float(np.clip(rng.normal(0.0, 0.35), -1.0, 1.0))
        pitch = float(np.clip(math.pi / 2 + rng.normal(0.0, 0.15), 1.1, 2.0))
        return cls(yaw, pitch)

    def params(self) -> CameraParams:
        return CameraParams(tensor([[self.yaw, self.pitch, self.fov, 0.0, math.pi / 2, 0.0]]))


def render_scene(
    scene: SyntheticScene, camera: GroundTruthCamera, res: int, cfg: Settings,
) -> tuple[np.ndarray, np.ndarray]:
    """(rgb [res, res, 3], true depth [res, res]) by analytic ray casting."""
    phi = camera.params()
    rays = gen_rays(build_view(phi, cfg.outer_radius), phi.fov, PatchSpec.full(res, res), cfg.near, cfg.far)
    origins = rays.origins[0].numpy()
    dirs = rays.directions[0].numpy()
    color, depth = scene.trace(origins, dirs, cfg.near, cfg.far)
    return color.reshape(res, res, 3), depth.reshape(res, res)


def render_depth_volumetric(
    scene: SyntheticScene, camera: GroundTruthCamera, res: int, cfg: Settings,
    n_steps: int = VOLUME_CHECK_STEPS,
) -> np.ndarray:
    """True depth [res, res] by quadrature over ``scene.field``; empty rays read far."""
    phi = camera.params()
    rays = gen_rays(build_view(phi, cfg.outer_radius), phi.fov, PatchSpec.full(res, res), cfg.near, cfg.far)
    out = volume_render(scene.field, rays, n_steps)
    depth = out.depth + (1.0 - out.weight) * cfg.far
    return depth[0].numpy()


def volumetric_agreement(
    scene: SyntheticScene, camera: GroundTruthCamera, res: int, cfg: Settings,
    tol: float = VOLUME_CHECK_TOL,
) -> float:
    """Fraction of pixels where analytic and quadrature depth differ by at most ``tol``."""
    _, analytic = render_scene(scene, camera, res, cfg)
    volumetric = render_depth_volumetric(scene, camera, res, cfg)
    return float(np.mean(np.abs(analytic - volumetric) <= tol))


@dataclass
class _Item:
    rgb: np.ndarray
    depth: np.ndarray
    est_depth: np.ndarray
    label: int
    camera: GroundTruthCamera
    scene: SyntheticScene


def _make_item(index: int, seed: np.random.SeedSequence, cfg: Settings) -> _Item:
    rng = np.random.default_rng(seed)
    label = int(rng.integers(0, cfg.n_classes))
    scene = random_scene(rng, label)
    camera = GroundTruthCamera.sample(rng)
    rgb, depth = render_scene(scene, camera, cfg.img_res, cfg)
    est = simulate_estimated_depth(depth, CorruptionConfig.from_settings(cfg), rng)
    return _Item(rgb, depth, est, label, camera, scene)


def _prepare_dir(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise DatasetExistsError(f"{out} is not empty; pass overwrite to replace it")
        shutil.rmtree(out)
    for sub in ("rgb", "depth", "est_depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)


@logged(slow_ms=60_000)
def gen_dataset(cfg: Settings, out: str | Path, seed: int, *, overwrite: bool = False) -> Path:
    """Render ``cfg.n_scenes`` scenes into ``out``; bitwise reproducible per seed."""
    if not 1 <= cfg.n_classes <= len(KINDS):
        raise ValueError(f"synthetic data supports 1..{len(KINDS)} classes, got {cfg.n_classes}")
    out = Path(out)
    _prepare_dir(out, overwrite)
    seeds = np.random.SeedSequence(seed).spawn(cfg.n_scenes)

    with ThreadPoolExecutor(max_workers=max(1, cfg.data_workers)) as pool:
        items = list(pool.map(lambda args: _make_item(*args, cfg), enumerate(seeds)))

    for i, item in enumerate(items):
        write_pixmap(out / "rgb" / f"{i:05d}.ppm", item.rgb)
        write_depth(out / "depth" / f"{i:05d}.depth", item.depth)
        write_depth(out / "est_depth" / f"{i:05d}.depth", item.est_depth)
    np.save(out / "labels.npy", np.array([it.label for it in items], dtype=np.int64))
    (out / GT_CAMERAS_FILE).write_text(json.dumps(
        [{"yaw": it.camera.yaw, "pitch": it.camera.pitch, "fov": it.camera.fov} for it in items],
        indent=1,
    ))
    meta = {
        "n_scenes": cfg.n_scenes,
        "img_res": cfg.img_res,
        "n_classes": cfg.n_classes,
        "near": cfg.near,
        "far": cfg.far,
        "seed": seed,
        "config_hash": config_hash(cfg),
    }
    agreement = volumetric_agreement(items[0].scene, items[0].camera, cfg.img_res, cfg)
    if agreement < 0.9:
        logger.warning("analytic and volumetric depth disagree", agreement=agreement, tol=VOLUME_CHECK_TOL)
    else:
        logger.debug("volumetric depth check", agreement=agreement)
    (out / META_FILE).write_text(json.dumps(meta, indent=2))
    logger.info("dataset written", path=str(out), scenes=cfg.n_scenes, seed=seed)
    return out


# ---------------------------------------------------------------------------
# Loader
# ---------------------------------------------------------------------------


@dataclass
class RealBatch:
    index: torch.Tensor  # [B] dataset rows
    rgb: torch.Tensor  # [B, 3, H, W] in [0, 1]
    depth: torch.Tensor  # [B, H, W] normalized estimated depth
    c: torch.Tensor  # [B]


@dataclass
class SyntheticDataset:
    """Images, normalized estimated depths and labels held in memory."""

    root: Path
    rgb: torch.Tensor
    depth: torch.Tensor
    labels: torch.Tensor
    meta: dict = field(default_factory=dict)

    @classmethod
    def load(cls, root: str | Path) -> SyntheticDataset:
        root = Path(root)
        try:
            meta = json.loads((root / META_FILE).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DepthFormatError(f"{root}: missing or unreadable {META_FILE}") from exc
        labels = np.load(root / "labels.npy")
        n = int(meta["n_scenes"])
        rgb = np.stack([read_pixmap(root / "rgb" / f"{i:05d}.ppm") for i in range(n)])
        est = np.stack([read_depth(root / "est_depth" / f"{i:05d}.depth") for i in range(n)])
        logger.info("dataset loaded", path=str(root), scenes=n)
        return cls(
            root=root,
            rgb=torch.as_tensor(rgb, dtype=DTYPE).permute(0, 3, 1, 2).contiguous(),
            depth=torch.as_tensor(normalize_real_depth(est), dtype=DTYPE),
            labels=torch.as_tensor(labels, dtype=torch.long),
            meta=meta,
        )

    def __len__(self) -> int:
        return self.rgb.shape[0]

    def sample(self, rng: torch.Generator, batch_size: int) -> RealBatch:
        index = torch.randint(len(self), (batch_size,), generator=rng)
        return RealBatch(index, self.rgb[index], self.depth[index], self.labels[index])

    def true_depth_maps(self):
        """Yield the raw true depth maps, for the flatness metric on data."""
        for i in range(len(self)):
            yield read_depth(self.root / "depth" / f"{i:05d}.depth")
