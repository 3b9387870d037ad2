"""Geometry and distribution metrics: Non-Flatness Score, Fréchet distance, instance selection."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import torch
from scipy.stats import multivariate_normal

from tridepth.camera import CameraParams, CameraPrior, build_view
from tridepth.config import Settings
from tridepth.diffmath import DTYPE
from tridepth.errors import MetricError
from tridepth.logging import get_logger, logged
from tridepth.render import PatchSpec, gen_rays, volume_render
from tridepth.scene import Generator

logger = get_logger(__name__)


@dataclass
class DepthHistogram:
    """Counts of normalized depth values over ``bins`` equal bins of [-1, 1]."""

    counts: np.ndarray
    total: int

    def __post_init__(self) -> None:
        if len(self.counts) < 2:
            raise ValueError("a depth histogram needs at least 2 bins")

    @classmethod
    def from_normalized(cls, d_bar: np.ndarray, bins: int) -> DepthHistogram:
        """Values outside [-1, 1] fall into the edge bins."""
        flat = np.clip(np.asarray(d_bar, dtype=np.float64).ravel(), -1.0, 1.0)
        counts, _ = np.histogram(flat, bins=bins, range=(-1.0, 1.0))
        return cls(counts, flat.size)

    def entropy(self) -> float:
        p = self.counts[self.counts > 0] / self.total
        return float(-(p * np.log(p)).sum())

    def perplexity(self) -> float:
        return math.exp(self.entropy())


def nfs(
    depth_maps: Iterable[np.ndarray | torch.Tensor],
    near: float,
    far: float,
    bins: int = 64,
    n_maps: int | None = None,
) -> float:
    """Mean exponentiated entropy of per-map depth histograms; lies in [1, bins].

    Raw depths are normalized with the near/far bounds before binning.
    """
    scores: list[float] = []
    for i, depth in enumerate(depth_maps):
        if n_maps is not None and i >= n_maps:
            break
        if isinstance(depth, torch.Tensor):
            depth = depth.detach().cpu().numpy()
        depth = np.asarray(depth, dtype=np.float64)
        if depth.size == 0:
            raise MetricError(f"depth map {i} is empty")
        d_bar = 2.0 * (depth - (near + far) / 2.0) / (far - near)
        scores.append(DepthHistogram.from_normalized(d_bar, bins).perplexity())
    if not scores:
        raise MetricError("no depth maps to score")
    return float(np.mean(scores))


def frontal_camera(prior: CameraPrior, batch_size: int) -> CameraParams:
    """The prior mean camera, repeated; used without the camera generator."""
    return CameraParams(prior.mean_camera().expand(batch_size, -1).clone())


@torch.no_grad()
def generated_depth_maps(
    generator: Generator,
    cfg: Settings,
    n_maps: int,
    rng: torch.Generator,
    batch_size: int = 16,
) -> Iterator[np.ndarray]:
    """Frontal-view raw depth maps of random scenes, with density culling."""
    prior = CameraPrior.from_settings(cfg)
    patch = PatchSpec.full(cfg.img_res, cfg.img_res)
    done = 0
    while done < n_maps:
        b = min(batch_size, n_maps - done)
        z = torch.randn(b, cfg.z_dim, generator=rng, dtype=DTYPE)
        c = torch.randint(cfg.n_classes, (b,), generator=rng)
        phi = frontal_camera(prior, b)
        rays = gen_rays(build_view(phi, cfg.outer_radius), phi.fov, patch, cfg.near, cfg.far)
        out = volume_render(generator(z, c), rays, cfg.n_steps, cull_fraction=cfg.nfs_cull_fraction)
        yield from out.depth.numpy()
        done += b


@logged(slow_ms=30_000)
def generator_nfs(generator: Generator, cfg: Settings, seed: int, n_maps: int | None = None) -> float:
    rng = torch.Generator().manual_seed(seed)
    n = n_maps or cfg.nfs_maps
    score = nfs(generated_depth_maps(generator, cfg, n, rng), cfg.near, cfg.far, cfg.nfs_bins)
    logger.info("generator nfs", nfs=score, maps=n)
    return score


# ---------------------------------------------------------------------------
# Feature statistics
# ---------------------------------------------------------------------------


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_features(cls, features: np.ndarray, eps: float = 1e-6) -> FeatureStats:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise MetricError(f"feature statistics need an [N >= 2, D] array, got {x.shape}")
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        return cls(x.mean(axis=0), cov + eps * np.eye(x.shape[1]))


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = scipy.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """‖μa - μb‖² + tr(Σa + Σb - 2 (Σa Σb)^½).

    tr (Σa Σb)^½ is taken from the eigenvalues of the symmetric product
    Σa^½ Σb Σa^½.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ValueError("feature statistics differ in dimension")
    try:
        root_a = _sqrt_psd(a.cov)
        inner = root_a @ b.cov @ root_a
        vals = scipy.linalg.eigh((inner + inner.T) / 2, eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise MetricError(f"matrix square root failed: {exc}") from exc
    if not np.isfinite(vals).all():
        raise MetricError("matrix square root produced non-finite eigenvalues")
    diff = a.mean - b.mean
    tr_cross = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_cross)
    return max(value, 0.0)


def instance_select(features: np.ndarray, keep_fraction: float, eps: float = 1e-6) -> np.ndarray:
    """Sorted indices of the ⌈qN⌉ samples with the highest Gaussian log-density."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep fraction must lie in (0, 1], got {keep_fraction}")
    stats = FeatureStats.from_features(features, eps)
    logpdf = multivariate_normal(stats.mean, stats.cov).logpdf(np.asarray(features, dtype=np.float64))
    logpdf = np.atleast_1d(logpdf)
    keep = math.ceil(keep_fraction * len(logpdf))
    order = np.argsort(-logpdf, kind="stable")
    return np.sort(order[:keep])


def write_report(out_dir: str | Path, name: str, values: dict) -> tuple[Path, Path]:
    """``<name>.txt`` with key=value lines and ``<name>.json`` with the same values."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, js = out / f"{name}.txt", out / f"{name}.json"
    txt.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
    js.write_text(json.dumps(values, indent=2, sort_keys=True, default=str))
    return txt, js
