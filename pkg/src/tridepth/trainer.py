"""Training state and one alternating discriminator / generator step."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from tridepth.adversary import (
    DiscriminatorLossParts,
    Discriminator,
    GeneratorLossParts,
    LossWeights,
    TeacherExtractor,
    d_adv_loss,
    discriminator_loss,
    distill_loss,
    g_adv_loss,
    generator_loss,
    load_external_features,
    r1_penalty,
)
from tridepth.camera import (
    PARAM_NAMES,
    CameraGenerator,
    CameraParams,
    CameraPrior,
    ResidualCameraGenerator,
    build_view,
    camera_gradient_penalty,
    emd_entropy_reg,
    generator_forward,
    sample_prior,
)
from tridepth.config import Settings
from tridepth.dataset import RealBatch, SyntheticDataset
from tridepth.depthsup import DepthAdaptor, SelectionPolicy, select_depth
from tridepth.diffmath import DTYPE, AdamState, adam_step, grad, tensor
from tridepth.errors import TrainingDivergedError
from tridepth.logging import get_logger, reset_step, start_step
from tridepth.render import (
    PatchSpec,
    extract_patch,
    gen_rays,
    normalize_depth,
    sample_patch,
    volume_render,
)
from tridepth.scene import Generator

logger = get_logger(__name__)

NETWORKS = ("generator", "camera", "adaptor", "disc")
SELECTION_NAMES = ("raw", "a1", "a2", "a3")


@dataclass
class TrainState:
    cfg: Settings
    generator: Generator
    camera: nn.Module
    adaptor: DepthAdaptor
    disc: Discriminator
    ema: Generator
    teacher: TeacherExtractor | None
    teacher_features: torch.Tensor  # [n_scenes, E], one row per dataset item
    optim: dict[str, AdamState]
    rng: torch.Generator
    step: int = 0
    prior: CameraPrior = field(init=False)

    def __post_init__(self) -> None:
        self.prior = CameraPrior.from_settings(self.cfg)

    def network(self, name: str) -> nn.Module:
        return getattr(self, name)

    def params(self, name: str) -> list[nn.Parameter]:
        return list(self.network(name).parameters())


def build_camera(cfg: Settings, prior: CameraPrior) -> nn.Module:
    if cfg.camera_reg == "residual":
        return ResidualCameraGenerator(prior, cfg.z_dim, cfg.n_classes, cfg.camera_hidden)
    return CameraGenerator(prior, cfg.z_dim, cfg.n_classes, cfg.camera_hidden)


def init_state(
    cfg: Settings,
    data: SyntheticDataset | None = None,
    *,
    teacher_features: torch.Tensor | None = None,
) -> TrainState:
    """Fresh networks, optimizers and RNG for ``cfg.seed``.

    Teacher features of every dataset image are computed once here, read
    from ``cfg.teacher_features_path``, or passed in (checkpoint restore).
    """
    torch.manual_seed(cfg.seed)
    prior = CameraPrior.from_settings(cfg)
    teacher = None
    if not cfg.teacher_features_path:
        teacher = TeacherExtractor(cfg.teacher_dim, cfg.teacher_channels, cfg.teacher_seed)
    if teacher_features is not None:
        feats = teacher_features
    elif data is None:
        raise ValueError("init_state needs a dataset or precomputed teacher features")
    elif teacher is None:
        feats = load_external_features(cfg.teacher_features_path, len(data))
    else:
        feats = teacher(to_disc_rgb(data.rgb))

    generator = Generator(cfg)
    modules = {
        "generator": generator,
        "camera": build_camera(cfg, prior),
        "adaptor": DepthAdaptor(cfg.adaptor_channels),
        "disc": Discriminator(cfg.n_classes, feats.shape[1], cfg.disc_channels, cfg.disc_hidden),
    }
    optim = {
        name: AdamState.for_params(
            list(m.parameters()), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
        )
        for name, m in modules.items()
    }
    ema = copy.deepcopy(generator).requires_grad_(False)
    return TrainState(
        cfg=cfg,
        ema=ema,
        teacher=teacher,
        teacher_features=feats,
        optim=optim,
        rng=torch.Generator().manual_seed(cfg.seed),
        **modules,
    )


# ---------------------------------------------------------------------------
# Sample assembly
# ---------------------------------------------------------------------------


@dataclass
class FakeBatch:
    rgbd: torch.Tensor  # [B, 4, h, w]
    c: torch.Tensor
    z: torch.Tensor
    phi_prior: CameraParams
    phi: CameraParams
    choices: torch.Tensor  # [B], -1 when depth is off


def to_disc_rgb(rgb: torch.Tensor) -> torch.Tensor:
    return rgb * 2 - 1


def sample_fakes(state: TrainState, batch_size: int, patch: PatchSpec) -> FakeBatch:
    """z, c, φ′ → C → render patch → normalize depth → adapt and select."""
    cfg, rng = state.cfg, state.rng
    z = torch.randn(batch_size, cfg.z_dim, generator=rng, dtype=DTYPE)
    c = torch.randint(cfg.n_classes, (batch_size,), generator=rng)
    phi_prior = sample_prior(rng, state.prior, batch_size)
    phi = generator_forward(state.camera, phi_prior, z, c)
    rays = gen_rays(build_view(phi, cfg.outer_radius), phi.fov, patch, cfg.near, cfg.far)
    out = volume_render(
        state.generator(z, c), rays, cfg.n_steps,
        rng=rng, background=1.0 if cfg.white_background else 0.0,
    )
    if cfg.use_depth:
        d_bar = normalize_depth(out.depth, out.weight, cfg.near, cfg.far, state.generator.depth_shift)
        depth, choices = select_depth(d_bar, state.adaptor(d_bar), SelectionPolicy(cfg.p_depth), rng)
    else:
        depth = torch.zeros_like(out.depth)
        choices = torch.full((batch_size,), -1, dtype=torch.long)
    rgbd = torch.cat([to_disc_rgb(out.rgb), depth[:, None]], dim=1)
    return FakeBatch(rgbd, c, z, phi_prior, phi, choices)


def real_rgbd(real: RealBatch, patch: PatchSpec, use_depth: bool) -> torch.Tensor:
    rgb = extract_patch(real.rgb, patch)
    if use_depth:
        depth = extract_patch(real.depth[:, None], patch)
    else:
        depth = torch.zeros_like(rgb[:, :1])
    return torch.cat([to_disc_rgb(rgb), depth], dim=1)


# ---------------------------------------------------------------------------
# Step
# ---------------------------------------------------------------------------


def _check_finite(terms: dict[str, torch.Tensor]) -> None:
    values = {k: float(v.detach()) for k, v in terms.items()}
    for name, value in values.items():
        if not math.isfinite(value):
            logger.error("loss diverged", term=name, **values)
            raise TrainingDivergedError(name, values)


def _update(state: TrainState, names: tuple[str, ...], loss: torch.Tensor) -> None:
    params = [p for n in names for p in state.params(n)]
    grads = grad(loss, params)
    offset = 0
    for name in names:
        n = len(state.params(name))
        _, state.optim[name] = adam_step(state.params(name), grads[offset : offset + n], state.optim[name])
        offset += n


def camera_regularizer(state: TrainState, fakes: FakeBatch) -> tuple[torch.Tensor, bool]:
    """Per-parameter camera losses [6] for the configured regularizer and a collapse flag."""
    cfg = state.cfg
    if cfg.camera_reg == "gradpen":
        pen = camera_gradient_penalty(state.camera, fakes.phi_prior, fakes.z, fakes.c)
        return pen.losses, pen.collapsed
    if cfg.camera_reg == "emd":
        z = torch.randn(cfg.emd_samples, cfg.z_dim, generator=state.rng, dtype=DTYPE)
        c = torch.randint(cfg.n_classes, (cfg.emd_samples,), generator=state.rng)
        return emd_entropy_reg(state.camera, state.prior, z, c, state.rng), False
    return torch.zeros(len(PARAM_NAMES), dtype=DTYPE), False


@torch.no_grad()
def ema_update(state: TrainState, batch_size: int) -> None:
    """ema ← β ema + (1 - β) G with β = 0.5^(B / half-life in images)."""
    beta = 0.5 ** (batch_size / max(state.cfg.ema_half_life_images, 1e-8))
    for p_ema, p in zip(state.ema.parameters(), state.generator.parameters()):
        p_ema.copy_(p.lerp(p_ema, beta))
    for b_ema, b in zip(state.ema.buffers(), state.generator.buffers()):
        b_ema.copy_(b)


def train_step(state: TrainState, real: RealBatch) -> tuple[TrainState, dict[str, float]]:
    """One D-step then one G-step on a shared patch; returns weighted loss terms.

    Reported weighted parts sum to ``loss_d`` and ``loss_g``.
    """
    cfg = state.cfg
    weights = LossWeights.from_settings(cfg)
    start_step(state.step)
    batch = real.rgb.shape[0]
    patch = sample_patch(state.rng, cfg.patch_scale_min, cfg.patch_res, cfg.patch_res)
    psi = tensor(patch.as_vector()).expand(batch, -1)

    # Discriminator
    with torch.no_grad():
        fakes = sample_fakes(state, batch, patch)
    reals = real_rgbd(real, patch, cfg.use_depth)
    s_real, e_hat = state.disc(reals, real.c, psi)
    s_fake, _ = state.disc(fakes.rgbd, fakes.c, psi)
    r1_scale = cfg.r1_interval
    if state.step % cfg.r1_interval == 0 and cfg.lambda_r1 > 0:
        r1 = r1_penalty(lambda x: state.disc(x, real.c, psi)[0], reals)
    else:
        r1 = torch.zeros((), dtype=DTYPE)
    d_parts = DiscriminatorLossParts(
        adv=d_adv_loss(s_real, s_fake),
        dist=distill_loss(state.teacher_features[real.index], e_hat),
        r1=r1,
    )
    loss_d = discriminator_loss(d_parts, weights, r1_scale=r1_scale)
    d_terms = {
        "d/adv": d_parts.adv,
        "d/dist": weights.dist * d_parts.dist,
        "d/r1": r1_scale * weights.r1 * d_parts.r1,
    }
    _check_finite({**d_terms, "loss_d": loss_d})
    _update(state, ("disc",), loss_d)

    # Generator, camera and adaptor
    fakes = sample_fakes(state, batch, patch)
    s_fake, _ = state.disc(fakes.rgbd, fakes.c, psi)
    cam_losses, collapsed = camera_regularizer(state, fakes)
    g_parts = GeneratorLossParts(adv=g_adv_loss(s_fake), camera=cam_losses)
    loss_g = generator_loss(g_parts, weights)
    weighted_cam = weights.camera_vector() * cam_losses
    g_terms = {
        "g/adv": g_parts.adv,
        "g/cam_pos": weighted_cam[0:2].sum(),
        "g/cam_fov": weighted_cam[2],
        "g/cam_lookat": weighted_cam[3:6].sum(),
    }
    _check_finite({**g_terms, "loss_g": loss_g})
    _update(state, ("generator", "camera", "adaptor"), loss_g)
    if collapsed:
        logger.warning("camera head collapsed", step=state.step)

    ema_update(state, batch)
    state.step += 1

    metrics = {k: float(v.detach()) for k, v in {**d_terms, **g_terms}.items()}
    metrics["loss_d"] = float(loss_d.detach())
    metrics["loss_g"] = float(loss_g.detach())
    metrics["raw/dist"] = float(d_parts.dist.detach())
    metrics["raw/r1"] = float(d_parts.r1.detach())
    for name, value in zip(PARAM_NAMES, cam_losses.detach().tolist()):
        metrics[f"raw/cam_{name}"] = value
    for i, name in enumerate(SELECTION_NAMES):
        metrics[f"sel/{name}"] = int((fakes.choices == i).sum())
    metrics["camera_collapsed"] = int(collapsed)
    metrics["depth_shift"] = float(state.generator.depth_shift.detach())
    metrics["patch_scale"] = patch.scale
    reset_step()
    return state, metrics
