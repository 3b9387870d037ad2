"""Command-line entry point: ``tridepth <command> [flags]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from tridepth import checkpoint
from tridepth.adversary import TeacherExtractor, load_external_features
from tridepth.camera import build_view, generator_forward, sample_prior
from tridepth.config import Settings, config_hash, load_settings
from tridepth.dataset import SyntheticDataset, gen_dataset
from tridepth.diffmath import DTYPE
from tridepth.errors import TridepthError
from tridepth.evalkit import (
    FeatureStats,
    frechet_distance,
    generator_nfs,
    instance_select,
    nfs,
    write_report,
)
from tridepth.experiments import ablate_camera, ablate_depth, run_record, run_training
from tridepth.logging import get_logger, setup_logging
from tridepth.render import PatchSpec, gen_rays, volume_render, write_depth, write_pixmap
from tridepth.trainer import TrainState, to_disc_rgb

logger = get_logger(__name__)


def _settings(args: argparse.Namespace) -> Settings:
    overrides = {
        "seed": getattr(args, "seed", None),
        "steps": getattr(args, "steps", None),
        "p_depth": getattr(args, "p_depth", None),
        "camera_reg": getattr(args, "reg", None),
    }
    return load_settings(args.config, **overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _settings(args)
    gen_dataset(cfg, args.out, cfg.seed, overwrite=args.overwrite)
    print(f"dataset written to {args.out} ({cfg.n_scenes} scenes, config {config_hash(cfg)})")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _settings(args)
    data = SyntheticDataset.load(args.data)
    state = run_training(cfg, data, args.out, args.steps, resume=args.resume)
    print(f"trained to step {state.step}; checkpoints in {args.out}")
    return 0


def _generated_features(state: TrainState, n: int, seed: int) -> np.ndarray:
    """Teacher features of full renders from the EMA generator at posterior cameras."""
    cfg = state.cfg
    rng = torch.Generator().manual_seed(seed)
    patch = PatchSpec.full(cfg.img_res, cfg.img_res)
    with torch.no_grad():
        z = torch.randn(n, cfg.z_dim, generator=rng, dtype=DTYPE)
        c = torch.randint(cfg.n_classes, (n,), generator=rng)
        phi = generator_forward(state.camera, sample_prior(rng, state.prior, n), z, c)
        rays = gen_rays(build_view(phi, cfg.outer_radius), phi.fov, patch, cfg.near, cfg.far)
        out = volume_render(state.ema(z, c), rays, cfg.n_steps)
        return state.teacher(to_disc_rgb(out.rgb)).numpy()


def cmd_eval_nfs(args: argparse.Namespace) -> int:
    if args.checkpoint:
        state = checkpoint.load(args.checkpoint)
        cfg = state.cfg
        values = {**run_record(cfg), "source": str(args.checkpoint), "step": state.step}
        values["nfs"] = generator_nfs(state.ema, cfg, cfg.seed)
        if state.teacher is not None:
            real = state.teacher_features.numpy()
            fake = _generated_features(state, min(len(real), cfg.nfs_maps), cfg.seed)
            values["frechet"] = frechet_distance(
                FeatureStats.from_features(real), FeatureStats.from_features(fake),
            )
    else:
        cfg = _settings(args)
        data = SyntheticDataset.load(args.data)
        values = {**run_record(cfg), "source": str(args.data)}
        values["nfs"] = nfs(data.true_depth_maps(), cfg.near, cfg.far, cfg.nfs_bins, cfg.nfs_maps)
        if args.keep_fraction < 1.0:
            feats = _teacher_features(cfg, data)
            kept = instance_select(feats, args.keep_fraction)
            values["kept"] = len(kept)
            maps = list(data.true_depth_maps())
            values["nfs_selected"] = nfs((maps[i] for i in kept), cfg.near, cfg.far, cfg.nfs_bins)
    print(f"nfs={values['nfs']:.4f}")
    if args.out:
        write_report(args.out, "eval_nfs", values)
    return 0


def _teacher_features(cfg: Settings, data: SyntheticDataset) -> np.ndarray:
    if cfg.teacher_features_path:
        return load_external_features(cfg.teacher_features_path, len(data)).numpy()
    teacher = TeacherExtractor(cfg.teacher_dim, cfg.teacher_channels, cfg.teacher_seed)
    return teacher(to_disc_rgb(data.rgb)).numpy()


def cmd_render(args: argparse.Namespace) -> int:
    state = checkpoint.load(args.checkpoint)
    cfg = state.cfg
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = torch.Generator().manual_seed(args.seed if args.seed is not None else cfg.seed)
    res = cfg.img_res
    offset = (1.0 - args.scale) / 2
    patch = PatchSpec(args.scale, offset, offset, res, res)
    with torch.no_grad():
        z = torch.randn(args.count, cfg.z_dim, generator=rng, dtype=DTYPE)
        c = torch.randint(cfg.n_classes, (args.count,), generator=rng)
        phi = generator_forward(state.camera, sample_prior(rng, state.prior, args.count), z, c)
        rays = gen_rays(build_view(phi, cfg.outer_radius), phi.fov, patch, cfg.near, cfg.far)
        rendered = volume_render(
            state.ema(z, c), rays, cfg.n_steps, background=1.0 if cfg.white_background else 0.0,
        )
    for i in range(args.count):
        write_pixmap(out / f"render_{i:03d}.ppm", rendered.rgb[i].permute(1, 2, 0))
        write_depth(out / f"render_{i:03d}.depth", rendered.depth[i])
    print(f"{args.count} renders written to {out}")
    return 0


def cmd_ablate_depth(args: argparse.Namespace) -> int:
    cfg = _settings(args)
    table = ablate_depth(cfg, SyntheticDataset.load(args.data), args.out, args.steps)
    for name, score in table.items():
        print(f"{name:<8} nfs={score:.4f}")
    return 0


def cmd_ablate_camera(args: argparse.Namespace) -> int:
    cfg = _settings(args)
    table = ablate_camera(cfg, SyntheticDataset.load(args.data), args.out, args.steps)
    for reg, row in table.items():
        print(f"{reg:<9} " + " ".join(f"{k}={v:.3f}" for k, v in row.items()))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tridepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", type=Path, default=None, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = common(sub.add_parser("gen-data", help="render the synthetic dataset"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train", help="train on a synthetic dataset"))
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--p-depth", type=float, default=None)
    p.add_argument("--reg", choices=["none", "residual", "gradpen", "emd"], default=None)
    p.add_argument("--resume", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval-nfs", help="non-flatness score of data or a checkpoint"))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path)
    src.add_argument("--checkpoint", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--keep-fraction", type=float, default=1.0,
                   help="instance selection over teacher features before scoring data")
    p.set_defaults(func=cmd_eval_nfs)

    p = sub.add_parser("render", help="render images and depth maps from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_render)

    for name, func, help_ in (
        ("ablate-depth", cmd_ablate_depth, "NFS per depth-supervision variant"),
        ("ablate-camera", cmd_ablate_camera, "camera posterior spread per regularizer"),
    ):
        p = common(sub.add_parser(name, help=help_))
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--steps", type=int, default=None)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (TridepthError, ValueError, OSError) as exc:
        logger.error("command failed", command=args.command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
