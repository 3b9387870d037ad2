"""Training runs and the depth / camera ablations."""

from __future__ import annotations

import json
import statistics
from pathlib import Path

import torch
from torch import nn

from tridepth import checkpoint
from tridepth.camera import PARAM_NAMES, CameraPrior, sample_prior
from tridepth.config import Settings, config_hash
from tridepth.dataset import SyntheticDataset
from tridepth.diffmath import DTYPE
from tridepth.evalkit import generator_nfs, write_report
from tridepth.logging import (
    METRICS_LOGGER,
    close_metrics_stream,
    get_logger,
    logged,
    open_metrics_stream,
)
from tridepth.trainer import TrainState, init_state, train_step

logger = get_logger(__name__)
metrics_log = get_logger(METRICS_LOGGER)

DEPTH_VARIANTS: dict[str, dict] = {
    "P=0": {"p_depth": 0.0},
    "P=0.25": {"p_depth": 0.25},
    "P=0.5": {"p_depth": 0.5},
    "P=1": {"p_depth": 1.0},
    "no-ADS": {"use_depth": False},
}
CAMERA_VARIANTS = ("none", "residual", "gradpen", "emd")


def run_record(cfg: Settings) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed}


@logged(slow_ms=600_000)
def run_training(
    cfg: Settings,
    data: SyntheticDataset,
    out_dir: str | Path,
    steps: int | None = None,
    resume: str | Path | None = None,
) -> TrainState:
    """Train until ``steps`` total steps, writing metrics.jsonl, run.json and checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = cfg.steps if steps is None else steps
    state = checkpoint.load(resume) if resume else init_state(cfg, data)
    (out / "run.json").write_text(json.dumps(
        {**run_record(state.cfg), "data": str(data.root), "steps": total}, indent=2,
    ))
    handler = open_metrics_stream(out / "metrics.jsonl")
    try:
        while state.step < total:
            real = data.sample(state.rng, state.cfg.batch_size)
            step = state.step
            state, metrics = train_step(state, real)
            metrics_log.info("step", step=step, **metrics)
            if step % state.cfg.log_interval == 0:
                logger.info(
                    "train", step=step, loss_g=metrics["loss_g"], loss_d=metrics["loss_d"],
                    dist=metrics["raw/dist"],
                )
            if state.step % state.cfg.checkpoint_interval == 0:
                checkpoint.save(state, out / f"checkpoint_{state.step:06d}.pt")
        checkpoint.save(state, out / "checkpoint_latest.pt")
    finally:
        close_metrics_stream(handler)
    return state


@torch.no_grad()
def collapse_statistic(camera: nn.Module, cfg: Settings, seed: int, n: int | None = None) -> dict[str, float]:
    """Posterior std over prior std per camera parameter, from ``n`` prior draws."""
    n = n or cfg.collapse_draws
    rng = torch.Generator().manual_seed(seed)
    prior = CameraPrior.from_settings(cfg)
    phi_prior = sample_prior(rng, prior, n)
    z = torch.randn(n, cfg.z_dim, generator=rng, dtype=DTYPE)
    c = torch.randint(cfg.n_classes, (n,), generator=rng)
    phi = camera(phi_prior.values, z, c)
    ratio = phi.std(dim=0) / phi_prior.values.std(dim=0)
    return dict(zip(PARAM_NAMES, ratio.tolist()))


def ablate_depth(
    cfg: Settings,
    data: SyntheticDataset,
    out_dir: str | Path,
    steps: int | None = None,
    seeds: tuple[int, ...] = (0, 1, 2),
) -> dict[str, float]:
    """Median EMA-generator NFS per depth-supervision variant."""
    out = Path(out_dir)
    table: dict[str, float] = {}
    for name, update in DEPTH_VARIANTS.items():
        scores = []
        for seed in seeds:
            run_cfg = cfg.model_copy(update={**update, "seed": seed})
            slug = name.replace("=", "").replace(".", "")
            state = run_training(run_cfg, data, out / slug / f"seed{seed}", steps)
            scores.append(generator_nfs(state.ema, run_cfg, seed))
        table[name] = statistics.median(scores)
        logger.info("depth variant done", variant=name, nfs=table[name])
    write_report(out, "ablate_depth", {**run_record(cfg), "seeds": list(seeds), **table})
    return table


def ablate_camera(
    cfg: Settings,
    data: SyntheticDataset,
    out_dir: str | Path,
    steps: int | None = None,
) -> dict[str, dict[str, float]]:
    """Posterior/prior std ratios per camera parameter for each camera regularizer."""
    out = Path(out_dir)
    table: dict[str, dict[str, float]] = {}
    for reg in CAMERA_VARIANTS:
        run_cfg = cfg.model_copy(update={"camera_reg": reg})
        state = run_training(run_cfg, data, out / reg, steps)
        table[reg] = collapse_statistic(state.camera, run_cfg, cfg.seed)
        logger.info("camera variant done", reg=reg, **table[reg])
    flat = {f"{reg}.{p}": v for reg, row in table.items() for p, v in row.items()}
    write_report(out, "ablate_camera", {**run_record(cfg), **flat})
    return table
