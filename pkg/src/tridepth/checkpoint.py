"""Versioned checkpoint container for a TrainState."""

from __future__ import annotations

import os
import pickle
from pathlib import Path

import torch

from tridepth.config import Settings, config_hash
from tridepth.diffmath import AdamState
from tridepth.errors import CheckpointError, CheckpointVersionError
from tridepth.logging import get_logger
from tridepth.trainer import NETWORKS, TrainState, init_state

logger = get_logger(__name__)

FORMAT = "tridepth-checkpoint"
VERSION = 1


def _adam_dump(state: AdamState) -> dict:
    return {
        "m": list(state.m), "v": list(state.v), "t": state.t,
        "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
    }


def _adam_load(raw: dict) -> AdamState:
    return AdamState(
        m=list(raw["m"]), v=list(raw["v"]), t=int(raw["t"]),
        lr=raw["lr"], beta1=raw["beta1"], beta2=raw["beta2"], eps=raw["eps"],
    )


def save(state: TrainState, path: str | Path) -> Path:
    """Write all weights, EMA, optimizer moments, RNG state and step atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "settings": state.cfg.model_dump(mode="json"),
        "config_hash": config_hash(state.cfg),
        "step": state.step,
        "modules": {name: state.network(name).state_dict() for name in NETWORKS},
        "ema": state.ema.state_dict(),
        "optim": {name: _adam_dump(opt) for name, opt in state.optim.items()},
        "rng": state.rng.get_state(),
        "teacher_features": state.teacher_features,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    logger.info("checkpoint saved", path=str(path), step=state.step)
    return path


def load(path: str | Path) -> TrainState:
    """Rebuild the TrainState stored at ``path``; nothing is returned on failure."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, ValueError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a tridepth checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path} has checkpoint version {payload.get('version')}, expected {VERSION}"
        )
    try:
        cfg = Settings(**payload["settings"])
        state = init_state(cfg, teacher_features=payload["teacher_features"])
        for name in NETWORKS:
            state.network(name).load_state_dict(payload["modules"][name])
        state.ema.load_state_dict(payload["ema"])
        state.optim = {name: _adam_load(raw) for name, raw in payload["optim"].items()}
        state.rng.set_state(payload["rng"])
        state.step = int(payload["step"])
    except (KeyError, RuntimeError, ValueError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} is inconsistent: {exc}") from exc
    logger.info("checkpoint loaded", path=str(path), step=state.step)
    return state
