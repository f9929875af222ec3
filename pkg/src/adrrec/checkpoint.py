"""Versioned checkpoint container: mode, hyperparameters, named tensors, optimizer state."""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch

from .encoder import ADRRec, ModelConfig
from .errors import DataError

FORMAT = "adrrec-checkpoint"
VERSION = 1


def state_digest(state_dict: dict) -> str:
    """sha256 over names, dtypes, shapes and raw bytes of every tensor, in key order."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        t = state_dict[name].detach().contiguous().cpu()
        h.update(f"{name}|{t.dtype}|{tuple(t.shape)}|".encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def make_checkpoint(model: ADRRec, train_config: dict | None = None, optimizer_state: dict | None = None,
                    extra: dict | None = None) -> dict:
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return {
        "format": FORMAT,
        "version": VERSION,
        "mode": model.cfg.mode,
        "model_config": model.cfg.as_dict(),
        "train_config": train_config or {},
        "state_dict": state,
        "optimizer": optimizer_state,
        "id": state_digest(state),
        "extra": extra or {},
    }


def save_checkpoint(ckpt: dict, path: str | Path) -> None:
    torch.save(ckpt, str(path))


def load_checkpoint(path: str | Path) -> dict:
    try:
        ckpt = torch.load(str(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != FORMAT:
        raise DataError(f"{path}: not an adrrec checkpoint")
    if ckpt.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {ckpt.get('version')}")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> ADRRec:
    cfg = ModelConfig(**ckpt["model_config"])
    model = ADRRec(cfg)
    dtype = next(iter(ckpt["state_dict"].values())).dtype
    model.to(dtype)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model
