"""Versioned checkpoints: all parameters and buffers, the run config,
the epoch counter, and RNG states. Loading reproduces every forward
output bit-for-bit."""

import os
from typing import Optional

import torch

from .model import FunctionMixtureModel, build_model

__all__ = ["FORMAT_VERSION", "save_checkpoint", "load_checkpoint", "restore_model"]

FORMAT_VERSION = 1


def save_checkpoint(
    path,
    model: FunctionMixtureModel,
    config: dict,
    epoch: int,
    rng_states: Optional[dict] = None,
):
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "coord_dim": model.coord_dim,
        "feature_dim": model.feature_dim,
        "epoch": epoch,
        "model_state": model.state_dict(),
        "rng_states": rng_states or {},
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, weights_only=True)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path} has format version {version!r}; this build "
            f"reads version {FORMAT_VERSION}"
        )
    return payload


def restore_model(payload: dict) -> FunctionMixtureModel:
    """Rebuild the model from the stored config and load its exact state."""
    model = build_model(payload["config"], payload["coord_dim"], payload["feature_dim"])
    model.load_state_dict(payload["model_state"], strict=True)
    return model
