"""Small shared network helpers."""

from typing import Sequence

import torch
from torch import Tensor, nn

__all__ = ["build_mlp", "normalized_probs"]

PROB_FLOOR = 1e-12


def build_mlp(in_dim: int, hidden: Sequence[int], out_dim: int, dtype=torch.float64) -> nn.Sequential:
    """Linear stack with leaky-rectifier hidden activations and a linear head."""
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1], dtype=dtype))
        if i < len(dims) - 2:
            layers.append(nn.LeakyReLU())
    return nn.Sequential(*layers)


def normalized_probs(logits: Tensor) -> Tensor:
    """Row-wise softmax floored at 1e-12 and renormalized to sum to one."""
    probs = torch.softmax(logits, dim=-1).clamp_min(PROB_FLOOR)
    return probs / probs.sum(dim=-1, keepdim=True)
