"""Seed fan-out: one root seed, named independent substreams.

Every stochastic component draws from its own named stream so that adding
or reordering one consumer never shifts the draws seen by another.
"""

import hashlib

import numpy as np
import torch

__all__ = ["substream_seed", "make_generator", "make_numpy_rng"]


def substream_seed(root_seed: int, name: str) -> int:
    """Derive a stable 63-bit seed for the substream `name`."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def make_generator(root_seed: int, name: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(substream_seed(root_seed, name))
    return gen


def make_numpy_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(root_seed, name))
