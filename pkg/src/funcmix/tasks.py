"""User-facing inference tasks: generation, reconstruction, super-resolution,
completion, and the mixture interpretability maps.

Every task is a bounded number of forward passes under no_grad; none of
them optimizes anything per sample. Mixture weights at decode time come
from the component prior network (features do not exist at new
coordinates); the maps, which look at observed points, use the posterior.
"""

from typing import Optional

import torch
from torch import Tensor

from .model import FunctionMixtureModel
from .pointcloud import GridSpec, PointCloud

__all__ = [
    "reconstruct",
    "super_resolve",
    "complete",
    "generate",
    "entropy_map",
    "segmentation_map",
]

CATEGORICAL_MODES = ("expectation", "sample")
LATENT_MODES = ("mean", "sample")


def _compose(mu: Tensor, pi: Tensor, mode: str, generator: Optional[torch.Generator]) -> Tensor:
    """Collapse per-component means: probability-weighted average, or one
    component drawn per point."""
    if mode == "expectation":
        return (pi.unsqueeze(-1) * mu).sum(dim=1)
    if mode == "sample":
        idx = torch.multinomial(pi, 1, generator=generator).squeeze(1)
        return mu[torch.arange(mu.shape[0]), idx]
    raise ValueError(f"categorical mode must be one of {CATEGORICAL_MODES}, got {mode!r}")


def reconstruct(
    cloud: PointCloud,
    target_coords: Tensor,
    model: FunctionMixtureModel,
    generator: Optional[torch.Generator] = None,
    mode: str = "expectation",
    latent: str = "mean",
) -> Tensor:
    """Encode the cloud, decode at `target_coords`; (D_target, n_y) in (0, 1).

    `latent="mean"` (default) makes the output a deterministic function of
    the input; `latent="sample"` draws one posterior sample instead.
    """
    if latent not in LATENT_MODES:
        raise ValueError(f"latent mode must be one of {LATENT_MODES}, got {latent!r}")
    with torch.no_grad():
        post = model.encode_z(cloud)
        z = post.mean if latent == "mean" else post.rsample(1, generator)[0]
        mu, pi = model.decode(z, target_coords)
        return _compose(mu, pi, mode, generator)


def super_resolve(
    cloud: PointCloud,
    scale: int,
    model: FunctionMixtureModel,
    generator: Optional[torch.Generator] = None,
    mode: str = "expectation",
    latent: str = "mean",
) -> Tensor:
    """Reconstruct on the scale-times-finer grid of the cloud's own grid."""
    if cloud.grid_spec is None:
        raise ValueError("super-resolution needs a cloud with a grid_spec")
    fine = cloud.grid_spec.scaled(scale)
    coords = fine.cell_centers(dtype=cloud.coords.dtype)
    return reconstruct(cloud, coords, model, generator, mode=mode, latent=latent)


def complete(
    partial_cloud: PointCloud,
    target_coords: Tensor,
    model: FunctionMixtureModel,
    generator: Optional[torch.Generator] = None,
    mode: str = "expectation",
    latent: str = "mean",
) -> Tensor:
    """Features at `target_coords` inferred from the observed points only.

    No placeholder values are injected for missing points: the encoder
    consumes whatever subset exists. With the full cloud this is exactly
    `reconstruct`.
    """
    return reconstruct(partial_cloud, target_coords, model, generator, mode=mode, latent=latent)


def generate(
    model: FunctionMixtureModel,
    coords: Tensor,
    n: int,
    generator: Optional[torch.Generator] = None,
    mode: str = "expectation",
) -> Tensor:
    """Draw n latents from the prior and decode each at `coords`: (n, D, n_y).

    The latents depend only on the generator state, never on `coords`, so
    the same seed decodes consistently at any resolution.
    """
    with torch.no_grad():
        zs = model.flow.sample(n, generator)
        out = []
        for i in range(n):
            mu, pi = model.decode(zs[i], coords)
            out.append(_compose(mu, pi, mode, generator))
        return torch.stack(out)


def entropy_map(cloud: PointCloud, model: FunctionMixtureModel) -> Tensor:
    """Per-point entropy of the component posterior, nats in [0, log K]."""
    with torch.no_grad():
        z = model.encode_z(cloud).mean
        pi_post = model.encode_c(z, cloud.coords, cloud.features)
        return -(pi_post * torch.log(pi_post)).sum(dim=-1)


def segmentation_map(cloud: PointCloud, model: FunctionMixtureModel) -> Tensor:
    """Most probable component per point, 1-based; ties go to the lower index."""
    with torch.no_grad():
        z = model.encode_z(cloud).mean
        pi_post = model.encode_c(z, cloud.coords, cloud.features)
        return torch.argmax(pi_post, dim=-1) + 1
