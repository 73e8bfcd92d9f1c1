"""Set encoder: arbitrary-size clouds to a Gaussian over the global latent,
plus the per-point categorical posterior over mixture assignments.

The set encoder stacks point convolutions whose kernel weights are an MLP
of the relative coordinate, coarsening the cloud onto farthest-point
centroids, then mean-pools and emits (mean, log_std). Points are put into
a canonical lexicographic order first, so encoding is invariant to input
point permutation whenever coordinates are distinct.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .nets import build_mlp, normalized_probs
from .rng import substream_seed

__all__ = [
    "GaussianPosterior",
    "PointConvLayerSpec",
    "PointConvLayer",
    "SetEncoder",
    "CategoricalEncoder",
    "select_centroids",
    "group_neighbors",
    "canonical_order",
]

LOG_STD_CLAMP = 7.0


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian over the global latent."""

    mean: Tensor      # (dim_z,)
    log_std: Tensor   # (dim_z,), clamped to [-7, 7] by the encoder

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def rsample(self, n: int, generator: Optional[torch.Generator] = None) -> Tensor:
        """Reparameterized samples, shape (n, dim); gradients reach mean/log_std."""
        eps = torch.randn(n, self.dim, generator=generator, dtype=self.mean.dtype)
        return self.mean + torch.exp(self.log_std) * eps

    def log_prob(self, z: Tensor) -> Tensor:
        var = torch.exp(2.0 * self.log_std)
        return (
            -0.5 * ((z - self.mean) ** 2 / var).sum(dim=-1)
            - self.log_std.sum()
            - 0.5 * self.dim * math.log(2.0 * math.pi)
        )


def canonical_order(coords: Tensor) -> Tensor:
    """Indices sorting points lexicographically by coordinate tuple.

    Makes downstream centroid selection a function of the point set, not
    of the input ordering (up to exact coordinate duplicates).
    """
    keys = coords.detach().cpu().numpy()
    order = np.lexsort(tuple(keys[:, a] for a in reversed(range(keys.shape[1]))))
    return torch.from_numpy(np.ascontiguousarray(order)).long()


def select_centroids(coords: Tensor, count: int, generator: torch.Generator) -> Tensor:
    """Farthest-point sampling: seeded random start, then greedy max-min.

    Returns `count` distinct indices; deterministic given the generator
    state (argmax ties resolve to the lowest index).
    """
    d = coords.shape[0]
    if count > d:
        raise ValueError(f"cannot select {count} centroids from {d} points")
    if count < 1:
        raise ValueError("centroid count must be >= 1")
    first = int(torch.randint(d, (1,), generator=generator))
    chosen = torch.empty(count, dtype=torch.long)
    chosen[0] = first
    min_d2 = ((coords - coords[first]) ** 2).sum(dim=-1)
    for j in range(1, count):
        nxt = int(torch.argmax(min_d2))
        chosen[j] = nxt
        d2 = ((coords - coords[nxt]) ** 2).sum(dim=-1)
        min_d2 = torch.minimum(min_d2, d2)
    return chosen


def group_neighbors(coords: Tensor, centroid_indices: Tensor, k: int) -> Tensor:
    """k nearest input points per centroid (ties to the lower index), (C, k)."""
    d = coords.shape[0]
    if k > d:
        raise ValueError(f"cannot group {k} neighbors from {d} points")
    d2 = torch.cdist(coords[centroid_indices], coords) ** 2
    order = torch.argsort(d2, dim=1, stable=True)
    return order[:, :k]


@dataclass
class PointConvLayerSpec:
    """One point-convolution stage; field names mirror the config file."""

    centroids: int
    neighbors: int
    h_weights: Sequence[int]
    out_channels: int

    def __post_init__(self):
        if self.centroids < 1 or self.neighbors < 1 or self.out_channels < 1:
            raise ValueError(f"layer spec fields must be positive: {self}")


class PointConvLayer(nn.Module):
    """Convolution on a point set: out_j = sum_i W(x_i - x_j) h_i.

    W is an MLP of the relative coordinate producing an
    (out_channels x in_channels) matrix per neighbor; the sum runs over
    each centroid's neighborhood in a fixed order.
    """

    def __init__(self, coord_dim: int, in_channels: int, spec: PointConvLayerSpec, dtype=torch.float64):
        super().__init__()
        self.spec = spec
        self.in_channels = in_channels
        self.weight_net = build_mlp(
            coord_dim, spec.h_weights, spec.out_channels * in_channels, dtype=dtype
        )

    def forward(self, coords: Tensor, feats: Tensor, centroid_idx: Tensor, neighbor_idx: Tensor) -> Tensor:
        if feats.shape[0] < max(self.spec.centroids, self.spec.neighbors):
            raise ValueError(
                f"layer needs at least {max(self.spec.centroids, self.spec.neighbors)} "
                f"points, got {feats.shape[0]}"
            )
        rel = coords[neighbor_idx] - coords[centroid_idx].unsqueeze(1)      # (C, k, n_x)
        w = self.weight_net(rel)                                            # (C, k, out*in)
        w = w.view(*rel.shape[:2], self.spec.out_channels, self.in_channels)
        return torch.einsum("ckoi,cki->co", w, feats[neighbor_idx])


class SetEncoder(nn.Module):
    """Stack of point convolutions pooled into a Gaussian posterior.

    Centroid selection is seeded per layer from a seed fixed at
    construction, so encoding is a deterministic function of the cloud.
    """

    def __init__(
        self,
        coord_dim: int,
        feature_dim: int,
        layer_specs: Sequence[PointConvLayerSpec],
        dim_z: int,
        fps_seed: int = 0,
        dtype=torch.float64,
    ):
        super().__init__()
        if not layer_specs:
            raise ValueError("need at least one point-convolution layer")
        self.coord_dim = coord_dim
        self.layer_specs = list(layer_specs)
        self.fps_seed = fps_seed
        layers = []
        in_ch = feature_dim
        for spec in layer_specs:
            layers.append(PointConvLayer(coord_dim, in_ch, spec, dtype=dtype))
            in_ch = spec.out_channels
        self.layers = nn.ModuleList(layers)
        self.mean_head = nn.Linear(in_ch, dim_z, dtype=dtype)
        self.log_std_head = nn.Linear(in_ch, dim_z, dtype=dtype)

    @property
    def min_points(self) -> int:
        """Smallest cloud this encoder accepts (the first layer's demands)."""
        return max(self.layer_specs[0].centroids, self.layer_specs[0].neighbors)

    def forward(self, coords: Tensor, feats: Tensor) -> GaussianPosterior:
        if coords.shape[0] < self.min_points:
            raise ValueError(
                f"cloud has {coords.shape[0]} points but the encoder needs at "
                f"least {self.min_points}"
            )
        order = canonical_order(coords)
        coords = coords[order]
        feats = feats[order]
        for i, (spec, layer) in enumerate(zip(self.layer_specs, self.layers)):
            gen = torch.Generator()
            gen.manual_seed(substream_seed(self.fps_seed, f"fps.layer{i}"))
            cidx = select_centroids(coords, spec.centroids, gen)
            nidx = group_neighbors(coords, cidx, spec.neighbors)
            feats = layer(coords, feats, cidx, nidx)
            coords = coords[cidx]
        pooled = feats.mean(dim=0)
        mean = self.mean_head(pooled)
        log_std = self.log_std_head(pooled).clamp(-LOG_STD_CLAMP, LOG_STD_CLAMP)
        return GaussianPosterior(mean, log_std)


class CategoricalEncoder(nn.Module):
    """Per-point posterior over mixture assignments given (z, x_d, y_d).

    An MLP maps concat(z, encoded coordinate, feature) to component
    logits; rows are independent across points given z.
    """

    def __init__(
        self,
        dim_z: int,
        coord_enc_dim: int,
        feature_dim: int,
        widths: Sequence[int],
        num_components: int,
        dtype=torch.float64,
    ):
        super().__init__()
        self.num_components = num_components
        self.net = build_mlp(dim_z + coord_enc_dim + feature_dim, widths, num_components, dtype=dtype)

    def forward(self, z: Tensor, encoded_coords: Tensor, feats: Tensor) -> Tensor:
        d = encoded_coords.shape[0]
        if feats.shape[0] != d:
            raise ValueError("encoded coords and features must pair up")
        x = torch.cat([z.expand(d, -1), encoded_coords, feats], dim=-1)
        return normalized_probs(self.net(x))
