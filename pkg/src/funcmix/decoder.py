"""Mixture decoder: K hypernetworks emitting coordinate-network weights,
plus the component-probability network over (coordinate, latent).

Decoding is pointwise: the latent fixes all K weight sets once, and any
coordinate set whatsoever can then be evaluated independently. That
property is what makes super-resolution and completion plain forward
passes.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .nets import build_mlp, normalized_probs
from .pointcloud import RFFEncoder

__all__ = ["InrTemplate", "HyperNetwork", "CategoricalPriorNet", "MixtureDecoder"]


@dataclass(frozen=True)
class InrTemplate:
    """Shape of the coordinate network all components share.

    Input is the encoded coordinate (length 2m), hidden layers use the
    leaky rectifier, and the head is a sigmoid so outputs land in (0, 1),
    the parameter domain of every supported likelihood.
    """

    in_dim: int
    hidden: Tuple[int, ...]
    out_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid template dims: {self}")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        dims = [self.in_dim, *self.hidden, self.out_dim]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims)

    def split(self, theta: Tensor) -> List[Tuple[Tensor, Tensor]]:
        """Unflatten a parameter vector into per-layer (weight, bias) pairs."""
        if theta.shape[-1] != self.param_count:
            raise ValueError(
                f"parameter vector has {theta.shape[-1]} entries, template "
                f"needs {self.param_count}"
            )
        out, offset = [], 0
        for fan_in, fan_out in self.layer_dims:
            w = theta[offset : offset + fan_in * fan_out].view(fan_out, fan_in)
            offset += fan_in * fan_out
            b = theta[offset : offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out

    def forward(self, theta: Tensor, encoded_coords: Tensor) -> Tensor:
        """Evaluate the network with weights `theta` at encoded coordinates."""
        h = encoded_coords
        layers = self.split(theta)
        for i, (w, b) in enumerate(layers):
            h = h @ w.T + b
            if i < len(layers) - 1:
                h = F.leaky_relu(h)
        return torch.sigmoid(h)


class HyperNetwork(nn.Module):
    """MLP from the latent to one flattened coordinate-network weight vector.

    The head is initialized at std 1/fan_in with zero bias, so freshly
    built components emit near-zero weights and the coordinate network
    starts out flat near 0.5.
    """

    def __init__(self, dim_z: int, widths: Sequence[int], template: InrTemplate, dtype=torch.float64):
        super().__init__()
        self.template = template
        self.net = build_mlp(dim_z, widths, template.param_count, dtype=dtype)
        head = self.net[-1]
        with torch.no_grad():
            nn.init.normal_(head.weight, std=1.0 / head.in_features)
            nn.init.zeros_(head.bias)

    def forward(self, z: Tensor) -> Tensor:
        return self.net(z)


class CategoricalPriorNet(nn.Module):
    """Component probabilities at a coordinate given the latent alone."""

    def __init__(self, dim_z: int, coord_enc_dim: int, widths: Sequence[int], num_components: int, dtype=torch.float64):
        super().__init__()
        self.num_components = num_components
        self.net = build_mlp(dim_z + coord_enc_dim, widths, num_components, dtype=dtype)

    def forward(self, z: Tensor, encoded_coords: Tensor) -> Tensor:
        d = encoded_coords.shape[0]
        x = torch.cat([z.expand(d, -1), encoded_coords], dim=-1)
        return normalized_probs(self.net(x))


class MixtureDecoder(nn.Module):
    """K hypernetworks over a shared template, with the component prior net.

    Holds the per-channel log scale of the intensity likelihood; the
    coordinate encoder is shared with the rest of the model by reference.
    """

    def __init__(
        self,
        rff: RFFEncoder,
        template: InrTemplate,
        num_components: int,
        hypernet_widths: Sequence[int],
        categorical_widths: Sequence[int],
        dim_z: int,
        dtype=torch.float64,
    ):
        super().__init__()
        if num_components < 1:
            raise ValueError("need at least one mixture component")
        if template.in_dim != rff.out_dim:
            raise ValueError(
                f"template expects input {template.in_dim} but coordinate "
                f"encoding has length {rff.out_dim}"
            )
        self.rff = rff
        self.template = template
        self.num_components = num_components
        self.hypernets = nn.ModuleList(
            HyperNetwork(dim_z, hypernet_widths, template, dtype=dtype)
            for _ in range(num_components)
        )
        self.prior_net = CategoricalPriorNet(
            dim_z, rff.out_dim, categorical_widths, num_components, dtype=dtype
        )
        # Scale of the discretized-logistic likelihood, in 0..255 lattice
        # units, shared across components and points.
        self.log_scale = nn.Parameter(
            torch.full((template.out_dim,), math.log(255 * 0.1), dtype=dtype)
        )

    def hypernet_forward(self, z: Tensor, k: int) -> Tensor:
        """Weight vector of component k at latent z."""
        return self.hypernets[k](z)

    def inr_forward(self, coords: Tensor, theta: Tensor) -> Tensor:
        """Evaluate one component's coordinate network, (D, n_y) in (0, 1)."""
        return self.template.forward(theta, self.rff(coords))

    def prior_c(self, coords: Tensor, z: Tensor) -> Tensor:
        """Component probabilities at each coordinate, (D, K)."""
        return self.prior_net(z, self.rff(coords))

    def decode(self, z: Tensor, coords: Tensor) -> Tuple[Tensor, Tensor]:
        """All K components at every coordinate: (D, K, n_y) means, (D, K) probs.

        Coordinates may be any set (training grid, finer grid, arbitrary
        cloud); each point is decoded independently given z.
        """
        encoded = self.rff(coords)
        mu = torch.stack(
            [self.template.forward(h(z), encoded) for h in self.hypernets], dim=1
        )
        pi = self.prior_net(z, encoded)
        return mu, pi
