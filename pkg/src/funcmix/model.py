"""Full generative model: set encoder, flow prior, mixture decoder.

Construction is deterministic given the seed: every parameter is drawn
from a named init substream, so two models built from the same config are
identical, and a checkpointed state_dict restores one bit-for-bit.
"""

import math
from typing import Sequence

import torch
from torch import Tensor, nn

from .decoder import InrTemplate, MixtureDecoder
from .encoder import CategoricalEncoder, GaussianPosterior, PointConvLayerSpec, SetEncoder
from .flows import FlowPrior
from .likelihoods import LIKELIHOOD_FAMILIES
from .pointcloud import PointCloud, RFFEncoder
from .rng import make_generator, substream_seed

__all__ = ["FunctionMixtureModel", "build_model"]


class FunctionMixtureModel(nn.Module):
    def __init__(
        self,
        coord_dim: int,
        feature_dim: int,
        dim_z: int,
        num_components: int,
        likelihood: str,
        rff_m: int,
        rff_sigma: float,
        generator_layers: Sequence[int],
        hypernet_layers: Sequence[int],
        categorical_layers: Sequence[int],
        encoder_layers: Sequence[PointConvLayerSpec],
        flow_layers: int,
        flow_init_scale: float = 1e-3,
        seed: int = 0,
        dtype=torch.float64,
    ):
        super().__init__()
        if likelihood not in LIKELIHOOD_FAMILIES:
            raise ValueError(f"unknown likelihood {likelihood!r}")
        self.coord_dim = coord_dim
        self.feature_dim = feature_dim
        self.dim_z = dim_z
        self.num_components = num_components
        self.likelihood = likelihood
        self.seed = seed

        init_gen = make_generator(seed, "init")
        self.rff = RFFEncoder(coord_dim, rff_m, rff_sigma, generator=init_gen, dtype=dtype)
        template = InrTemplate(self.rff.out_dim, tuple(generator_layers), feature_dim)
        self.set_encoder = SetEncoder(
            coord_dim,
            feature_dim,
            encoder_layers,
            dim_z,
            fps_seed=substream_seed(seed, "fps"),
            dtype=dtype,
        )
        self.cat_encoder = CategoricalEncoder(
            dim_z, self.rff.out_dim, feature_dim, categorical_layers, num_components, dtype=dtype
        )
        self.decoder = MixtureDecoder(
            self.rff, template, num_components, hypernet_layers, categorical_layers, dim_z, dtype=dtype
        )
        self.flow = FlowPrior(
            dim_z, flow_layers, init_scale=flow_init_scale, generator=init_gen, dtype=dtype
        )
        self._init_parameters(init_gen)

    def _init_parameters(self, generator: torch.Generator):
        """Re-draw every linear layer from the init stream (definition order),
        then restore the small-output hypernetwork heads."""
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                with torch.no_grad():
                    module.weight.uniform_(-bound, bound, generator=generator)
                    module.bias.uniform_(-bound, bound, generator=generator)
        for hyper in self.decoder.hypernets:
            head = hyper.net[-1]
            with torch.no_grad():
                head.weight.normal_(0.0, 1.0 / head.in_features, generator=generator)
                head.bias.zero_()

    @property
    def min_points(self) -> int:
        return self.set_encoder.min_points

    def encode_z(self, cloud: PointCloud) -> GaussianPosterior:
        return self.set_encoder(cloud.coords, cloud.features)

    def encode_c(self, z: Tensor, coords: Tensor, features: Tensor) -> Tensor:
        return self.cat_encoder(z, self.rff(coords), features)

    def decode(self, z: Tensor, coords: Tensor):
        return self.decoder.decode(z, coords)


def build_model(config: dict, coord_dim: int, feature_dim: int) -> FunctionMixtureModel:
    """Assemble a model from a validated run configuration."""
    m = config["model"]
    return FunctionMixtureModel(
        coord_dim=coord_dim,
        feature_dim=feature_dim,
        dim_z=m["dim_z"],
        num_components=m["K"],
        likelihood=m["likelihood"],
        rff_m=m["rff"]["m"],
        rff_sigma=m["rff"]["sigma"],
        generator_layers=m["generator_layers"],
        hypernet_layers=m["hypernet_layers"],
        categorical_layers=m["categorical_layers"],
        encoder_layers=[PointConvLayerSpec(**layer) for layer in config["encoder"]["layers"]],
        flow_layers=config["flow"]["T"],
        flow_init_scale=config["flow"]["init_scale"],
        seed=config["train"]["seed"],
    )
