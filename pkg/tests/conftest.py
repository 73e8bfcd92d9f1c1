import pytest
import torch

from funcmix.encoder import PointConvLayerSpec
from funcmix.model import FunctionMixtureModel
from funcmix.pointcloud import PointCloud
from funcmix.rng import make_generator

torch.set_default_dtype(torch.float64)


TINY_ENCODER = [
    PointConvLayerSpec(centroids=8, neighbors=4, h_weights=[8], out_channels=8),
    PointConvLayerSpec(centroids=2, neighbors=2, h_weights=[8], out_channels=8),
]


def make_tiny_model(
    num_components=2,
    dim_z=4,
    coord_dim=2,
    feature_dim=1,
    likelihood="continuous_bernoulli",
    flow_layers=2,
    seed=0,
    rff_m=4,
):
    return FunctionMixtureModel(
        coord_dim=coord_dim,
        feature_dim=feature_dim,
        dim_z=dim_z,
        num_components=num_components,
        likelihood=likelihood,
        rff_m=rff_m,
        rff_sigma=1.0,
        generator_layers=[8],
        hypernet_layers=[8],
        categorical_layers=[8],
        encoder_layers=TINY_ENCODER,
        flow_layers=flow_layers,
        seed=seed,
    )


def make_cloud(n_points=16, coord_dim=2, feature_dim=1, seed=0, binary=False):
    gen = make_generator(seed, "test.cloud")
    coords = torch.rand(n_points, coord_dim, generator=gen) * 2.0 - 1.0
    feats = torch.rand(n_points, feature_dim, generator=gen)
    if binary:
        feats = (feats > 0.5).double()
    else:
        feats = feats * 0.9 + 0.05
    return PointCloud(coords, feats)


@pytest.fixture
def tiny_model():
    return make_tiny_model()


@pytest.fixture
def cloud16():
    return make_cloud(16)
