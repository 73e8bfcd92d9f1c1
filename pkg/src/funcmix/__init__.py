"""funcmix: a variational mixture of hypernetwork-generated neural fields.

A set encoder maps point clouds of any size to a Gaussian over a global
latent; a learnable flow prior covers that latent space; K hypernetworks
turn a latent into K coordinate-network weight sets mixed per point.
Reconstruction, super-resolution, completion and generation are all
single forward passes.
"""

from .data import DatasetContainer, load_container, save_container, synthesize_toy_dataset
from .decoder import InrTemplate, MixtureDecoder
from .encoder import CategoricalEncoder, GaussianPosterior, PointConvLayerSpec, SetEncoder
from .flows import FlowPrior, PlanarLayer, kl_z_mc
from .likelihoods import (
    bernoulli_logprob,
    continuous_bernoulli_logprob,
    discretized_logistic_logprob,
    discretized_logistic_mixture_logprob,
)
from .metrics import EvalReport, evaluate_testset, psnr, rmse
from .model import FunctionMixtureModel, build_model
from .pointcloud import (
    DropoutPolicy,
    GridSpec,
    PointCloud,
    RFFEncoder,
    cloud_to_grid,
    grid_to_cloud,
    point_dropout,
)
from .tasks import complete, entropy_map, generate, reconstruct, segmentation_map, super_resolve
from .training import ELBOTerms, TrainConfig, elbo, kl_categorical_closed, recon_term, train_loop

__version__ = "0.1.0"
