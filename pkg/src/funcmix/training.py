"""Objective assembly and the minibatch training loop.

The objective has three terms per cloud: the posterior-weighted
reconstruction log-likelihood summed over points, the Monte-Carlo KL of
the Gaussian posterior against the flow prior, and the closed-form KL
between the per-point categorical posterior and prior. Batches are
averaged cloud-wise so the learning rate keeps its meaning across cloud
sizes.
"""

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import torch
from torch import Tensor

from .encoder import GaussianPosterior
from .likelihoods import (
    NUM_LEVELS,
    bernoulli_logprob,
    continuous_bernoulli_logprob,
    discretized_logistic_logprob,
)
from .model import FunctionMixtureModel
from .pointcloud import DropoutPolicy, PointCloud, point_dropout
from .rng import make_generator

__all__ = [
    "ELBOTerms",
    "TrainConfig",
    "TrainingError",
    "component_logprobs",
    "recon_term",
    "kl_categorical_closed",
    "elbo",
    "train_step",
    "train_loop",
]

_PI_FLOOR = 1e-12


class TrainingError(RuntimeError):
    """Raised when the objective or its gradient turns non-finite."""


@dataclass
class ELBOTerms:
    """The three signed terms, in nats; summed over points, batch-averaged."""

    recon: Tensor
    kl_z: Tensor
    kl_c: Tensor

    @property
    def elbo(self) -> Tensor:
        return self.recon - self.kl_z - self.kl_c

    def detached(self) -> dict:
        return {
            "recon": float(self.recon.detach()),
            "kl_z": float(self.kl_z.detach()),
            "kl_c": float(self.kl_c.detach()),
            "elbo": float(self.elbo.detach()),
        }


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    warmup_epochs: int
    dropout_alpha: float
    mc_samples: int = 1
    seed: int = 0
    gradient_clip_norm: float = 10.0


def component_logprobs(mu: Tensor, y: Tensor, family: str, log_scale: Tensor) -> Tensor:
    """Per-point per-component log-likelihood, channels summed: (D, K).

    `mu` holds each component's (0,1) means, (D, K, n_y). Intensity
    features are mapped onto the 0..255 lattice before the logistic bins
    are evaluated.
    """
    y = y.unsqueeze(1)
    if family == "discretized_logistic":
        lp = discretized_logistic_logprob(
            torch.round(y * (NUM_LEVELS - 1)), mu * (NUM_LEVELS - 1), torch.exp(log_scale)
        )
    elif family == "bernoulli":
        lp = bernoulli_logprob(y, mu)
    elif family == "continuous_bernoulli":
        lp = continuous_bernoulli_logprob(y, mu)
    else:
        raise ValueError(f"unknown likelihood family {family!r}")
    return lp.sum(dim=-1)


def recon_term(mu: Tensor, pi_post: Tensor, y: Tensor, family: str, log_scale: Tensor) -> Tensor:
    """Expected log-likelihood under the categorical posterior:
    sum_d sum_k pi_post[d,k] * log p_k(y_d)."""
    return (pi_post * component_logprobs(mu, y, family, log_scale)).sum()


def kl_categorical_closed(pi_post: Tensor, pi_prior: Tensor) -> Tensor:
    """sum_d KL(post_d || prior_d), exact; zero iff the rows coincide."""
    q = pi_post.clamp_min(_PI_FLOOR)
    p = pi_prior.clamp_min(_PI_FLOOR)
    return (q * (torch.log(q) - torch.log(p))).sum()


def elbo(
    batch: Sequence[PointCloud],
    model: FunctionMixtureModel,
    generator: Optional[torch.Generator] = None,
    mc_samples: int = 1,
) -> ELBOTerms:
    """Batch-mean objective terms, single shared samples for both
    expectations (common random numbers)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    recon_total = kl_z_total = kl_c_total = 0.0
    for cloud in batch:
        post = model.encode_z(cloud)
        zs = post.rsample(mc_samples, generator)
        recon = kl_c = 0.0
        for s in range(mc_samples):
            mu, pi_prior = model.decode(zs[s], cloud.coords)
            pi_post = model.encode_c(zs[s], cloud.coords, cloud.features)
            recon = recon + recon_term(
                mu, pi_post, cloud.features, model.likelihood, model.decoder.log_scale
            )
            kl_c = kl_c + kl_categorical_closed(pi_post, pi_prior)
        recon_total = recon_total + recon / mc_samples
        kl_c_total = kl_c_total + kl_c / mc_samples
        kl_z_total = kl_z_total + (post.log_prob(zs) - model.flow.log_prob(zs)).mean()
    n = len(batch)
    terms = ELBOTerms(recon_total / n, kl_z_total / n, kl_c_total / n)
    for name in ("recon", "kl_z", "kl_c"):
        if not torch.isfinite(getattr(terms, name)):
            raise TrainingError(f"objective term {name!r} is non-finite")
    return terms


def train_step(
    batch: Sequence[PointCloud],
    model: FunctionMixtureModel,
    optimizer: torch.optim.Optimizer,
    config: TrainConfig,
    dropout_gen: torch.Generator,
    sample_gen: torch.Generator,
) -> dict:
    """One minibatch update: dropout, objective, clipped gradient step.

    The drop probability is drawn once and shared by every cloud in the
    batch; the coordinate-encoding matrix is a buffer and never updated.
    """
    policy = DropoutPolicy(config.dropout_alpha, model.min_points)
    p = config.dropout_alpha * torch.rand((), generator=dropout_gen).item()
    reduced = [point_dropout(c, policy, dropout_gen, p=p) for c in batch]
    terms = elbo(reduced, model, sample_gen, config.mc_samples)
    optimizer.zero_grad(set_to_none=True)
    (-terms.elbo).backward()
    for name, param in model.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    torch.nn.utils.clip_grad_norm_(model.parameters(), config.gradient_clip_norm)
    optimizer.step()
    return terms.detached()


def train_loop(
    dataset: Sequence[PointCloud],
    model: FunctionMixtureModel,
    config: TrainConfig,
    on_epoch_end: Optional[Callable[[int, FunctionMixtureModel, dict], None]] = None,
    rng_out: Optional[dict] = None,
) -> List[dict]:
    """Seeded epochs of shuffled minibatches; the flow prior switches on
    after `warmup_epochs`. Returns one record per epoch; `rng_out`, if
    given, tracks the live generator states for checkpointing."""
    if not dataset:
        raise ValueError("dataset is empty")
    shuffle_gen = make_generator(config.seed, "data.shuffle")
    dropout_gen = make_generator(config.seed, "dropout")
    sample_gen = make_generator(config.seed, "posterior")
    generators = {"data.shuffle": shuffle_gen, "dropout": dropout_gen, "posterior": sample_gen}
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    log: List[dict] = []
    start = time.monotonic()
    for epoch in range(config.epochs):
        model.flow.set_enabled(epoch >= config.warmup_epochs)
        order = torch.randperm(len(dataset), generator=shuffle_gen)
        sums = {"recon": 0.0, "kl_z": 0.0, "kl_c": 0.0, "elbo": 0.0}
        n_steps = 0
        for lo in range(0, len(dataset), config.batch_size):
            batch = [dataset[i] for i in order[lo : lo + config.batch_size]]
            metrics = train_step(batch, model, optimizer, config, dropout_gen, sample_gen)
            for key in sums:
                sums[key] += metrics[key]
            n_steps += 1
        record = {
            "epoch": epoch,
            **{key: sums[key] / n_steps for key in sums},
            "wallclock": time.monotonic() - start,
        }
        log.append(record)
        if rng_out is not None:
            for name, gen in generators.items():
                rng_out[name] = gen.get_state()
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, record)
    return log
