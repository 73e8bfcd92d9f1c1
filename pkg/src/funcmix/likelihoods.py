"""Per-point likelihood families, as differentiable log-probability functions.

Image-style intensities use a logistic CDF differenced at half-level
offsets on the 0..255 lattice; binary occupancy uses Bernoulli; bounded
continuous features use the continuous Bernoulli. All functions broadcast
and are differentiable in their distribution parameters.
"""

import math

import torch
import torch.nn.functional as F
from torch import Tensor

__all__ = [
    "LIKELIHOOD_FAMILIES",
    "NUM_LEVELS",
    "discretized_logistic_logprob",
    "discretized_logistic_mixture_logprob",
    "bernoulli_logprob",
    "continuous_bernoulli_logprob",
]

LIKELIHOOD_FAMILIES = ("discretized_logistic", "bernoulli", "continuous_bernoulli")

# Intensity lattice 0..255; bins have unit width with half-open tails.
NUM_LEVELS = 256

_PROB_FLOOR = 1e-7
_PI_FLOOR = 1e-12


def discretized_logistic_logprob(y: Tensor, mu: Tensor, s: Tensor) -> Tensor:
    """log P(y) for integer levels y in 0..255 under a discretized logistic.

    All arguments are in lattice units (a mean in (0,1) must be scaled by
    255 before calling). Interior bins difference the logistic CDF at
    y +/- 0.5; the first and last bins absorb the open tails, which makes
    the pmf sum to one exactly. Stable log-CDF forms are used throughout.
    """
    s = torch.as_tensor(s, dtype=mu.dtype)
    if not bool((s > 0).all()):
        raise ValueError("logistic scale must be positive")
    upper = (y + 0.5 - mu) / s
    lower = (y - 0.5 - mu) / s
    log_cdf_upper = -F.softplus(-upper)   # log sigma(upper)
    log_sf_lower = -F.softplus(lower)     # log (1 - sigma(lower))
    # sigma(b) - sigma(a) = sigma(b) * (1 - sigma(a)) * (1 - exp(a - b)),
    # and a - b = -1/s exactly for unit-width bins.
    log_gap = torch.log(-torch.expm1(-1.0 / s)) * torch.ones_like(upper)
    interior = log_cdf_upper + log_sf_lower + log_gap
    out = torch.where(y <= 0, log_cdf_upper, interior)
    out = torch.where(y >= NUM_LEVELS - 1, log_sf_lower, out)
    return out


def discretized_logistic_mixture_logprob(
    y: Tensor, mus: Tensor, s: Tensor, weights: Tensor
) -> Tensor:
    """log sum_k w_k P_k(y) over a shared-scale logistic mixture.

    y: (..., C); mus: (..., K, C); s: scalar or (C,); weights: (..., K).
    Channels are independent within a component, so each component's
    log-prob is the channel sum. Reduces over K by max-shifted log-sum-exp
    and collapses to the single-component value when K = 1.
    """
    comp = discretized_logistic_logprob(y.unsqueeze(-2), mus, s).sum(dim=-1)
    logw = torch.log(weights.clamp_min(_PI_FLOOR))
    return torch.logsumexp(logw + comp, dim=-1)


def bernoulli_logprob(y: Tensor, p: Tensor) -> Tensor:
    """log P(y) for y in {0,1}; p is clamped away from {0,1}."""
    p = p.clamp(_PROB_FLOOR, 1.0 - _PROB_FLOOR)
    return y * torch.log(p) + (1.0 - y) * torch.log1p(-p)


def continuous_bernoulli_logprob(y: Tensor, lam: Tensor) -> Tensor:
    """log density on [0,1]: y log(lam) + (1-y) log(1-lam) + log C(lam).

    The normalizer C(lam) = 2 artanh(1-2 lam) / (1-2 lam) has a removable
    singularity at lam = 1/2 (C(1/2) = 2); within |lam - 1/2| < 1e-3 the
    even series 2 (1 + t^2/3 + t^4/5 + t^6/7) in t = 1-2 lam is used,
    keeping values and gradients finite across the switch.
    """
    lam = lam.clamp(_PROB_FLOOR, 1.0 - _PROB_FLOOR)
    t = 1.0 - 2.0 * lam
    near_half = t.abs() < 2e-3
    t_safe = torch.where(near_half, torch.full_like(t, 0.5), t)
    log_c_exact = torch.log(2.0 * torch.atanh(t_safe) / t_safe)
    t2 = t * t
    log_c_series = math.log(2.0) + torch.log1p(t2 / 3.0 + t2 * t2 / 5.0 + t2 * t2 * t2 / 7.0)
    log_c = torch.where(near_half, log_c_series, log_c_exact)
    return y * torch.log(lam) + (1.0 - y) * torch.log1p(-lam) + log_c
