"""Learnable latent prior: a standard Gaussian pushed through planar layers.

The stack is oriented latent -> base ("normalizing" direction): density
evaluation, needed at every training step, is a plain forward pass, and
sampling pays a monotone scalar root-find per layer instead. While
`enabled` is False (warm-up) both density and sampling are exactly the
base Gaussian.
"""

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

__all__ = ["constrain_u", "PlanarLayer", "FlowPrior", "kl_z_mc"]

# Invertibility margin: w . u_hat >= -1 + _U_EPS for every layer.
_U_EPS = 1e-6

_INVERT_TOL = 1e-12
_MAX_BISECT = 120
_MAX_NEWTON = 80


def constrain_u(u: Tensor, w: Tensor) -> Tensor:
    """Reparameterize u so that w . u_hat >= -1 + eps, keeping the map invertible.

    u_hat = u + (m(w.u) - w.u) w / |w|^2 with m(a) = -1 + eps + softplus(a);
    the adjustment is parallel to w. Applied at every forward pass so the
    raw u can be optimized unconstrained.
    """
    wn = w.dot(w)
    if wn < 1e-24:
        raise ValueError("degenerate planar layer: |w| < 1e-12")
    a = w.dot(u)
    m = -1.0 + _U_EPS + F.softplus(a)
    return u + (m - a) * w / wn


def _inverse_constraint_u(u_hat: Tensor, w: Tensor) -> Tensor:
    """Raw u whose constrained image is exactly `u_hat` (needs w.u_hat > -1+eps)."""
    wn = w.dot(w)
    c = w.dot(u_hat)
    # softplus^{-1}(c + 1 - eps)
    a = torch.log(torch.expm1(c + 1.0 - _U_EPS))
    return u_hat + (a - c) * w / wn


class PlanarLayer(nn.Module):
    """One invertible map y = z + u_hat * tanh(w . z + b)."""

    def __init__(self, dim: int, dtype=torch.float64):
        super().__init__()
        self.dim = dim
        self.u = nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.w = nn.Parameter(torch.zeros(dim, dtype=dtype))
        self.b = nn.Parameter(torch.zeros((), dtype=dtype))

    def u_hat(self) -> Tensor:
        return constrain_u(self.u, self.w)

    def init_near_identity_(self, generator: Optional[torch.Generator], scale: float):
        """Draw a small target u_hat ~ N(0, scale^2) and solve for the raw u.

        |y - z| <= |u_hat| for any input, so a small target keeps the layer
        within `scale`-sized perturbations of the identity from step one.
        """
        dtype = self.u.dtype
        with torch.no_grad():
            w = torch.randn(self.dim, generator=generator, dtype=dtype) / math.sqrt(self.dim)
            target = torch.randn(self.dim, generator=generator, dtype=dtype) * scale
            self.w.copy_(w)
            self.u.copy_(_inverse_constraint_u(target, w))
            self.b.zero_()

    def set_target_u_hat_(self, u_hat: Tensor, w: Tensor, b: float = 0.0):
        """Set parameters so the constrained u equals `u_hat` exactly."""
        with torch.no_grad():
            self.w.copy_(w)
            self.u.copy_(_inverse_constraint_u(u_hat.to(self.w.dtype), self.w))
            self.b.fill_(b)

    def forward(self, z: Tensor):
        """Return (y, logdet) with logdet = log|1 + (1 - tanh^2) w . u_hat|."""
        u_hat = self.u_hat()
        act = torch.tanh(z @ self.w + self.b)
        y = z + act.unsqueeze(-1) * u_hat
        wu = self.w.dot(u_hat)
        logdet = torch.log1p((1.0 - act * act) * wu)
        return y, logdet

    def invert(self, y: Tensor) -> Tensor:
        """Solve y = z + u_hat tanh(w.z + b) for z.

        The scalar a = w.z satisfies a + (w.u_hat) tanh(a + b) = w.y, which
        is strictly monotone under the constraint; bisection brackets the
        root, a Newton polish drives the residual below 1e-12, and z is
        reconstructed as y - u_hat tanh(a + b).
        """
        u_hat = self.u_hat()
        wu = self.w.dot(u_hat)
        c = y @ self.w
        pad = wu.abs() + 1.0
        lo = c - pad
        hi = c + pad
        a = 0.5 * (lo + hi)
        for _ in range(_MAX_BISECT):
            g = a + wu * torch.tanh(a + self.b) - c
            lo = torch.where(g < 0, a, lo)
            hi = torch.where(g < 0, hi, a)
            a = 0.5 * (lo + hi)
        for _ in range(_MAX_NEWTON):
            t = torch.tanh(a + self.b)
            res = a + wu * t - c
            if bool(res.abs().max() < _INVERT_TOL):
                break
            a = a - res / (1.0 + wu * (1.0 - t * t))
        res = (a + wu * torch.tanh(a + self.b) - c).abs().max()
        if not bool(res < _INVERT_TOL):
            raise ArithmeticError(
                f"planar inversion did not converge: residual {float(res):.3e} "
                f"after {_MAX_BISECT + _MAX_NEWTON} iterations"
            )
        return y - torch.tanh(a + self.b).unsqueeze(-1) * u_hat


class FlowPrior(nn.Module):
    """Base N(0, I) composed with planar layers, density-evaluable both ways.

    log p(z) accumulates the layer log-dets along the normalizing pass and
    evaluates the base at the final point; sampling draws from the base and
    inverts the layers in reverse order.
    """

    def __init__(
        self,
        dim: int,
        num_layers: int,
        init_scale: float = 1e-3,
        generator: Optional[torch.Generator] = None,
        dtype=torch.float64,
    ):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(PlanarLayer(dim, dtype) for _ in range(num_layers))
        for layer in self.layers:
            layer.init_near_identity_(generator, init_scale)
        self.register_buffer("_enabled", torch.tensor(False))
        self._dtype = dtype

    @property
    def enabled(self) -> bool:
        return bool(self._enabled)

    def set_enabled(self, value: bool):
        self._enabled.fill_(bool(value))

    def base_log_prob(self, z: Tensor) -> Tensor:
        return -0.5 * (z * z).sum(dim=-1) - 0.5 * self.dim * math.log(2.0 * math.pi)

    def log_prob(self, z: Tensor) -> Tensor:
        """Exact log density at z; the base Gaussian while disabled."""
        if not self.enabled:
            return self.base_log_prob(z)
        total = torch.zeros(z.shape[:-1], dtype=z.dtype)
        for layer in self.layers:
            z, logdet = layer(z)
            total = total + logdet
        return self.base_log_prob(z) + total

    def sample(self, n: int, generator: Optional[torch.Generator] = None) -> Tensor:
        """Draw n samples distributed per log_prob, shape (n, dim)."""
        z = torch.randn(n, self.dim, generator=generator, dtype=self._dtype)
        if self.enabled:
            for layer in reversed(self.layers):
                z = layer.invert(z)
        return z


def kl_z_mc(
    posterior,
    prior: FlowPrior,
    n_samples: int,
    generator: Optional[torch.Generator] = None,
    samples: Optional[Tensor] = None,
) -> Tensor:
    """Monte-Carlo KL(q || prior) from reparameterized posterior samples.

    Pass `samples` to reuse draws shared with the reconstruction term
    (common random numbers); otherwise `n_samples` fresh ones are taken.
    """
    if samples is None:
        if n_samples < 1:
            raise ValueError("need at least one sample")
        samples = posterior.rsample(n_samples, generator)
    return (posterior.log_prob(samples) - prior.log_prob(samples)).mean()
