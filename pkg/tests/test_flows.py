import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from funcmix.encoder import GaussianPosterior
from funcmix.flows import FlowPrior, PlanarLayer, constrain_u, kl_z_mc
from funcmix.rng import make_generator
from oracles import central_difference, numeric_jacobian, relative_error, trapezoid_2d


def random_layer(dim, seed, scale=0.6):
    """Constrained layer with a non-trivial effective u."""
    gen = make_generator(seed, "flow.layer")
    layer = PlanarLayer(dim)
    with torch.no_grad():
        layer.u.copy_(torch.randn(dim, generator=gen) * scale)
        layer.w.copy_(torch.randn(dim, generator=gen))
        layer.b.copy_(torch.randn((), generator=gen))
    return layer


def identity_layer(dim, seed=0):
    gen = make_generator(seed, "flow.id")
    layer = PlanarLayer(dim)
    w = torch.randn(dim, generator=gen)
    layer.set_target_u_hat_(torch.zeros(dim), w, b=0.3)
    return layer


class TestConstraint:
    def test_matches_independent_formula(self):
        # Oracle: w.u_hat must equal -1 + eps + softplus(w.u), recomputed here.
        gen = make_generator(0, "c")
        for _ in range(50):
            u = torch.randn(6, generator=gen) * 3
            w = torch.randn(6, generator=gen)
            u_hat = constrain_u(u, w)
            expected = -1.0 + 1e-6 + float(F.softplus(w.dot(u)))
            assert abs(float(w.dot(u_hat)) - expected) < 1e-12

    def test_softplus_correction_vanishes_for_large_argument(self):
        # softplus(a) - a < 1e-3 already at a = 10.
        assert float(F.softplus(torch.tensor(10.0))) - 10.0 < 1e-3

    def test_negative_dot_still_above_minus_one(self):
        gen = make_generator(1, "c")
        w = torch.randn(5, generator=gen)
        u = -5.0 * w / w.dot(w)  # w.u = -5
        assert float(w.dot(constrain_u(u, w))) > -1.0

    def test_adjustment_is_parallel_to_w(self):
        gen = make_generator(2, "c")
        u = torch.randn(5, generator=gen)
        w = torch.randn(5, generator=gen)
        diff = constrain_u(u, w) - u
        cross = diff - (diff.dot(w) / w.dot(w)) * w
        assert float(cross.abs().max()) < 1e-12

    def test_degenerate_w_rejected(self):
        with pytest.raises(ValueError):
            constrain_u(torch.ones(3), torch.zeros(3))

    def test_invertibility_margin_holds_even_for_extreme_u(self):
        gen = make_generator(3, "c")
        w = torch.randn(4, generator=gen)
        u = -1e4 * w
        assert float(w.dot(constrain_u(u, w))) >= -1.0 + 1e-6


class TestPlanarForward:
    def test_identity_layer(self):
        layer = identity_layer(5)
        z = torch.randn(7, 5, generator=make_generator(0, "z"))
        y, logdet = layer(z)
        assert (y - z).abs().max() < 1e-12
        assert logdet.abs().max() < 1e-12

    def test_logdet_matches_numeric_jacobian(self):
        for dim in (2, 3, 4, 5):
            for seed in range(3):
                layer = random_layer(dim, seed * 10 + dim)
                z = torch.randn(dim, generator=make_generator(seed, "z"))
                with torch.no_grad():
                    _, logdet = layer(z)
                jac = numeric_jacobian(lambda x: layer(x)[0], z, h=1e-6)
                sign, numeric = np.linalg.slogdet(jac)
                assert sign > 0
                assert abs(float(logdet) - numeric) < 1e-6

    def test_logdet_vanishes_at_saturation(self):
        layer = random_layer(4, 0)
        with torch.no_grad():
            layer.b.fill_(0.0)
        w = layer.w.detach()
        z = 20.0 * w / float(w.dot(w))  # w.z + b = 20
        _, logdet = layer(z)
        assert abs(float(logdet)) < 1e-8


class TestPlanarInvert:
    def test_identity_layer_inverts_to_input(self):
        layer = identity_layer(4)
        y = torch.randn(6, 4, generator=make_generator(1, "y"))
        assert (layer.invert(y) - y).abs().max() < 1e-9

    def test_round_trip_many_random_layers(self):
        worst = 0.0
        for seed in range(300):
            dim = 8
            layer = random_layer(dim, seed)
            z = torch.randn(2, dim, generator=make_generator(seed, "rt"))
            y, _ = layer(z)
            back = layer.invert(y)
            fwd, _ = layer(back)
            worst = max(worst, float((fwd - y).abs().max()))
        assert worst < 1e-9

    def test_near_singular_layer_converges(self):
        gen = make_generator(9, "sing")
        layer = PlanarLayer(6)
        with torch.no_grad():
            layer.w.copy_(torch.randn(6, generator=gen))
            layer.u.copy_(-1e4 * layer.w)  # w.u_hat = -1 + 1e-6 exactly
            layer.b.copy_(torch.tensor(0.2))
        wu = float(layer.w.dot(layer.u_hat()))
        assert abs(wu + 1.0 - 1e-6) < 1e-11
        y = torch.randn(16, 6, generator=gen)
        z = layer.invert(y)
        resid = z @ layer.w + float(layer.w.dot(layer.u_hat())) * torch.tanh(
            z @ layer.w + layer.b
        ) - y @ layer.w
        assert float(resid.abs().max()) < 1e-10


class TestFlowPriorDensity:
    def test_disabled_matches_standard_normal_at_origin(self):
        prior = FlowPrior(2, 3, generator=make_generator(0, "f"))
        lp = prior.log_prob(torch.zeros(2))
        assert abs(float(lp) - (-math.log(2 * math.pi))) < 1e-12

    def test_identity_layers_reduce_to_base(self):
        prior = FlowPrior(4, 3, generator=make_generator(1, "f"))
        for i, layer in enumerate(prior.layers):
            layer.set_target_u_hat_(torch.zeros(4), torch.randn(4, generator=make_generator(i, "w")))
        prior.set_enabled(True)
        z = torch.randn(10, 4, generator=make_generator(2, "f"))
        assert (prior.log_prob(z) - prior.base_log_prob(z)).abs().max() < 1e-12

    def test_density_integrates_to_one_2d(self):
        prior = FlowPrior(2, 3, generator=make_generator(3, "f"))
        for i, layer in enumerate(prior.layers):
            with torch.no_grad():
                gen = make_generator(100 + i, "f")
                layer.u.copy_(torch.randn(2, generator=gen) * 0.8)
                layer.w.copy_(torch.randn(2, generator=gen))
                layer.b.copy_(torch.randn((), generator=gen))
        prior.set_enabled(True)
        xs = np.linspace(-8, 8, 641)
        grid = torch.tensor(np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2))
        with torch.no_grad():
            density = prior.log_prob(grid).exp().reshape(641, 641).numpy()
        assert abs(trapezoid_2d(density, xs, xs) - 1.0) < 1e-3


class TestFlowPriorSampling:
    def test_disabled_is_exact_base_sample(self):
        prior = FlowPrior(3, 2, generator=make_generator(4, "f"))
        gen_a = make_generator(5, "s")
        gen_b = make_generator(5, "s")
        sample = prior.sample(6, gen_a)
        assert torch.equal(sample, torch.randn(6, 3, generator=gen_b, dtype=torch.float64))

    def test_identity_layers_match_base_sample(self):
        prior = FlowPrior(3, 2, generator=make_generator(6, "f"))
        for layer in prior.layers:
            layer.set_target_u_hat_(torch.zeros(3), torch.randn(3, generator=make_generator(0, "w")))
        prior.set_enabled(True)
        base = torch.randn(5, 3, generator=make_generator(7, "s"), dtype=torch.float64)
        sample = prior.sample(5, make_generator(7, "s"))
        assert (sample - base).abs().max() < 1e-9

    def test_samples_match_density_by_weighted_ks(self):
        from oracles import weighted_ks_distance

        prior = FlowPrior(2, 3, generator=make_generator(8, "f"))
        for i, layer in enumerate(prior.layers):
            with torch.no_grad():
                gen = make_generator(200 + i, "f")
                layer.u.copy_(torch.randn(2, generator=gen) * 0.5)
                layer.w.copy_(torch.randn(2, generator=gen))
                layer.b.copy_(torch.randn((), generator=gen) * 0.5)
        prior.set_enabled(True)
        n = 10_000
        with torch.no_grad():
            flow_samples = prior.sample(n, make_generator(9, "s")).numpy()
            base = torch.randn(n, 2, generator=make_generator(10, "s"), dtype=torch.float64)
            log_w = prior.log_prob(base) - (-0.5 * (base * base).sum(-1) - math.log(2 * math.pi))
            weights = torch.exp(log_w - log_w.max()).numpy()
        for axis in range(2):
            d, ess = weighted_ks_distance(flow_samples[:, axis], base[:, axis].numpy(), weights)
            critical = 1.628 * math.sqrt((n + ess) / (n * ess))  # 1% two-sample level
            assert d < critical

    def test_sampled_points_have_finite_density(self):
        prior = FlowPrior(4, 3, generator=make_generator(11, "f"))
        prior.set_enabled(True)
        z = prior.sample(32, make_generator(12, "s"))
        assert torch.isfinite(prior.log_prob(z)).all()


class TestKL:
    def test_self_kl_is_zero_within_mc_error(self):
        prior = FlowPrior(4, 2, generator=make_generator(13, "f"))
        post = GaussianPosterior(torch.zeros(4), torch.zeros(4))
        zs = post.rsample(1000, make_generator(14, "s"))
        per_sample = post.log_prob(zs) - prior.log_prob(zs)
        est = float(per_sample.mean())
        se = float(per_sample.std() / math.sqrt(len(per_sample)))
        assert abs(est) <= max(3 * se, 1e-9)

    def test_matches_gaussian_closed_form(self):
        prior = FlowPrior(3, 2, generator=make_generator(15, "f"))
        mean = torch.tensor([0.7, -1.1, 0.4])
        log_std = torch.tensor([0.2, -0.3, 0.0])
        post = GaussianPosterior(mean, log_std)
        zs = post.rsample(4000, make_generator(16, "s"))
        per_sample = post.log_prob(zs) - prior.log_prob(zs)
        est = float(per_sample.mean())
        se = float(per_sample.std() / math.sqrt(len(per_sample)))
        var = torch.exp(2 * log_std)
        closed = float(0.5 * ((mean**2).sum() + var.sum() - 3 - 2 * log_std.sum()))
        assert abs(est - closed) <= 3 * se

    def test_gradient_wrt_flow_parameters_matches_fd(self):
        prior = FlowPrior(3, 2, init_scale=0.3, generator=make_generator(17, "f"))
        prior.set_enabled(True)
        post = GaussianPosterior(torch.tensor([0.3, -0.2, 0.5]), torch.tensor([-0.5, 0.1, 0.0]))

        def value():
            return kl_z_mc(post, prior, 32, make_generator(18, "crn"))

        loss = value()
        loss.backward()
        for layer in prior.layers:
            for param in (layer.u, layer.w, layer.b):
                flat = param.data.reshape(-1)
                grad = param.grad.reshape(-1)
                for i in range(flat.numel()):
                    fd = central_difference(value, flat, i, 1e-6)
                    assert relative_error(float(grad[i]), fd) < 1e-4

    def test_sample_reuse_matches_direct_computation(self):
        prior = FlowPrior(2, 2, generator=make_generator(19, "f"))
        post = GaussianPosterior(torch.zeros(2), torch.zeros(2))
        zs = post.rsample(10, make_generator(20, "s"))
        direct = (post.log_prob(zs) - prior.log_prob(zs)).mean()
        assert torch.equal(kl_z_mc(post, prior, 0, samples=zs), direct)
