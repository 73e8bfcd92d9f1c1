import pytest
import torch

from funcmix.checkpoint import FORMAT_VERSION, load_checkpoint, restore_model, save_checkpoint
from funcmix.config import validate_config
from funcmix.model import build_model
from funcmix.rng import make_generator
from funcmix.training import elbo
from conftest import make_cloud


def _config():
    return validate_config({
        "model": {
            "K": 2, "dim_z": 4, "likelihood": "continuous_bernoulli",
            "generator_layers": [8], "hypernet_layers": [8], "categorical_layers": [8],
            "rff": {"m": 4, "sigma": 1.0},
        },
        "encoder": {"layers": [
            {"centroids": 8, "neighbors": 4, "h_weights": [8], "out_channels": 8},
            {"centroids": 2, "neighbors": 2, "h_weights": [8], "out_channels": 8},
        ]},
        "flow": {"T": 2, "warmup_epochs": 0},
        "train": {"epochs": 1, "bs": 4, "lr": 1e-3, "alpha": 0.2, "seed": 0},
        "data": {"synthesizer": "blobs", "n_samples": 8, "grid_shape": [4, 4]},
        "io": {"output_dir": "unused"},
    })


class TestCheckpointRoundTrip:
    def test_forward_outputs_bit_exact_after_reload(self, tmp_path):
        config = _config()
        model = build_model(config, 2, 1)
        model.flow.set_enabled(True)
        path = tmp_path / "m.pt"
        save_checkpoint(path, model, config, epoch=3,
                        rng_states={"posterior": make_generator(0, "s").get_state()})
        restored = restore_model(load_checkpoint(path))
        assert restored.flow.enabled is True
        probe = [make_cloud(16, seed=s) for s in range(3)]
        for cloud in probe:
            a = model.encode_z(cloud)
            b = restored.encode_z(cloud)
            assert torch.equal(a.mean, b.mean) and torch.equal(a.log_std, b.log_std)
            z = a.mean.detach()
            mu_a, pi_a = model.decode(z, cloud.coords)
            mu_b, pi_b = restored.decode(z, cloud.coords)
            assert torch.equal(mu_a, mu_b) and torch.equal(pi_a, pi_b)
            assert torch.equal(model.flow.log_prob(z), restored.flow.log_prob(z))
        terms_a = elbo(probe, model, make_generator(1, "s"), 1)
        terms_b = elbo(probe, restored, make_generator(1, "s"), 1)
        assert float(terms_a.elbo) == float(terms_b.elbo)

    def test_epoch_and_rng_state_preserved(self, tmp_path):
        config = _config()
        model = build_model(config, 2, 1)
        state = make_generator(7, "x").get_state()
        path = tmp_path / "m.pt"
        save_checkpoint(path, model, config, epoch=11, rng_states={"dropout": state})
        payload = load_checkpoint(path)
        assert payload["epoch"] == 11
        assert torch.equal(payload["rng_states"]["dropout"], state)
        assert payload["config"]["model"]["K"] == 2

    def test_unknown_version_rejected(self, tmp_path):
        config = _config()
        model = build_model(config, 2, 1)
        path = tmp_path / "m.pt"
        save_checkpoint(path, model, config, epoch=0)
        payload = torch.load(path, weights_only=True)
        payload["format_version"] = FORMAT_VERSION + 1
        torch.save(payload, path)
        with pytest.raises(ValueError, match="format version"):
            load_checkpoint(path)

    def test_rebuild_from_config_alone_differs_without_state(self, tmp_path):
        # The state_dict, not the seed alone, carries trained weights.
        config = _config()
        model = build_model(config, 2, 1)
        with torch.no_grad():
            model.decoder.log_scale.add_(0.5)
        path = tmp_path / "m.pt"
        save_checkpoint(path, model, config, epoch=0)
        restored = restore_model(load_checkpoint(path))
        assert torch.equal(restored.decoder.log_scale, model.decoder.log_scale)
        fresh = build_model(config, 2, 1)
        assert not torch.equal(fresh.decoder.log_scale, model.decoder.log_scale)
