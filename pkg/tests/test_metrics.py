import math

import numpy as np
import pytest
import torch

from funcmix.metrics import EvalReport, evaluate_testset, psnr, rmse
from funcmix.rng import make_generator
from conftest import make_cloud, make_tiny_model


class TestRmse:
    def test_identical_inputs_give_zero(self):
        y = torch.rand(10, 3, generator=make_generator(0, "m"))
        assert rmse(y, y) == 0.0

    def test_full_scale_offset_on_one_channel(self):
        y = torch.zeros(10, 1)
        assert abs(rmse(y, y + 1.0) - 255.0) < 1e-12

    def test_matches_hand_summation(self):
        gen = make_generator(1, "m")
        a = torch.rand(10, 3, generator=gen)
        b = torch.rand(10, 3, generator=gen)
        total = 0.0
        for d in range(10):
            total += sum((float(a[d, c]) * 255 - float(b[d, c]) * 255) ** 2 for c in range(3))
        assert abs(rmse(a, b) - math.sqrt(total / 10)) < 1e-12

    def test_symmetry_and_triangle_inequality(self):
        gen = make_generator(2, "m")
        for _ in range(20):
            a, b, c = (torch.rand(8, 2, generator=gen) for _ in range(3))
            assert rmse(a, b) == rmse(b, a)
            assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rmse(torch.zeros(3, 1), torch.zeros(4, 1))


class TestPsnr:
    def test_zero_db_at_full_scale_error(self):
        y = torch.zeros(5, 1)
        assert abs(psnr(y, y + 1.0)) < 1e-12

    def test_twenty_db_at_tenth_scale_error(self):
        y = torch.zeros(5, 1)
        assert abs(psnr(y, y + 0.1) - 20.0) < 1e-12

    def test_exact_match_hits_the_sentinel(self):
        y = torch.rand(5, 2, generator=make_generator(3, "m"))
        assert psnr(y, y) == 99.0

    def test_strictly_decreasing_in_error(self):
        y = torch.zeros(6, 1)
        values = [psnr(y, y + off) for off in (0.01, 0.05, 0.1, 0.5, 1.0)]
        assert all(a > b for a, b in zip(values, values[1:]))


class _MemorizingModel:
    """Oracle stand-in: decodes every cloud to its own stored features."""

    min_points = 1

    def __init__(self, cloud):
        self._features = cloud.features

    def encode_z(self, cloud):
        class _Post:
            mean = torch.zeros(2)
        return _Post()

    def decode(self, z, coords):
        return self._features.unsqueeze(1), torch.ones(self._features.shape[0], 1)


class TestEvaluateTestset:
    def test_memorizing_model_scores_the_sentinel_everywhere(self):
        clouds = [make_cloud(12, seed=s) for s in range(4)]
        values = []
        for cloud in clouds:
            report = evaluate_testset([cloud], _MemorizingModel(cloud))
            values.extend(report.psnr_values)
        assert values == [99.0] * 4

    def test_report_length_and_mean_match_hand_aggregation(self):
        model = make_tiny_model()
        clouds = [make_cloud(16, seed=s) for s in range(5)]
        report = evaluate_testset(clouds, model, config={"train": {"seed": 0}})
        assert len(report.psnr_values) == 5
        assert abs(report.mean - sum(report.psnr_values) / 5) < 1e-12
        assert report.min == min(report.psnr_values)
        assert len(report.config_hash) == 16

    def test_deterministic_across_calls(self):
        model = make_tiny_model()
        clouds = [make_cloud(16, seed=s) for s in range(3)]
        a = evaluate_testset(clouds, model)
        b = evaluate_testset(clouds, model)
        assert a.psnr_values == b.psnr_values

    def test_completion_task_runs(self):
        model = make_tiny_model()
        clouds = [make_cloud(32, seed=s) for s in range(2)]
        report = evaluate_testset(clouds, model, task="complete")
        assert len(report.psnr_values) == 2
        assert all(np.isfinite(v) for v in report.psnr_values)

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            evaluate_testset([make_cloud(16)], make_tiny_model(), task="superres")

    def test_report_file_round_trip(self, tmp_path):
        report = EvalReport(task="reconstruct", psnr_values=[10.0, 20.0], config_hash="abc")
        path = tmp_path / "report.txt"
        report.write(path)
        text = path.read_text()
        assert "mean_psnr: 15.000000" in text
        assert "sample 1: 20.000000" in text
