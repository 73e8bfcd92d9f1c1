import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from funcmix.pointcloud import (
    DropoutPolicy,
    GridSpec,
    PointCloud,
    RFFEncoder,
    cloud_to_grid,
    grid_to_cloud,
    point_dropout,
)
from funcmix.rng import make_generator


class TestGridSpec:
    def test_rejects_zero_resolution(self):
        with pytest.raises(ValueError):
            GridSpec((4, 0))

    def test_cell_centers_are_affine_midpoints(self):
        # Oracle: centers at (i + 0.5) / R * 2 - 1, computed independently.
        spec = GridSpec((2,))
        expected = [(i + 0.5) / 2 * 2 - 1 for i in range(2)]
        assert spec.cell_centers().squeeze(1).tolist() == expected == [-0.5, 0.5]

    def test_single_cell_center_is_axis_midpoint(self):
        assert GridSpec((1,)).cell_centers().tolist() == [[0.0]]

    def test_point_count(self):
        assert GridSpec((28, 28)).n_cells == 784


class TestGridCloudConversion:
    def test_single_cell(self):
        cloud = grid_to_cloud(torch.tensor([[0.5]]).reshape(1, 1), GridSpec((1,)))
        assert cloud.coords.tolist() == [[0.0]]
        assert cloud.features.tolist() == [[0.5]]

    def test_28x28_grid_gives_784_points(self):
        grid = torch.rand(28, 28, 3)
        assert grid_to_cloud(grid, GridSpec((28, 28))).num_points == 784

    def test_round_trip_bit_exact(self):
        spec = GridSpec((5, 7))
        grid = torch.rand(5, 7, 3)
        assert torch.equal(cloud_to_grid(grid_to_cloud(grid, spec), spec), grid)

    def test_round_trip_survives_permutation(self):
        spec = GridSpec((4, 4))
        grid = torch.rand(4, 4, 2)
        cloud = grid_to_cloud(grid, spec)
        perm = torch.randperm(16, generator=make_generator(1, "perm"))
        shuffled = PointCloud(cloud.coords[perm], cloud.features[perm])
        assert torch.equal(cloud_to_grid(shuffled, spec), grid)

    def test_missing_point_rejected(self):
        spec = GridSpec((4,))
        cloud = grid_to_cloud(torch.rand(4, 1), spec)
        partial = cloud.subset(torch.tensor([0, 1, 2]))
        with pytest.raises(ValueError):
            cloud_to_grid(partial, spec)

    def test_duplicate_coordinate_rejected(self):
        spec = GridSpec((4,))
        cloud = grid_to_cloud(torch.rand(4, 1), spec)
        dup = PointCloud(cloud.coords[[0, 0, 2, 3]], cloud.features)
        with pytest.raises(ValueError):
            cloud_to_grid(dup, spec)

    def test_off_grid_coordinate_rejected(self):
        spec = GridSpec((4,))
        cloud = grid_to_cloud(torch.rand(4, 1), spec)
        nudged = PointCloud(cloud.coords + 1e-4, cloud.features)
        with pytest.raises(ValueError):
            cloud_to_grid(nudged, spec)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            grid_to_cloud(torch.rand(4, 5, 1), GridSpec((4, 4)))

    @given(
        shape=st.lists(st.integers(1, 6), min_size=1, max_size=3),
        channels=st.integers(1, 3),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, shape, channels, seed):
        spec = GridSpec(tuple(shape))
        gen = make_generator(seed, "grid")
        grid = torch.rand(*shape, channels, generator=gen)
        assert torch.equal(cloud_to_grid(grid_to_cloud(grid, spec), spec), grid)


class TestPointCloudInvariants:
    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(torch.zeros(3, 2), torch.zeros(4, 1))

    def test_out_of_range_coordinates_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(torch.tensor([[1.5, 0.0]]), torch.zeros(1, 1))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(torch.tensor([[0.0, 0.0]]), torch.tensor([[float("nan")]]))


class TestRFFEncoder:
    def test_zero_matrix_gives_ones_and_zeros(self):
        enc = RFFEncoder(2, 5, 1.0, generator=make_generator(0, "rff"))
        with torch.no_grad():
            enc.projection.zero_()
        out = enc(torch.tensor([0.3, -0.7]))
        assert torch.equal(out, torch.cat([torch.ones(5), torch.zeros(5)]))

    def test_zero_input_gives_ones_and_zeros(self):
        enc = RFFEncoder(3, 4, 2.0, generator=make_generator(0, "rff"))
        out = enc(torch.zeros(3))
        assert torch.equal(out, torch.cat([torch.ones(4), torch.zeros(4)]))

    def test_output_length_is_twice_frequency_count(self):
        enc = RFFEncoder(2, 128, 2.0, generator=make_generator(0, "rff"))
        assert enc(torch.zeros(2)).shape == (256,)

    def test_deterministic_for_fixed_projection(self):
        enc = RFFEncoder(2, 8, 2.0, generator=make_generator(0, "rff"))
        x = torch.rand(10, 2) * 2 - 1
        assert torch.equal(enc(x), enc(x))

    def test_components_bounded_and_pythagorean(self):
        enc = RFFEncoder(3, 16, 2.0, generator=make_generator(1, "rff"))
        x = torch.rand(50, 3, generator=make_generator(2, "rff")) * 2 - 1
        out = enc(x)
        assert out.min() >= -1.0 and out.max() <= 1.0
        cos_half, sin_half = out[:, :16], out[:, 16:]
        ones = cos_half**2 + sin_half**2
        assert (ones - 1.0).abs().max() < 1e-12

    def test_dimension_mismatch(self):
        enc = RFFEncoder(2, 4, 1.0, generator=make_generator(0, "rff"))
        with pytest.raises(ValueError):
            enc(torch.zeros(3))


def _random_cloud(n, seed):
    gen = make_generator(seed, "cloud")
    return PointCloud(torch.rand(n, 2, generator=gen) * 2 - 1, torch.rand(n, 1, generator=gen))


class TestPointDropout:
    def test_alpha_zero_is_identity(self):
        cloud = _random_cloud(20, 0)
        out = point_dropout(cloud, DropoutPolicy(0.0, 4), make_generator(0, "drop"))
        assert torch.equal(out.coords, cloud.coords)
        assert torch.equal(out.features, cloud.features)

    def test_same_seed_same_output(self):
        cloud = _random_cloud(30, 1)
        policy = DropoutPolicy(0.5, 4)
        a = point_dropout(cloud, policy, make_generator(7, "drop"))
        b = point_dropout(cloud, policy, make_generator(7, "drop"))
        assert torch.equal(a.coords, b.coords)

    def test_floor_binds_when_cloud_at_minimum(self):
        cloud = _random_cloud(6, 2)
        for seed in range(20):
            out = point_dropout(cloud, DropoutPolicy(0.9, 6), make_generator(seed, "drop"))
            assert out.num_points == 6

    def test_floor_never_violated(self):
        cloud = _random_cloud(10, 3)
        policy = DropoutPolicy(0.95, 4)
        gen = make_generator(0, "drop")
        for _ in range(2000):
            assert point_dropout(cloud, policy, gen).num_points >= 4

    def test_pairs_preserved(self):
        # Features encode each point's identity, so pairing survives any subset.
        coords = torch.linspace(-1, 1, 50).unsqueeze(1)
        feats = (coords + 1.0) / 2.0
        cloud = PointCloud(coords, feats)
        out = point_dropout(cloud, DropoutPolicy(0.6, 5), make_generator(3, "drop"))
        assert torch.equal(out.features, (out.coords + 1.0) / 2.0)

    def test_small_cloud_rejected(self):
        with pytest.raises(ValueError):
            point_dropout(_random_cloud(3, 4), DropoutPolicy(0.5, 4), make_generator(0, "d"))

    def test_shared_probability_override(self):
        cloud = _random_cloud(40, 5)
        policy = DropoutPolicy(0.9, 4)
        out = point_dropout(cloud, policy, make_generator(1, "drop"), p=0.0)
        assert out.num_points == 40
