"""Point-cloud data model, grid conversions, coordinate encoding, dropout.

A sample is a set of (coordinate, feature) pairs. Coordinates live in
[-1, 1]^n_x; dense grids are a special case whose points sit at cell
centers. All operations are pure given an explicit torch.Generator.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
from torch import Tensor, nn

__all__ = [
    "GridSpec",
    "PointCloud",
    "RFFEncoder",
    "DropoutPolicy",
    "grid_to_cloud",
    "cloud_to_grid",
    "point_dropout",
]

# Tolerance for matching a coordinate to a grid-cell center.
_GRID_MATCH_ATOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Dense axis-aligned grid: per-axis resolutions, row-major axis order.

    Cell i on an axis of resolution R has center (i + 0.5) / R * 2 - 1,
    so every grid lies in [-1, 1] regardless of resolution.
    """

    shape: tuple

    def __post_init__(self):
        shape = tuple(int(r) for r in self.shape)
        if len(shape) == 0 or any(r < 1 for r in shape):
            raise ValueError(f"grid shape must have all resolutions >= 1, got {self.shape}")
        object.__setattr__(self, "shape", shape)

    @property
    def n_axes(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return math.prod(self.shape)

    def axis_centers(self, axis: int, dtype=torch.float64) -> Tensor:
        r = self.shape[axis]
        i = torch.arange(r, dtype=dtype)
        return (i + 0.5) / r * 2.0 - 1.0

    def cell_centers(self, dtype=torch.float64) -> Tensor:
        """All cell centers, shape (n_cells, n_axes), row-major order."""
        axes = [self.axis_centers(a, dtype) for a in range(self.n_axes)]
        mesh = torch.meshgrid(*axes, indexing="ij")
        return torch.stack([m.reshape(-1) for m in mesh], dim=-1)

    def scaled(self, scale: int) -> "GridSpec":
        if int(scale) < 1:
            raise ValueError(f"scale must be a positive integer, got {scale}")
        return GridSpec(tuple(r * int(scale) for r in self.shape))


@dataclass
class PointCloud:
    """Paired coordinate and feature arrays, the model's universal currency.

    coords: (D, n_x) in [-1, 1]; features: (D, n_y). `grid_spec` is kept
    when the cloud is known to be a full dense grid.
    """

    coords: Tensor
    features: Tensor
    grid_spec: Optional[GridSpec] = field(default=None)

    def __post_init__(self):
        if self.coords.ndim != 2 or self.features.ndim != 2:
            raise ValueError(
                f"coords and features must be 2-D, got {tuple(self.coords.shape)} "
                f"and {tuple(self.features.shape)}"
            )
        if self.coords.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"coords and features must pair up: {self.coords.shape[0]} vs "
                f"{self.features.shape[0]} points"
            )
        if self.coords.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not torch.isfinite(self.coords).all() or not torch.isfinite(self.features).all():
            raise ValueError("coords and features must be finite")
        if self.coords.abs().max() > 1.0 + _GRID_MATCH_ATOL:
            raise ValueError("coordinates must lie in [-1, 1] per axis")

    @property
    def num_points(self) -> int:
        return self.coords.shape[0]

    @property
    def coord_dim(self) -> int:
        return self.coords.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: Tensor) -> "PointCloud":
        """Cloud restricted to `index` (pairing preserved, grid tag dropped)."""
        return PointCloud(self.coords[index], self.features[index], grid_spec=None)


def grid_to_cloud(features_on_grid: Tensor, spec: GridSpec) -> PointCloud:
    """Flatten a dense feature grid into a cloud at the cell centers.

    `features_on_grid` has shape spec.shape + (n_y,); point order is
    row-major over the grid axes. Features are copied unchanged.
    """
    expected = spec.shape
    if features_on_grid.ndim != spec.n_axes + 1 or tuple(features_on_grid.shape[:-1]) != expected:
        raise ValueError(
            f"feature grid shape {tuple(features_on_grid.shape)} does not match "
            f"grid {expected} plus a channel axis"
        )
    coords = spec.cell_centers(dtype=features_on_grid.dtype)
    features = features_on_grid.reshape(spec.n_cells, features_on_grid.shape[-1]).clone()
    return PointCloud(coords, features, grid_spec=spec)


def _grid_indices(coords: Tensor, spec: GridSpec) -> Tensor:
    """Map each coordinate row to its flat row-major cell index.

    Raises if any coordinate is not a cell center of `spec` (within
    1e-9) or if the cloud does not cover the grid exactly once.
    """
    flat = torch.zeros(coords.shape[0], dtype=torch.long)
    for axis in range(spec.n_axes):
        r = spec.shape[axis]
        c = coords[:, axis]
        i = torch.round(((c + 1.0) / 2.0) * r - 0.5).long()
        centers = (i.to(c.dtype) + 0.5) / r * 2.0 - 1.0
        bad = (i < 0) | (i >= r) | ((c - centers).abs() > _GRID_MATCH_ATOL)
        if bad.any():
            raise ValueError(
                f"coordinate {coords[bad.nonzero()[0, 0]].tolist()} is not a cell "
                f"center of grid {spec.shape}"
            )
        flat = flat * r + i
    return flat


def cloud_to_grid(cloud: PointCloud, spec: GridSpec) -> Tensor:
    """Exact inverse of grid_to_cloud, keyed by coordinate, not point order."""
    if cloud.num_points != spec.n_cells:
        raise ValueError(
            f"cloud has {cloud.num_points} points but grid {spec.shape} has "
            f"{spec.n_cells} cells"
        )
    if cloud.coord_dim != spec.n_axes:
        raise ValueError(f"cloud is {cloud.coord_dim}-D but grid has {spec.n_axes} axes")
    flat = _grid_indices(cloud.coords, spec)
    seen = torch.zeros(spec.n_cells, dtype=torch.bool)
    seen[flat] = True
    if not seen.all():
        raise ValueError("cloud does not cover every grid cell exactly once")
    grid = torch.empty(spec.n_cells, cloud.feature_dim, dtype=cloud.features.dtype)
    grid[flat] = cloud.features
    return grid.reshape(*spec.shape, cloud.feature_dim)


class RFFEncoder(nn.Module):
    """Random-frequency sinusoidal coordinate encoding.

    The projection matrix B (num_frequencies x coord_dim, entries
    N(0, sigma^2)) is drawn once at construction and then frozen; it is a
    buffer so checkpoints carry it and no gradient ever reaches it.
    Output is concat(cos(2 pi B x), sin(2 pi B x)), length 2m.
    """

    def __init__(
        self,
        coord_dim: int,
        num_frequencies: int,
        sigma: float,
        generator: Optional[torch.Generator] = None,
        dtype=torch.float64,
    ):
        super().__init__()
        if num_frequencies < 1:
            raise ValueError("need at least one frequency")
        self.coord_dim = coord_dim
        self.num_frequencies = num_frequencies
        self.sigma = float(sigma)
        b = torch.randn(num_frequencies, coord_dim, generator=generator, dtype=dtype)
        self.register_buffer("projection", b * self.sigma)

    @property
    def out_dim(self) -> int:
        return 2 * self.num_frequencies

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.coord_dim:
            raise ValueError(
                f"expected coordinates of dim {self.coord_dim}, got {x.shape[-1]}"
            )
        arg = 2.0 * math.pi * (x @ self.projection.T)
        return torch.cat([torch.cos(arg), torch.sin(arg)], dim=-1)


@dataclass(frozen=True)
class DropoutPolicy:
    """Point-dropout policy: max drop probability and a survivor floor.

    `min_retained` should equal the first encoder layer's centroid count
    so a reduced cloud always stays encodable.
    """

    alpha: float
    min_retained: int

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.min_retained < 1:
            raise ValueError("min_retained must be >= 1")


def point_dropout(
    cloud: PointCloud,
    policy: DropoutPolicy,
    generator: torch.Generator,
    p: Optional[float] = None,
) -> PointCloud:
    """Drop each point independently with probability p ~ U(0, alpha).

    `p` may be passed in so a whole batch shares one draw. If fewer than
    `min_retained` points survive, uniformly chosen dropped points are
    restored until the floor is met. Retained (coord, feature) pairs are
    untouched.
    """
    d = cloud.num_points
    if d < policy.min_retained:
        raise ValueError(
            f"cloud has {d} points, below the dropout floor {policy.min_retained}"
        )
    if p is None:
        p = policy.alpha * torch.rand((), generator=generator).item()
    if not (0.0 <= p <= policy.alpha):
        raise ValueError(f"dropout probability {p} outside [0, alpha={policy.alpha}]")
    keep = torch.rand(d, generator=generator) >= p
    deficit = policy.min_retained - int(keep.sum())
    if deficit > 0:
        dropped = (~keep).nonzero(as_tuple=True)[0]
        order = torch.randperm(dropped.numel(), generator=generator)
        keep[dropped[order[:deficit]]] = True
    if bool(keep.all()):
        return cloud
    return cloud.subset(keep.nonzero(as_tuple=True)[0])
