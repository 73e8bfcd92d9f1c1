"""Dataset container IO and the synthetic desk-scale datasets.

The on-disk container is a compressed NumPy .npz holding `coords`
(N x D x n_x), `features` (N x D x n_y), `grid_shape`, and
`feature_range`. It is written with fixed zip metadata so identical
content produces identical bytes.
"""

import io
import os
import zipfile
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from .pointcloud import GridSpec, PointCloud
from .rng import make_numpy_rng

__all__ = [
    "DatasetContainer",
    "SYNTHESIZERS",
    "save_container",
    "load_container",
    "to_clouds",
    "synthesize_toy_dataset",
    "split_dataset",
    "check_likelihood_domain",
]

SYNTHESIZERS = ("shapes2d", "blobs", "voxel_boxes")

_RANGE_ATOL = 1e-9


@dataclass
class DatasetContainer:
    coords: np.ndarray       # (N, D, n_x)
    features: np.ndarray     # (N, D, n_y)
    grid_shape: Tuple[int, ...]
    feature_range: Tuple[float, float]

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.grid_shape = tuple(int(r) for r in self.grid_shape)
        self.feature_range = (float(self.feature_range[0]), float(self.feature_range[1]))
        if self.coords.ndim != 3 or self.features.ndim != 3:
            raise ValueError("coords and features must be (N, D, dim) arrays")
        if self.coords.shape[:2] != self.features.shape[:2]:
            raise ValueError(
                f"coords {self.coords.shape} and features {self.features.shape} disagree"
            )
        lo, hi = self.feature_range
        if self.features.min() < lo - _RANGE_ATOL or self.features.max() > hi + _RANGE_ATOL:
            raise ValueError("features fall outside the declared feature_range")

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_container(path, container: DatasetContainer):
    """Write the .npz with zeroed zip timestamps: same content, same bytes."""
    entries = {
        "coords": container.coords,
        "features": container.features,
        "grid_shape": np.asarray(container.grid_shape, dtype=np.int64),
        "feature_range": np.asarray(container.feature_range, dtype=np.float64),
    }
    tmp = f"{path}.tmp"
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, arr in entries.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, _npy_bytes(arr))
    os.replace(tmp, path)


def load_container(path) -> DatasetContainer:
    with np.load(path) as data:
        missing = {"coords", "features", "grid_shape", "feature_range"} - set(data.files)
        if missing:
            raise ValueError(f"container is missing arrays: {sorted(missing)}")
        return DatasetContainer(
            coords=data["coords"],
            features=data["features"],
            grid_shape=tuple(data["grid_shape"].tolist()),
            feature_range=tuple(data["feature_range"].tolist()),
        )


def to_clouds(container: DatasetContainer, dtype=torch.float64) -> List[PointCloud]:
    """One cloud per sample; the grid tag is attached when coordinates sit
    exactly on the container grid's cell centers."""
    spec = GridSpec(container.grid_shape)
    centers = spec.cell_centers(dtype=dtype)
    clouds = []
    for i in range(container.n_samples):
        coords = torch.as_tensor(container.coords[i], dtype=dtype)
        feats = torch.as_tensor(container.features[i], dtype=dtype)
        on_grid = (
            coords.shape == centers.shape
            and bool((coords - centers).abs().max() <= _RANGE_ATOL)
        )
        clouds.append(PointCloud(coords, feats, grid_spec=spec if on_grid else None))
    return clouds


def check_likelihood_domain(container: DatasetContainer, family: str):
    """Reject containers whose features cannot feed the chosen likelihood."""
    lo, hi = container.feature_range
    if not (lo >= -_RANGE_ATOL and hi <= 1.0 + _RANGE_ATOL):
        raise ValueError(f"likelihood {family!r} expects features in [0, 1], range is ({lo}, {hi})")
    if family == "bernoulli":
        values = container.features
        if not np.all((np.abs(values) < _RANGE_ATOL) | (np.abs(values - 1.0) < _RANGE_ATOL)):
            raise ValueError("bernoulli likelihood expects features in {0, 1}")


def _grid_coords(grid_shape: Sequence[int]) -> np.ndarray:
    spec = GridSpec(tuple(grid_shape))
    return spec.cell_centers(dtype=torch.float64).numpy()


def _shapes2d(n_samples: int, grid_shape, rng: np.random.Generator) -> DatasetContainer:
    """Random colored circle or rectangle on a plain random background,
    quantized to the 256-level intensity lattice."""
    if len(grid_shape) != 2:
        raise ValueError("shapes2d needs a 2-D grid")
    coords = _grid_coords(grid_shape)
    features = np.empty((n_samples, coords.shape[0], 3))
    for i in range(n_samples):
        background = rng.uniform(0.0, 1.0, size=3)
        color = rng.uniform(0.0, 1.0, size=3)
        center = rng.uniform(-0.55, 0.55, size=2)
        half = rng.uniform(0.15, 0.35)
        img = np.tile(background, (coords.shape[0], 1))
        offset = coords - center
        if rng.uniform() < 0.5:
            mask = (offset**2).sum(axis=1) <= half**2
        else:
            mask = np.abs(offset).max(axis=1) <= half
        img[mask] = color
        features[i] = img
    features = np.round(features * 255.0) / 255.0
    return DatasetContainer(
        coords=np.tile(coords, (n_samples, 1, 1)),
        features=features,
        grid_shape=tuple(grid_shape),
        feature_range=(0.0, 1.0),
    )


def _blobs(n_samples: int, grid_shape, rng: np.random.Generator) -> DatasetContainer:
    """Smooth scalar fields: a few Gaussian bumps, clipped to [0, 1]."""
    coords = _grid_coords(grid_shape)
    features = np.empty((n_samples, coords.shape[0], 1))
    for i in range(n_samples):
        n_bumps = rng.integers(1, 4)
        field = np.zeros(coords.shape[0])
        for _ in range(n_bumps):
            center = rng.uniform(-0.7, 0.7, size=len(grid_shape))
            width = rng.uniform(0.15, 0.45)
            amp = rng.uniform(0.4, 1.0)
            d2 = ((coords - center) ** 2).sum(axis=1)
            field += amp * np.exp(-d2 / (2.0 * width**2))
        features[i, :, 0] = np.clip(field, 0.0, 1.0)
    return DatasetContainer(
        coords=np.tile(coords, (n_samples, 1, 1)),
        features=features,
        grid_shape=tuple(grid_shape),
        feature_range=(0.0, 1.0),
    )


def _voxel_boxes(n_samples: int, grid_shape, rng: np.random.Generator) -> DatasetContainer:
    """3-D occupancy: one random axis-aligned cuboid per sample."""
    if len(grid_shape) != 3:
        raise ValueError("voxel_boxes needs a 3-D grid")
    coords = _grid_coords(grid_shape)
    features = np.empty((n_samples, coords.shape[0], 1))
    for i in range(n_samples):
        lo = rng.uniform(-0.9, 0.3, size=3)
        hi = lo + rng.uniform(0.4, 1.0, size=3)
        inside = np.all((coords >= lo) & (coords <= hi), axis=1)
        features[i, :, 0] = inside.astype(np.float64)
    return DatasetContainer(
        coords=np.tile(coords, (n_samples, 1, 1)),
        features=features,
        grid_shape=tuple(grid_shape),
        feature_range=(0.0, 1.0),
    )


def synthesize_toy_dataset(name: str, n_samples: int, grid_shape, seed: int) -> DatasetContainer:
    """Deterministic toy data; the name fixes the matching likelihood family
    (shapes2d -> discretized_logistic, blobs -> continuous_bernoulli,
    voxel_boxes -> bernoulli)."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = make_numpy_rng(seed, f"data.synth.{name}")
    if name == "shapes2d":
        return _shapes2d(n_samples, grid_shape, rng)
    if name == "blobs":
        return _blobs(n_samples, grid_shape, rng)
    if name == "voxel_boxes":
        return _voxel_boxes(n_samples, grid_shape, rng)
    raise ValueError(f"unknown synthesizer {name!r}; choose from {SYNTHESIZERS}")


def split_dataset(clouds: Sequence[PointCloud], fractions, seed: int):
    """Seeded disjoint (train, test) split by shuffled index."""
    f_train, f_test = fractions
    rng = make_numpy_rng(seed, "data.split")
    order = rng.permutation(len(clouds))
    n_train = int(round(f_train * len(clouds)))
    train = [clouds[i] for i in order[:n_train]]
    test = [clouds[i] for i in order[n_train:]]
    return train, test
