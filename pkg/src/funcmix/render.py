"""Figure emission: sample grids, entropy heatmaps, segmentation color maps.

2-D feature grids render directly; 3-D voxel grids become a montage of
axis slices. Segmentation uses a fixed component palette and entropy a
monochrome ramp normalized to [0, log K], so colors are comparable
across runs.
"""

import math
import os
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image

__all__ = ["PALETTE", "render_grid"]

# One fixed color per mixture component (cycled past 12).
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (0, 128, 128), (220, 190, 255), (170, 110, 40),
    ],
    dtype=np.uint8,
)


def _intensity_tile(grid: np.ndarray) -> np.ndarray:
    if grid.ndim < 2 or grid.shape[-1] not in (1, 3):
        raise ValueError(f"intensity grids need 1 or 3 channels, got shape {grid.shape}")
    arr = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    if arr.shape[-1] == 1:
        arr = np.repeat(arr, 3, axis=-1)
    return np.round(arr * 255.0).astype(np.uint8)


def _segmentation_tile(grid: np.ndarray, num_components: int) -> np.ndarray:
    idx = np.asarray(grid, dtype=np.int64)
    if idx.min() < 1 or idx.max() > num_components:
        raise ValueError(f"segmentation values must lie in 1..{num_components}")
    return PALETTE[(idx - 1) % len(PALETTE)]


def _entropy_tile(grid: np.ndarray, num_components: int) -> np.ndarray:
    norm = math.log(num_components) if num_components > 1 else 1.0
    arr = np.clip(np.asarray(grid, dtype=np.float64) / norm, 0.0, 1.0)
    gray = np.round(arr * 255.0).astype(np.uint8)
    return np.stack([gray, gray, gray], axis=-1)


def _flatten_3d(tile: np.ndarray) -> np.ndarray:
    """Voxel montage: axis-0 slices side by side with a 1px separator."""
    if tile.ndim == 3:
        return tile
    slices = [tile[i] for i in range(tile.shape[0])]
    sep = np.zeros((tile.shape[1], 1, 3), dtype=np.uint8)
    parts = []
    for i, s in enumerate(slices):
        if i:
            parts.append(sep)
        parts.append(s)
    return np.concatenate(parts, axis=1)


def render_grid(
    grids: Sequence[np.ndarray],
    path,
    kind: str = "intensity",
    num_components: int = 1,
    layout: Optional[Tuple[int, int]] = None,
    cell_size: int = 1,
    padding: int = 1,
) -> str:
    """Tile the given grids into one PNG; returns the written path.

    kind: "intensity" (channels last, values in [0,1]), "segmentation"
    (integer component indices), or "entropy" (nats). All grids must share
    a shape; 3-D grids must be single-channel.
    """
    if not grids:
        raise ValueError("nothing to render")
    shapes = {tuple(np.asarray(g).shape) for g in grids}
    if len(shapes) > 1:
        raise ValueError(f"grids have mixed shapes: {sorted(shapes)}")
    tiles = []
    for grid in grids:
        grid = np.asarray(grid)
        spatial_ndim = grid.ndim - 1 if kind == "intensity" else grid.ndim
        if spatial_ndim not in (2, 3):
            raise ValueError(f"can render 2-D or 3-D grids, got spatial rank {spatial_ndim}")
        if kind == "intensity":
            tile = _intensity_tile(grid)
        elif kind == "segmentation":
            tile = np.ascontiguousarray(_segmentation_tile(grid, num_components))
        elif kind == "entropy":
            tile = _entropy_tile(grid, num_components)
        else:
            raise ValueError(f"unknown render kind {kind!r}")
        tile = _flatten_3d(tile)
        if cell_size > 1:
            tile = np.repeat(np.repeat(tile, cell_size, axis=0), cell_size, axis=1)
        tiles.append(tile)
    rows, cols = layout if layout is not None else (1, len(tiles))
    if rows * cols < len(tiles):
        raise ValueError(f"layout {rows}x{cols} cannot hold {len(tiles)} tiles")
    h, w, _ = tiles[0].shape
    canvas = np.zeros((rows * h + (rows + 1) * padding, cols * w + (cols + 1) * padding, 3), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        y = padding + r * (h + padding)
        x = padding + c * (w + padding)
        canvas[y : y + h, x : x + w] = tile
    tmp = f"{path}.tmp"
    Image.fromarray(canvas).save(tmp, format="PNG")
    os.replace(tmp, path)
    return str(path)
