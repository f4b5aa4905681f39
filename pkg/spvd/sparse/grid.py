""" Sparse voxel grids, voxelization and trilinear devoxelization.

Coordinates are integer (b, i, j, k) rows. A grid at `stride` s over a base `resolution` R
spans `extent = R // s` voxels per axis. Each coordinate is hashed exactly to the int64 key
((b * E + i) * E + j) * E + k, and lookups binary-search the sorted keys, so there are no
lossy collisions.

Point coordinates are expected in [-1, 1]^3. The voxel index of a point is
floor((p + 1) / 2 * extent) clamped to [0, extent - 1]; points outside the cube are clamped,
never rejected.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.errors import ConfigError, ContractError, DimensionError, IndexRangeError
from spvd.spvd_types import FloatArray, IntArray

# Corner offsets of the 8 trilinear neighbors, x-major.
CORNERS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])


def encode_coords(coords: IntArray, extent: int) -> IntArray:
    """Hash (b, i, j, k) rows to int64 keys. Spatial indices must lie in [0, extent)."""

    c = np.asarray(coords, dtype=np.int64)
    return ((c[:, 0] * extent + c[:, 1]) * extent + c[:, 2]) * extent + c[:, 3]


def decode_keys(keys: IntArray, extent: int) -> IntArray:
    keys = np.asarray(keys, dtype=np.int64)
    k = keys % extent
    j = (keys // extent) % extent
    i = (keys // extent**2) % extent
    b = keys // extent**3
    return np.stack([b, i, j, k], axis=1)


def quantize(points: FloatArray, extent: int) -> IntArray:
    """Voxel indices of points in [-1, 1]^3 on a grid of `extent` voxels per axis."""

    idx = np.floor((np.asarray(points, dtype=np.float64) + 1.0) / 2.0 * extent)
    return np.clip(idx, 0, extent - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SparseGrid:
    """Active voxels with one feature row each.

    Rows of one sample are contiguous and batch indices are non-decreasing, which lets
    per-sample operations run on segment ids instead of searching voxels.
    """

    coords: IntArray
    features: Tensor
    stride: int
    resolution: int
    batch_size: int

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.int64)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 4:
            raise DimensionError(f"coords must have shape (R, 4), got {coords.shape}")
        if self.features.ndim != 2 or self.features.shape[0] != coords.shape[0]:
            raise DimensionError(
                f"features {self.features.shape} do not align with {coords.shape[0]} coords"
            )
        if self.stride < 1 or self.resolution % self.stride:
            raise ConfigError(f"stride {self.stride} does not divide {self.resolution}")
        if not len(coords):
            return
        b = coords[:, 0]
        if (np.diff(b) < 0).any() or b.min() < 0 or b.max() >= self.batch_size:
            raise ContractError("batch indices must be non-decreasing and below batch_size")
        spatial = coords[:, 1:]
        if spatial.min() < 0 or spatial.max() >= self.extent:
            raise ContractError(f"voxel indices must lie in [0, {self.extent})")
        if np.unique(self.keys).size != len(coords):
            raise ContractError("voxel coordinates must be unique")

    @property
    def extent(self) -> int:
        return self.resolution // self.stride

    @property
    def num_rows(self) -> int:
        return int(self.coords.shape[0])

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    @property
    def batch_ids(self) -> IntArray:
        return self.coords[:, 0]

    @cached_property
    def keys(self) -> IntArray:
        return encode_coords(self.coords, self.extent)

    @cached_property
    def _key_order(self) -> IntArray:
        return np.argsort(self.keys, kind="stable")

    @cached_property
    def _sorted_keys(self) -> IntArray:
        return self.keys[self._key_order]

    @cached_property
    def coord_index(self) -> dict[tuple[int, int, int, int], int]:
        """Map from coordinate tuple to row; the exact inverse of `coords`."""

        coords = self.coords.tolist()
        return {tuple(c): row for row, c in enumerate(coords)}  # type: ignore[misc]

    @cached_property
    def row_offsets(self) -> IntArray:
        """Row boundaries per sample: rows of sample b are offsets[b]:offsets[b + 1]."""

        counts = np.bincount(self.batch_ids, minlength=self.batch_size)
        return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def sample_rows(self, b: int) -> IntArray:
        return np.arange(self.row_offsets[b], self.row_offsets[b + 1])

    def lookup(self, coords: IntArray) -> IntArray:
        """Rows of the given (b, i, j, k) coordinates, -1 where the voxel is not active."""

        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
        rows = np.full(len(coords), -1, dtype=np.int64)
        if not self.num_rows or not len(coords):
            return rows
        inside = (
            (coords[:, 1:] >= 0).all(axis=1)
            & (coords[:, 1:] < self.extent).all(axis=1)
            & (coords[:, 0] >= 0)
            & (coords[:, 0] < self.batch_size)
        )
        query = encode_coords(coords[inside], self.extent)
        pos = np.searchsorted(self._sorted_keys, query)
        pos = np.minimum(pos, self.num_rows - 1)
        found = self._sorted_keys[pos] == query
        hits = np.flatnonzero(inside)
        rows[hits[found]] = self._key_order[pos[found]]
        return rows

    def with_features(self, features: Tensor) -> "SparseGrid":
        """A grid on the same coordinates carrying new features."""

        grid = SparseGrid.__new__(SparseGrid)
        if features.ndim != 2 or features.shape[0] != self.num_rows:
            raise DimensionError(f"features {features.shape} for {self.num_rows} voxels")
        for name in ("coords", "stride", "resolution", "batch_size"):
            object.__setattr__(grid, name, getattr(self, name))
        object.__setattr__(grid, "features", features)
        # The coordinate caches carry over unchanged.
        for name in ("keys", "_key_order", "_sorted_keys", "row_offsets"):
            if name in self.__dict__:
                grid.__dict__[name] = self.__dict__[name]
        return grid


@dataclass(frozen=True, eq=False)
class Point2VoxelMap:
    """Per point: owning voxel row and the 8 trilinear neighbor rows with weights.

    Missing neighbors have row -1. Weights are non-negative; they sum to 1 over all 8
    corners, so the sum over present neighbors is at most 1.
    """

    voxel_rows: IntArray
    neighbor_rows: IntArray
    weights: FloatArray
    num_rows: int
    stride: int

    @property
    def num_points(self) -> int:
        return int(self.neighbor_rows.shape[0])


def _flatten_points(points: FloatArray) -> tuple[FloatArray, IntArray, int]:
    points = np.asarray(points)
    if points.ndim != 3 or points.shape[2] != 3:
        raise DimensionError(f"points must have shape (B, N, 3), got {points.shape}")
    batch, n = points.shape[:2]
    batch_ids = np.repeat(np.arange(batch), n)
    return points.reshape(-1, 3), batch_ids, batch


def point_to_voxel_map(
    grid: SparseGrid, points: FloatArray, voxel_rows: Optional[IntArray] = None
) -> Point2VoxelMap:
    """Trilinear neighbor rows and weights of every point against `grid`.

    Voxel centers sit at continuous index v + 0.5; the continuous index of a point is clamped
    to the center range so that clamped points interpolate from the boundary voxels.
    """

    flat, batch_ids, _ = _flatten_points(points)
    extent = grid.extent
    u = (flat.astype(np.float64) + 1.0) / 2.0 * extent - 0.5
    u = np.clip(u, 0.0, extent - 1)
    lo = np.floor(u).astype(np.int64)
    frac = u - lo

    neighbor_rows = np.empty((len(flat), 8), dtype=np.int64)
    weights = np.empty((len(flat), 8), dtype=np.float64)
    for c, corner in enumerate(CORNERS):
        spatial = lo + corner
        neighbor_rows[:, c] = grid.lookup(np.column_stack([batch_ids, spatial]))
        w = np.where(corner == 1, frac, 1.0 - frac)
        weights[:, c] = w[:, 0] * w[:, 1] * w[:, 2]

    if voxel_rows is None:
        owner = np.column_stack([batch_ids, quantize(flat, extent)])
        voxel_rows = grid.lookup(owner)
    return Point2VoxelMap(
        voxel_rows=np.asarray(voxel_rows, dtype=np.int64),
        neighbor_rows=neighbor_rows,
        weights=weights,
        num_rows=grid.num_rows,
        stride=grid.stride,
    )


def voxelize(
    points: FloatArray,
    point_features: Tensor,
    resolution: int,
    stride: int = 1,
) -> tuple[SparseGrid, Point2VoxelMap]:
    """Average point features into the active voxels of a sparse grid.

    Parameters
    ----------
    points : ndarray
        (B, N, 3) coordinates, nominally in [-1, 1]^3.
    point_features : Tensor
        (B * N, F) features, row-major over (sample, point).
    resolution : int
        Base grid resolution per axis.
    stride : int
        Voxel edge in base voxels; the grid spans resolution // stride voxels per axis.

    Returns
    -------
    (SparseGrid, Point2VoxelMap)
        The grid with rows sorted by coordinate key, and the point-to-voxel map.

    Raises
    ------
    ConfigError
        If the resolution is below 2.
    DimensionError
        If features do not have one row per point.
    """

    if resolution < 2:
        raise ConfigError(f"Voxel resolution must be at least 2, got {resolution}.")
    if stride < 1 or resolution % stride:
        raise ConfigError(f"stride {stride} does not divide resolution {resolution}")
    flat, batch_ids, batch = _flatten_points(points)
    if point_features.ndim != 2 or point_features.shape[0] != len(flat):
        raise DimensionError(
            f"point features {point_features.shape} for {len(flat)} points"
        )

    extent = resolution // stride
    coords = np.column_stack([batch_ids, quantize(flat, extent)])
    keys, inverse = np.unique(encode_coords(coords, extent), return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    features = ops.segment_reduce(
        ops.gather_rows(point_features, order), inverse[order], "mean", len(keys)
    )
    grid = SparseGrid(decode_keys(keys, extent), features, stride, resolution, batch)
    logging.debug(
        f"voxelize: points={len(flat)} voxels={grid.num_rows} extent={extent} stride={stride}"
    )
    return grid, point_to_voxel_map(grid, points, voxel_rows=inverse)


def devoxelize_trilinear(grid: SparseGrid, p2v: Point2VoxelMap) -> Tensor:
    """Interpolate voxel features back to the points of `p2v`.

    Each point receives the weighted sum of its present neighbors; absent neighbors
    contribute nothing and the weights are not renormalized.

    Raises:
        IndexRangeError: If the map was built against a different grid.
    """

    if p2v.num_rows != grid.num_rows or p2v.neighbor_rows.max(initial=-1) >= grid.num_rows:
        raise IndexRangeError(
            f"point-to-voxel map built for {p2v.num_rows} voxels, grid has {grid.num_rows}"
        )
    present = p2v.neighbor_rows >= 0
    point_idx, corner_idx = np.nonzero(present)
    rows = p2v.neighbor_rows[point_idx, corner_idx]
    w = Tensor(p2v.weights[point_idx, corner_idx][:, None], dtype=grid.features.dtype)
    contributions = ops.mul(ops.gather_rows(grid.features, rows), w)
    out = ops.zeros((p2v.num_points, grid.width), dtype=grid.features.dtype)
    return ops.scatter_add(out, point_idx, contributions)
