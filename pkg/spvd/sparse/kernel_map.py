""" Kernel maps: the (input row, output row) pairs a sparse convolution visits per offset.

Conventions, with coordinates in the index space of their own stride and r the stride ratio:

- forward (stride 1 or 2):  coord_in = coord_out * r + delta
- transpose (stride 2):     coord_out = coord_in * r + delta

Stride-1 maps are submanifold: the output coordinates are the input coordinates. A stride-2
map outputs the distinct coordinates floor(coord_in / 2). A transposed map writes onto the
coordinates cached by the encoder at the finer stride.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from spvd.autodiff.tensor import Tensor
from spvd.errors import ConfigError, ContractError
from spvd.sparse.grid import SparseGrid, decode_keys, encode_coords
from spvd.spvd_types import IntArray


def kernel_offsets(kernel_size: int) -> IntArray:
    """Offsets of a cubic kernel: {-1, 0, 1}^3 for size 3, {0, 1}^3 for size 2."""

    if kernel_size == 3:
        values = (-1, 0, 1)
    elif kernel_size == 2:
        values = (0, 1)
    else:
        raise ConfigError(f"Kernel size {kernel_size} is not supported.")
    return np.array(list(itertools.product(values, repeat=3)), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class KernelMap:
    offsets: IntArray
    in_rows: list[IntArray]
    out_rows: list[IntArray]
    out_coords: IntArray
    in_stride: int
    out_stride: int
    transpose: bool

    @property
    def kernel_volume(self) -> int:
        return int(self.offsets.shape[0])

    @property
    def num_out(self) -> int:
        return int(self.out_coords.shape[0])

    @property
    def num_pairs(self) -> int:
        return sum(len(rows) for rows in self.in_rows)

    def pairs(self, k: int) -> list[tuple[int, int]]:
        """The (input_row, output_row) pairs of offset `k`."""

        return list(zip(self.in_rows[k].tolist(), self.out_rows[k].tolist()))


def coordinate_grid(
    coords: IntArray, stride: int, resolution: int, batch_size: int
) -> SparseGrid:
    """A featureless grid, used as a coordinate index."""

    return SparseGrid(coords, Tensor(np.zeros((len(coords), 0))), stride, resolution, batch_size)


def downsample_coords(coords: IntArray, extent: int) -> IntArray:
    """Distinct coordinates floor(c / 2) of a grid with `extent` voxels per axis, key-sorted."""

    coarse = np.asarray(coords, dtype=np.int64).copy()
    coarse[:, 1:] //= 2
    keys = np.unique(encode_coords(coarse, extent // 2))
    return decode_keys(keys, extent // 2)


def build_kernel_map(
    grid: SparseGrid,
    kernel_size: int = 3,
    stride: int = 1,
    transpose: bool = False,
    out_coords: Optional[IntArray] = None,
) -> tuple[KernelMap, IntArray]:
    """Enumerate the input/output voxel pairs of a sparse convolution.

    Parameters
    ----------
    grid : SparseGrid
        The input grid.
    kernel_size : int
        3, or 2 for strided maps.
    stride : int
        1 (submanifold) or 2 (downsampling, or upsampling when `transpose` is set).
    transpose : bool
        Build an upsampling map onto `out_coords`.
    out_coords : ndarray, optional
        The encoder coordinates at the finer stride; required for transposed maps.

    Returns
    -------
    (KernelMap, ndarray)
        The map and the output coordinates.

    Raises
    ------
    ConfigError
        For unsupported stride/kernel combinations or a grid too coarse to downsample.
    ContractError
        If a transposed map has no target coordinates.
    """

    if stride not in (1, 2):
        raise ConfigError(f"Stride {stride} is not supported.")
    if stride == 1 and (kernel_size != 3 or transpose):
        raise ConfigError("Stride-1 convolutions use a non-transposed kernel of size 3.")
    offsets = kernel_offsets(kernel_size)
    in_rows: list[IntArray] = []
    out_rows: list[IntArray] = []

    if transpose:
        if out_coords is None:
            raise ContractError("A transposed convolution needs the cached encoder coordinates.")
        if grid.stride % stride:
            raise ConfigError(f"Cannot upsample stride {grid.stride} by {stride}.")
        out_stride = grid.stride // stride
        target = coordinate_grid(out_coords, out_stride, grid.resolution, grid.batch_size)
        for delta in offsets:
            query = grid.coords.copy()
            query[:, 1:] = query[:, 1:] * stride + delta
            found = target.lookup(query)
            hit = found >= 0
            in_rows.append(np.flatnonzero(hit))
            out_rows.append(found[hit])
        result_coords = target.coords
    else:
        out_stride = grid.stride * stride
        if stride == 2 and grid.extent < 2:
            raise ConfigError(f"Grid with extent {grid.extent} cannot be downsampled.")
        result_coords = grid.coords if stride == 1 else downsample_coords(grid.coords, grid.extent)
        for delta in offsets:
            query = result_coords.copy()
            query[:, 1:] = query[:, 1:] * stride + delta
            found = grid.lookup(query)
            hit = found >= 0
            in_rows.append(found[hit])
            out_rows.append(np.flatnonzero(hit))

    kmap = KernelMap(
        offsets=offsets,
        in_rows=in_rows,
        out_rows=out_rows,
        out_coords=result_coords,
        in_stride=grid.stride,
        out_stride=out_stride,
        transpose=transpose,
    )
    logging.debug(
        f"kernel map: stride {grid.stride}->{out_stride} transpose={transpose} "
        f"in={grid.num_rows} out={kmap.num_out} pairs={kmap.num_pairs}"
    )
    return kmap, result_coords
