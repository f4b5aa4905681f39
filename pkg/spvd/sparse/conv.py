""" Sparse convolution driven by a kernel map.

    out[o] = bias + sum over offsets d, pairs (i, o) in kmap[d] of in[i] @ W[d]

Weights have shape (K, F_in, F_out) for a kernel of K offsets. Each offset contributes one
gather-matmul, and all contributions are accumulated into the output rows by a single
scatter-add, so the accumulation order depends only on the map.
"""

from typing import Optional

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.errors import DimensionError
from spvd.sparse.grid import SparseGrid
from spvd.sparse.kernel_map import KernelMap


def sparse_conv(
    grid: SparseGrid,
    weights: Tensor,
    bias: Optional[Tensor],
    kmap: KernelMap,
) -> SparseGrid:
    """Apply a sparse convolution and return the output grid.

    Raises:
        DimensionError: If the weights do not fit the kernel or the input feature width.
    """

    if weights.ndim != 3 or weights.shape[0] != kmap.kernel_volume:
        raise DimensionError(
            f"weights {weights.shape} do not fit a kernel of {kmap.kernel_volume} offsets"
        )
    volume, fin, fout = weights.shape
    if fin != grid.width:
        raise DimensionError(f"weights expect {fin} input features, grid has {grid.width}")
    if bias is not None and bias.shape != (fout,):
        raise DimensionError(f"bias {bias.shape} for {fout} output features")

    flat = ops.reshape(weights, (volume * fin, fout))
    parts: list[Tensor] = []
    targets: list[np.ndarray] = []
    for k in range(volume):
        if not len(kmap.in_rows[k]):
            continue
        x = ops.gather_rows(grid.features, kmap.in_rows[k])
        w = ops.gather_rows(flat, np.arange(k * fin, (k + 1) * fin))
        parts.append(ops.matmul(x, w))
        targets.append(kmap.out_rows[k])

    out = ops.zeros((kmap.num_out, fout), dtype=grid.features.dtype)
    if parts:
        out = ops.scatter_add(out, np.concatenate(targets), ops.concat(parts, axis=0))
    if bias is not None:
        out = ops.add(out, bias)
    return SparseGrid(
        kmap.out_coords, out, kmap.out_stride, grid.resolution, grid.batch_size
    )
