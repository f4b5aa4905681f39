""" Multi-head self-attention over the voxels of each sample.

Samples never attend to each other. Queries, keys and values are linear projections of the
voxel features; the head outputs are concatenated, projected by `wo` and added to the input.
"""

import math

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor, no_grad
from spvd.errors import ConfigError, DimensionError
from spvd.sparse.grid import SparseGrid


def _check_heads(grid: SparseGrid, heads: int, *weights: Tensor) -> int:
    width = grid.width
    if heads < 1 or width % heads:
        raise ConfigError(f"{width} features do not split into {heads} attention heads")
    for w in weights:
        if w.shape != (width, width):
            raise DimensionError(f"attention weight {w.shape} for width {width}")
    return width // heads


def sparse_attention(
    grid: SparseGrid,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
) -> SparseGrid:
    """Residual scaled dot-product self-attention, computed independently per sample.

    Row order is preserved.

    Raises:
        ConfigError: If the feature width is not divisible by `heads`.
    """

    d = _check_heads(grid, heads, wq, wk, wv, wo)
    outputs = []
    for b in range(grid.batch_size):
        rows = grid.sample_rows(b)
        if not len(rows):
            continue
        x = ops.gather_rows(grid.features, rows)
        q, k, v = ops.matmul(x, wq), ops.matmul(x, wk), ops.matmul(x, wv)
        head_outputs = []
        for h in range(heads):
            qh = ops.slice_cols(q, h * d, (h + 1) * d)
            kh = ops.slice_cols(k, h * d, (h + 1) * d)
            vh = ops.slice_cols(v, h * d, (h + 1) * d)
            scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), 1.0 / math.sqrt(d))
            head_outputs.append(ops.matmul(ops.softmax(scores), vh))
        outputs.append(ops.matmul(ops.concat(head_outputs, axis=1), wo))

    if not outputs:
        return grid
    return grid.with_features(ops.add(grid.features, ops.concat(outputs, axis=0)))


def attention_weights(grid: SparseGrid, wq: Tensor, wk: Tensor, heads: int) -> list[np.ndarray]:
    """Per-sample attention matrices of shape (heads, R_b, R_b), for inspection."""

    d = _check_heads(grid, heads, wq, wk)
    result = []
    with no_grad():
        for b in range(grid.batch_size):
            x = ops.gather_rows(grid.features, grid.sample_rows(b))
            q, k = ops.matmul(x, wq), ops.matmul(x, wk)
            per_head = []
            for h in range(heads):
                qh = ops.slice_cols(q, h * d, (h + 1) * d)
                kh = ops.slice_cols(k, h * d, (h + 1) * d)
                scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), 1.0 / math.sqrt(d))
                per_head.append(ops.softmax(scores).data)
            result.append(np.stack(per_head) if per_head else np.zeros((heads, 0, 0)))
    return result
