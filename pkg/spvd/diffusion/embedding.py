from typing import Optional

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import FloatArray, IntArray


def time_embedding(t: IntArray, dim: int) -> FloatArray:
    """Sinusoidal embedding of timesteps, sine and cosine interleaved.

    Column 2i holds sin(t * w_i) and column 2i + 1 holds cos(t * w_i), with
    w_i = 10000^(-2i / dim). The embedding of t = 0 is [0, 1, 0, 1, ...].

    Args:
        t: Integer timesteps of shape (B,).
        dim: Even embedding width.

    Returns:
        A (B, dim) float64 array.
    """

    if dim < 2 or dim % 2:
        raise ConfigError(f"Time embedding width must be even, got {dim}.")
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    freqs = np.power(10000.0, -np.arange(dim // 2, dtype=np.float64) * 2.0 / dim)
    angles = t[:, None] * freqs[None, :]
    out = np.empty((len(t), dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def class_embedding(class_ids: IntArray, table: Tensor) -> Tensor:
    """Rows of the learned class table, one per sample."""

    class_ids = np.asarray(class_ids, dtype=np.int64).reshape(-1)
    num_classes = table.shape[0]
    if class_ids.size and (class_ids.min() < 0 or class_ids.max() >= num_classes):
        raise ContractError(f"class ids must lie in [0, {num_classes}), got {class_ids}")
    return ops.gather_rows(table, class_ids)


def combine_embeddings(time: Tensor, label: Optional[Tensor]) -> Tensor:
    """Time embedding plus class embedding; the time embedding alone when unconditional."""

    if label is None:
        return time
    return ops.add(time, label)
