""" Differentiable operations on `Tensor`.

Every function computes its output with numpy and registers a backward rule through
`make_node`. Broadcasting is limited to per-row vectors: an operand of shape (F,) or (1, F)
applied to every row of an (R, F) operand, or an (R, 1) column applied to every column. Any
other shape mismatch raises `DimensionError`.

Row-indexed operations (`gather_rows`, `scatter_add`, `segment_reduce`, `group_norm`)
accumulate with `np.add.at`, which visits indices in order, so results are deterministic.
"""

from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from spvd.autodiff.tensor import Array, Tensor, default_dtype, make_node
from spvd.errors import ConfigError, DimensionError, IndexRangeError

# Normalization epsilon used by group_norm.
EPS_NORM = 1e-5

TensorLike = Union[Tensor, Array, float]


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap a constant as a tensor that does not require gradients."""

    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_indices(idx: Any, n: int, what: str = "index") -> Array:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise IndexRangeError(f"{what} must be one dimensional, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexRangeError(
            f"{what} out of range: values span [{idx.min()}, {idx.max()}], rows {n}"
        )
    return idx


def _broadcast(
    a: Tensor, b: Tensor, op: str
) -> tuple[Callable[[Array], Array], Callable[[Array], Array]]:
    """Return gradient reducers for `a` and `b` under per-row broadcasting."""

    def identity(g: Array) -> Array:
        return g

    def reducer(small: Tensor, big: Tensor) -> Optional[Callable[[Array], Array]]:
        if big.ndim != 2:
            return None
        rows, cols = big.shape
        if small.shape in ((cols,), (1, cols)):
            shape = small.shape
            return lambda g: g.sum(axis=0).reshape(shape)
        if small.shape == (rows, 1):
            return lambda g: g.sum(axis=1, keepdims=True)
        return None

    if a.shape == b.shape:
        return identity, identity
    if (reduce_b := reducer(b, a)) is not None:
        return identity, reduce_b
    if (reduce_a := reducer(a, b)) is not None:
        return reduce_a, identity
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    reduce_a, reduce_b = _broadcast(a, b, "add")

    def backward(g: Array) -> tuple[Array, Array]:
        return reduce_a(g), reduce_b(g)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    reduce_a, reduce_b = _broadcast(a, b, "sub")

    def backward(g: Array) -> tuple[Array, Array]:
        return reduce_a(g), reduce_b(-g)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    reduce_a, reduce_b = _broadcast(a, b, "mul")

    def backward(g: Array) -> tuple[Array, Array]:
        return reduce_a(g * b.data), reduce_b(g * a.data)

    return make_node(a.data * b.data, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""

    def backward(g: Array) -> tuple[Array]:
        return (g * factor,)

    return make_node(x.data * factor, (x,), backward, "scale")


def _sigmoid(x: Array) -> Array:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""

    s = _sigmoid(x.data)

    def backward(g: Array) -> tuple[Array]:
        return (g * (s + x.data * s * (1.0 - s)),)

    return make_node(x.data * s, (x,), backward, "silu")


def scale_shift(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Feature-wise affine modulation: scale * x + shift."""

    reduce_scale = _broadcast(x, scale, "scale_shift")[1]
    reduce_shift = _broadcast(x, shift, "scale_shift")[1]
    if scale.size > x.size or shift.size > x.size:
        raise DimensionError(f"scale_shift: modulation larger than features {x.shape}")

    def backward(g: Array) -> tuple[Array, Array, Array]:
        return g * scale.data, reduce_scale(g * x.data), reduce_shift(g)

    return make_node(x.data * scale.data + shift.data, (x, scale, shift), backward, "scale_shift")


_ELEMENTWISE: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "silu": silu,
    "scale_shift": scale_shift,
}


def elementwise(kind: str, *args: Any) -> Tensor:
    """Dispatch one of the elementwise operations by name."""

    if kind not in _ELEMENTWISE:
        raise ConfigError(f"Unknown elementwise operation {kind}.")
    return _ELEMENTWISE[kind](*args)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""

    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g: Array) -> tuple[Array, Array]:
        return g @ b.data.T, a.data.T @ g

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def sum(x: Tensor) -> Tensor:  # noqa: A001
    def backward(g: Array) -> tuple[Array]:
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(x.data.sum()), (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backward(g: Array) -> tuple[Array]:
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return make_node(np.asarray(x.data.sum() / n), (x,), backward, "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def backward(g: Array) -> tuple[Array]:
        return (g.reshape(original),)

    return make_node(x.data.reshape(tuple(shape)), (x,), backward, "reshape")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {x.shape}")

    def backward(g: Array) -> tuple[Array]:
        return (g.T,)

    return make_node(x.data.T.copy(), (x,), backward, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate 2-D tensors along rows (axis 0) or columns (axis 1)."""

    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    other = 1 - axis
    if any(t.ndim != 2 or t.shape[other] != tensors[0].shape[other] for t in tensors):
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g: Array) -> list[Array]:
        if axis == 0:
            return [g[bounds[i] : bounds[i + 1]] for i in range(len(tensors))]
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors))]

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(data, tuple(tensors), backward, "concat")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    cols = x.shape[1]

    def backward(g: Array) -> tuple[Array]:
        out = np.zeros((x.shape[0], cols), dtype=g.dtype)
        out[:, start:stop] = g
        return (out,)

    return make_node(x.data[:, start:stop].copy(), (x,), backward, "slice_cols")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the columns of each row."""

    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g: Array) -> tuple[Array]:
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_node(y, (x,), backward, "softmax")


def gather_rows(t: Tensor, idx: Any) -> Tensor:
    """Copy rows `idx` of a 2-D tensor."""

    rows = t.shape[0]
    idx = _check_indices(idx, rows)

    def backward(g: Array) -> tuple[Array]:
        out = np.zeros((rows,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return make_node(t.data[idx], (t,), backward, "gather_rows")


def scatter_add(t: Tensor, idx: Any, src: Tensor) -> Tensor:
    """Return a copy of `t` with rows of `src` accumulated into rows `idx`."""

    idx = _check_indices(idx, t.shape[0])
    if src.shape[0] != idx.size or src.shape[1:] != t.shape[1:]:
        raise DimensionError(f"scatter_add: src {src.shape} for {idx.size} rows of {t.shape}")

    def backward(g: Array) -> tuple[Array, Array]:
        return g, g[idx]

    out = t.data.copy()
    np.add.at(out, idx, src.data)
    return make_node(out, (t, src), backward, "scatter_add")


def _check_segments(ids: Any, rows: int, num_segments: Optional[int]) -> tuple[Array, int]:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (rows,):
        raise IndexRangeError(f"segment ids must have shape ({rows},), got {ids.shape}")
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if rows else 0
    if rows:
        if ids.min() < 0 or ids.max() >= num_segments:
            raise IndexRangeError(f"segment ids out of range [0, {num_segments})")
        if (np.diff(ids) < 0).any():
            raise IndexRangeError("segment ids must be sorted non-decreasing")
    return ids, num_segments


def segment_counts(ids: Any, num_segments: int) -> Array:
    return np.bincount(np.asarray(ids, dtype=np.int64), minlength=num_segments)


def _segment_sum(values: Array, ids: Array, num_segments: int) -> Array:
    out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, ids, values)
    return out


def segment_reduce(
    values: Tensor,
    segment_ids: Any,
    mode: str = "sum",
    num_segments: Optional[int] = None,
) -> Tensor:
    """Aggregate the rows of `values` that share a segment id.

    Args:
        values: An (R, F) tensor.
        segment_ids: R sorted integers in [0, S).
        mode: "sum", "mean" or "max".
        num_segments: S; defaults to the largest id plus one.

    Returns:
        An (S, F) tensor; empty segments are zero rows. The max mode routes the gradient to
        the first maximal row of each segment.

    Raises:
        IndexRangeError: If the ids are unsorted or out of range.
        ConfigError: If the mode is unknown.
    """

    ids, segments = _check_segments(segment_ids, values.shape[0], num_segments)
    counts = segment_counts(ids, segments)

    if mode == "sum":
        out = _segment_sum(values.data, ids, segments)

        def backward(g: Array) -> tuple[Array]:
            return (g[ids],)

    elif mode == "mean":
        out = _segment_sum(values.data, ids, segments)
        divisor = np.maximum(counts, 1).astype(values.dtype)[:, None]
        out = out / divisor

        def backward(g: Array) -> tuple[Array]:
            return ((g / divisor)[ids],)

    elif mode == "max":
        out = np.full((segments,) + values.shape[1:], -np.inf, dtype=values.dtype)
        np.maximum.at(out, ids, values.data)
        out[counts == 0] = 0.0
        hits = values.data == out[ids]
        running = np.cumsum(hits, axis=0)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        before = np.zeros_like(running)
        before[1:] = running[:-1]
        first = hits & ((running - before[starts[ids]]) == 1)

        def backward(g: Array) -> tuple[Array]:
            return (np.where(first, g[ids], 0.0),)

    else:
        raise ConfigError(f"Unknown segment reduction {mode}.")

    return make_node(out, (values,), backward, f"segment_{mode}")


def group_norm(
    x: Tensor,
    groups: int,
    segment_ids: Any,
    gamma: Tensor,
    beta: Tensor,
    num_segments: Optional[int] = None,
    eps: float = EPS_NORM,
) -> Tensor:
    """Group normalization with statistics per (segment, channel group).

    Each segment is one sample of a batch, so samples never share statistics.

    Raises:
        ConfigError: If the feature width is not divisible by `groups`.
    """

    rows, features = x.shape
    if groups < 1 or features % groups:
        raise ConfigError(f"group_norm: {features} features do not split into {groups} groups")
    ids, segments = _check_segments(segment_ids, rows, num_segments)
    width = features // groups
    n = (segment_counts(ids, segments) * width).astype(x.dtype)
    n = np.maximum(n, 1)[:, None]

    xs = x.data.reshape(rows, groups, width)
    mu = _segment_sum(xs.sum(axis=2), ids, segments) / n
    diff = xs - mu[ids][:, :, None]
    var = _segment_sum((diff * diff).sum(axis=2), ids, segments) / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = diff * inv[ids][:, :, None]
    flat = xhat.reshape(rows, features)

    def backward(g: Array) -> tuple[Array, Array, Array]:
        dxhat = (g * gamma.data).reshape(rows, groups, width)
        m1 = _segment_sum(dxhat.sum(axis=2), ids, segments) / n
        m2 = _segment_sum((dxhat * xhat).sum(axis=2), ids, segments) / n
        dx = inv[ids][:, :, None] * (dxhat - m1[ids][:, :, None] - xhat * m2[ids][:, :, None])
        return dx.reshape(rows, features), (g * flat).sum(axis=0), g.sum(axis=0)

    out = flat * gamma.data + beta.data
    return make_node(out, (x, gamma, beta), backward, "group_norm")


def zeros(shape: Sequence[int], dtype: Any = None) -> Tensor:
    """A constant zero tensor, in the default precision unless `dtype` is given."""

    dtype = dtype or default_dtype()
    return Tensor(np.zeros(tuple(shape), dtype=dtype), dtype=dtype)
