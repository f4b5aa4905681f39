""" Parameter storage and the building blocks of the voxel branch.

Parameters are named with dotted paths ("down1.res.conv1.w") and live in a `ParamStore`.
Weights are drawn from a normal distribution scaled by 1 / sqrt(fan_in); biases and norm
shifts start at zero, norm scales at one. Layers whose output must vanish at initialization
(the FiLM projections and the output head) are zero-initialized.
"""

import logging
from typing import Iterator, Optional

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.errors import ContractError, DimensionError
from spvd.sparse.attention import sparse_attention
from spvd.sparse.conv import sparse_conv
from spvd.sparse.film import film_broadcast
from spvd.sparse.grid import SparseGrid
from spvd.sparse.kernel_map import KernelMap

KERNEL_VOLUME = 27
MAX_GROUPS = 8


class ParamStore:
    """Ordered map from parameter name to leaf tensor."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"Parameter {name} is declared twice.")
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy values into the existing parameters.

        Raises:
            ContractError: If names or shapes differ.
        """

        if set(state) != set(self._params):
            missing = sorted(set(self._params) ^ set(state))
            raise ContractError(f"Parameter names do not match: {missing[:5]}")
        for name, values in state.items():
            tensor = self._params[name]
            if tuple(np.shape(values)) != tensor.shape:
                raise ContractError(
                    f"Parameter {name} has shape {np.shape(values)}, expected {tensor.shape}"
                )
            tensor.data = np.array(values, dtype=tensor.dtype)


def groups_for(width: int) -> int:
    return min(MAX_GROUPS, width)


def init_linear(
    params: ParamStore,
    prefix: str,
    fin: int,
    fout: int,
    rng: np.random.Generator,
    zero: bool = False,
) -> None:
    w = np.zeros((fin, fout)) if zero else rng.standard_normal((fin, fout)) / np.sqrt(fin)
    params.add(f"{prefix}.w", w)
    params.add(f"{prefix}.b", np.zeros(fout))


def init_conv(
    params: ParamStore, prefix: str, volume: int, fin: int, fout: int, rng: np.random.Generator
) -> None:
    params.add(f"{prefix}.w", rng.standard_normal((volume, fin, fout)) / np.sqrt(volume * fin))
    params.add(f"{prefix}.b", np.zeros(fout))


def init_norm(params: ParamStore, prefix: str, width: int) -> None:
    params.add(f"{prefix}.gamma", np.ones(width))
    params.add(f"{prefix}.beta", np.zeros(width))


def init_res_block(
    params: ParamStore,
    prefix: str,
    fin: int,
    fout: int,
    embed_dim: int,
    use_attention: bool,
    rng: np.random.Generator,
) -> None:
    init_conv(params, f"{prefix}.conv1", KERNEL_VOLUME, fin, fout, rng)
    init_norm(params, f"{prefix}.norm1", fout)
    init_linear(params, f"{prefix}.film.l1", embed_dim, embed_dim, rng)
    init_linear(params, f"{prefix}.film.l2", embed_dim, 2 * fout, rng, zero=True)
    init_conv(params, f"{prefix}.conv2", KERNEL_VOLUME, fout, fout, rng)
    init_norm(params, f"{prefix}.norm2", fout)
    if fin != fout:
        init_linear(params, f"{prefix}.skip", fin, fout, rng)
    if use_attention:
        for name in ("wq", "wk", "wv", "wo"):
            params.add(f"{prefix}.attn.{name}", rng.standard_normal((fout, fout)) / np.sqrt(fout))
    logging.debug(f"Declared residual block {prefix}: {fin} -> {fout} attention={use_attention}")


def linear(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    return ops.add(ops.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def mlp(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Two linear layers with a silu in between."""

    return linear(ops.silu(linear(x, params, f"{prefix}.l1")), params, f"{prefix}.l2")


def film_scale_shift(emb: Tensor, params: ParamStore, prefix: str) -> tuple[Tensor, Tensor]:
    """Per-sample (scale, shift) of width F from the combined embedding.

    The projection outputs (s, shift); the scale is 1 + s, so a zero projection is the
    identity modulation.
    """

    out = mlp(ops.silu(emb), params, prefix)
    width = out.shape[1] // 2
    scale = ops.add(ops.slice_cols(out, 0, width), Tensor(np.ones(width)))
    return scale, ops.slice_cols(out, width, 2 * width)


def conv(grid: SparseGrid, params: ParamStore, prefix: str, kmap: KernelMap) -> SparseGrid:
    return sparse_conv(grid, params[f"{prefix}.w"], params[f"{prefix}.b"], kmap)


def norm_act(grid: SparseGrid, params: ParamStore, prefix: str) -> SparseGrid:
    """Group norm with per-sample statistics, then silu."""

    normed = ops.group_norm(
        grid.features,
        groups_for(grid.width),
        grid.batch_ids,
        params[f"{prefix}.gamma"],
        params[f"{prefix}.beta"],
        num_segments=grid.batch_size,
    )
    return grid.with_features(ops.silu(normed))


def res_conv_block(
    grid: SparseGrid,
    scale: Tensor,
    shift: Tensor,
    params: ParamStore,
    prefix: str,
    kmap: KernelMap,
    *,
    use_attention: bool = False,
    heads: int = 4,
) -> SparseGrid:
    """Residual block of two submanifold convolutions with FiLM conditioning in between.

        conv -> norm -> silu -> FiLM -> conv -> norm -> silu -> + shortcut(x) [-> attention]

    The shortcut is the identity when the widths agree and a 1x1 linear map otherwise.

    Args:
        grid: Input voxels.
        scale: (B, F) FiLM scale.
        shift: (B, F) FiLM shift.
        params: Parameter store holding the block's parameters under `prefix`.
        prefix: Parameter name prefix.
        kmap: Submanifold kernel map of the grid's level.
        use_attention: Append per-sample self-attention.
        heads: Attention heads.

    Raises:
        DimensionError: If the widths differ and the block has no shortcut projection.
    """

    h = norm_act(conv(grid, params, f"{prefix}.conv1", kmap), params, f"{prefix}.norm1")
    h = film_broadcast(h, scale, shift)
    h = norm_act(conv(h, params, f"{prefix}.conv2", kmap), params, f"{prefix}.norm2")

    if f"{prefix}.skip.w" in params:
        residual = linear(grid.features, params, f"{prefix}.skip")
    elif grid.width == h.width:
        residual = grid.features
    else:
        raise DimensionError(
            f"{prefix}: {grid.width} -> {h.width} features without a shortcut projection"
        )
    out = h.with_features(ops.add(h.features, residual))
    if use_attention:
        out = sparse_attention(
            out,
            params[f"{prefix}.attn.wq"],
            params[f"{prefix}.attn.wk"],
            params[f"{prefix}.attn.wv"],
            params[f"{prefix}.attn.wo"],
            heads,
        )
    return out


def concat_skip(grid: SparseGrid, skip: Optional[SparseGrid]) -> SparseGrid:
    """Append the skip features of the same level as extra columns.

    Raises:
        ContractError: If the skip grid lies on different coordinates.
    """

    if skip is None:
        return grid
    if skip.stride != grid.stride or not np.array_equal(skip.coords, grid.coords):
        raise ContractError(
            f"skip at stride {skip.stride} does not match the decoder grid at stride {grid.stride}"
        )
    return grid.with_features(ops.concat([grid.features, skip.features], axis=1))
