""" The sparse point-voxel U-Net noise predictor.

The network is a chain of point-voxel blocks. Each one voxelizes the current point features at
the level the U-Net is on, runs a consecutive run of voxel blocks (stem, down, mid, up) up to
a block flagged `project_to_points`, interpolates that block's voxel output back to the points
and adds it to a shared MLP of the incoming point features. Skip connections and the voxel
coordinates of every level persist across point-voxel blocks within one forward pass.

Example: predict the noise of a batch

    net = build_network(preset_config("spvd-tiny"), np.random.default_rng(0))
    eps = network_forward(net, x_t, t)   # (B, N, 3) tensor
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.diffusion.embedding import class_embedding, combine_embeddings, time_embedding
from spvd.errors import ContractError
from spvd.network.config import BlockSpec, NetworkConfig
from spvd.network.layers import (
    KERNEL_VOLUME,
    ParamStore,
    concat_skip,
    conv,
    film_scale_shift,
    init_conv,
    init_linear,
    init_res_block,
    linear,
    mlp,
    res_conv_block,
)
from spvd.sparse.grid import SparseGrid, devoxelize_trilinear, point_to_voxel_map, voxelize
from spvd.sparse.kernel_map import KernelMap, build_kernel_map
from spvd.spvd_types import FloatArray, IntArray, Resample

MIN_POINTS = 8


@dataclass
class ForwardState:
    """What one forward pass carries between point-voxel blocks."""

    points: FloatArray
    level: int = 0
    skips: list[SparseGrid] = field(default_factory=list)
    level_coords: dict[int, IntArray] = field(default_factory=dict)
    kernel_maps: dict[tuple[str, int], KernelMap] = field(default_factory=dict)


@dataclass
class Segment:
    """A run of voxel blocks ending at a projection to the points."""

    blocks: list[tuple[str, str, BlockSpec]]
    in_width: int
    out_width: int

    @property
    def name(self) -> str:
        return self.blocks[-1][0]


class Network:
    """An instantiated network: configuration, parameters and the block graph."""

    def __init__(self, config: NetworkConfig, params: ParamStore, segments: list[Segment]):
        self.config = config
        self.params = params
        self.segments = segments
        self.level_coords: dict[int, IntArray] = {}

    def __call__(
        self, x_t: FloatArray, t: IntArray, class_ids: Optional[IntArray] = None
    ) -> Tensor:
        return network_forward(self, x_t, t, class_ids)

    def __repr__(self) -> str:
        return f"Network(preset={self.config.preset}, params={param_count(self)})"


def _segments(config: NetworkConfig) -> list[Segment]:
    segments = []
    current: list[tuple[str, str, BlockSpec]] = []
    in_width = config.in_channels
    for block in config.blocks():
        current.append(block)
        if block[2].project_to_points:
            out_width = block[2].feature_dim
            segments.append(Segment(current, in_width, out_width))
            current, in_width = [], out_width
    return segments


def _res_width(config: NetworkConfig, spec: BlockSpec, width: int) -> int:
    """Output width of a down block's residual part under the widening rule."""

    if config.widen_at == "downsample" and spec.resample == Resample.DOWN:
        return width
    return spec.feature_dim


def build_network(config: NetworkConfig, rng: np.random.Generator) -> Network:
    """Instantiate the parameters of a network.

    Parameters
    ----------
    config : NetworkConfig
        The block table; validated here.
    rng : numpy.random.Generator
        Source of the initial weights.

    Returns
    -------
    Network

    Raises
    ------
    ConfigError
        If the configuration is invalid.
    """

    config.validate()
    params = ParamStore()
    d = config.time_embed_dim
    init_linear(params, "time.l1", d, d, rng)
    init_linear(params, "time.l2", d, d, rng)
    if config.num_classes:
        params.add("class.table", rng.standard_normal((config.num_classes, d)) / np.sqrt(d))

    segments = _segments(config)
    width = config.in_channels
    skip_widths: list[int] = []
    for segment in segments:
        for name, kind, spec in segment.blocks:
            if kind == "stem":
                init_conv(params, f"{name}.conv", KERNEL_VOLUME, width, spec.feature_dim, rng)
                width = spec.feature_dim
            elif kind in ("down", "mid"):
                out = _res_width(config, spec, width) if kind == "down" else spec.feature_dim
                init_res_block(params, f"{name}.res", width, out, d, spec.use_attention, rng)
                width = out
                if kind == "down":
                    skip_widths.append(width)
                if spec.resample == Resample.DOWN:
                    init_conv(params, f"{name}.down", KERNEL_VOLUME, width, spec.feature_dim, rng)
                    width = spec.feature_dim
            else:
                fin = width + skip_widths.pop()
                init_res_block(
                    params, f"{name}.res", fin, spec.feature_dim, d, spec.use_attention, rng
                )
                width = spec.feature_dim
                if spec.resample == Resample.UP:
                    init_conv(params, f"{name}.up", 8, width, width, rng)
        init_linear(params, f"{segment.name}.point.l1", segment.in_width, segment.out_width, rng)
        init_linear(params, f"{segment.name}.point.l2", segment.out_width, segment.out_width, rng)
    init_linear(params, "head", width, 3, rng, zero=True)

    net = Network(config, params, segments)
    logging.info(f"Built network {config.preset}: {params.count()} parameters")
    return net


def param_count(net: Network) -> int:
    """Number of scalar parameters."""

    return net.params.count()


def _kernel_map(state: ForwardState, grid: SparseGrid, kind: str) -> KernelMap:
    key = (kind, state.level)
    if key not in state.kernel_maps:
        if kind == "sub":
            kmap, _ = build_kernel_map(grid, 3, 1)
        elif kind == "down":
            kmap, _ = build_kernel_map(grid, 3, 2)
        else:
            target = state.level_coords[state.level - 1]
            kmap, _ = build_kernel_map(grid, 2, 2, transpose=True, out_coords=target)
        state.kernel_maps[key] = kmap
    return state.kernel_maps[key]


def _record_level(state: ForwardState, coords: IntArray) -> None:
    cached = state.level_coords.get(state.level)
    if cached is None:
        state.level_coords[state.level] = coords
    elif not np.array_equal(cached, coords):
        raise ContractError(f"voxel coordinates at level {state.level} differ from the cache")


def _voxel_block(
    net: Network,
    state: ForwardState,
    grid: SparseGrid,
    name: str,
    kind: str,
    spec: BlockSpec,
    emb: Tensor,
) -> SparseGrid:
    params = net.params
    heads = net.config.attention_heads
    if kind == "stem":
        return conv(grid, params, f"{name}.conv", _kernel_map(state, grid, "sub"))

    if kind == "up":
        grid = concat_skip(grid, state.skips.pop())
    scale, shift = film_scale_shift(emb, params, f"{name}.res.film")
    grid = res_conv_block(
        grid,
        scale,
        shift,
        params,
        f"{name}.res",
        _kernel_map(state, grid, "sub"),
        use_attention=spec.use_attention,
        heads=heads,
    )
    if kind == "down":
        state.skips.append(grid)
    if spec.resample == Resample.DOWN:
        grid = conv(grid, params, f"{name}.down", _kernel_map(state, grid, "down"))
        state.level += 1
        _record_level(state, grid.coords)
    elif spec.resample == Resample.UP:
        grid = conv(grid, params, f"{name}.up", _kernel_map(state, grid, "up"))
        state.level -= 1
    return grid


def spv_block_forward(
    net: Network,
    segment: Segment,
    state: ForwardState,
    point_feats: Tensor,
    emb: Tensor,
) -> Tensor:
    """Run one point-voxel block and return the fused point features.

    The voxel path voxelizes `point_feats` at the current level, runs the segment's voxel
    blocks and interpolates the result back to the points; the point path is a two-layer MLP.
    Their sum is the block output.

    Raises:
        DimensionError: If the point features do not have the segment's entry width.
    """

    resolution = net.config.base_resolution
    grid, _ = voxelize(state.points, point_feats, resolution, stride=2**state.level)
    _record_level(state, grid.coords)
    for name, kind, spec in segment.blocks:
        grid = _voxel_block(net, state, grid, name, kind, spec, emb)

    p2v = point_to_voxel_map(grid, state.points)
    voxel_path = devoxelize_trilinear(grid, p2v)
    point_path = mlp(point_feats, net.params, f"{segment.name}.point")
    return ops.add(voxel_path, point_path)


def embed(net: Network, t: IntArray, class_ids: Optional[IntArray]) -> Tensor:
    """Combined (B, D) embedding: MLP of the sinusoidal time embedding plus the class row."""

    d = net.config.time_embed_dim
    temb = mlp(Tensor(time_embedding(t, d)), net.params, "time")
    label = None
    if class_ids is not None:
        if not net.config.num_classes:
            raise ContractError("An unconditional network takes no class ids.")
        label = class_embedding(class_ids, net.params["class.table"])
    return combine_embeddings(temb, label)


def network_forward(
    net: Network,
    x_t: FloatArray,
    t: IntArray,
    class_ids: Optional[IntArray] = None,
) -> Tensor:
    """Predict the noise of a batch of noisy clouds.

    Parameters
    ----------
    net : Network
    x_t : ndarray
        (B, N, 3) noisy points.
    t : ndarray
        (B,) timesteps.
    class_ids : ndarray, optional
        (B,) class labels of a conditional network.

    Returns
    -------
    Tensor
        (B, N, 3) predicted noise.

    Raises
    ------
    ContractError
        If B is 0, N is below 8, or `t` does not have one entry per sample.
    """

    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 3 or x_t.shape[2] != 3:
        raise ContractError(f"x_t must have shape (B, N, 3), got {x_t.shape}")
    batch, n = x_t.shape[:2]
    if batch == 0 or n < MIN_POINTS:
        raise ContractError(f"need B >= 1 and N >= {MIN_POINTS}, got B={batch} N={n}")
    t = np.asarray(t, dtype=np.int64).reshape(-1)
    if t.shape != (batch,) or (t < 0).any():
        raise ContractError(f"need one non-negative timestep per sample, got {t}")
    if class_ids is not None and np.shape(class_ids) != (batch,):
        raise ContractError(f"need one class id per sample, got shape {np.shape(class_ids)}")

    emb = embed(net, t, class_ids)
    state = ForwardState(points=x_t)
    point_feats = Tensor(x_t.reshape(-1, 3))
    for segment in net.segments:
        point_feats = spv_block_forward(net, segment, state, point_feats, emb)
    net.level_coords = state.level_coords

    out = linear(ops.silu(point_feats), net.params, "head")
    return ops.reshape(out, (batch, n, 3))
