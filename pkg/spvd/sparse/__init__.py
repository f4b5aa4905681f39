from spvd.sparse.attention import attention_weights, sparse_attention
from spvd.sparse.conv import sparse_conv
from spvd.sparse.film import film_broadcast
from spvd.sparse.grid import (
    Point2VoxelMap,
    SparseGrid,
    decode_keys,
    devoxelize_trilinear,
    encode_coords,
    point_to_voxel_map,
    quantize,
    voxelize,
)
from spvd.sparse.kernel_map import (
    KernelMap,
    build_kernel_map,
    coordinate_grid,
    downsample_coords,
    kernel_offsets,
)
