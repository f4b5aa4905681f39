from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.errors import DimensionError
from spvd.sparse.grid import SparseGrid


def film_broadcast(grid: SparseGrid, scale: Tensor, shift: Tensor) -> SparseGrid:
    """Modulate every voxel with the scale and shift of its own sample.

    Row r of sample b becomes scale[b] * F[r] + shift[b]. The per-sample rows are expanded by
    gathering on the grid's batch indices.

    Args:
        grid: The voxel features to modulate.
        scale: A (B, F) tensor.
        shift: A (B, F) tensor.

    Returns:
        A grid on the same coordinates.

    Raises:
        DimensionError: If scale or shift do not have one row per sample of the grid.
    """

    expected = (grid.batch_size, grid.width)
    if scale.shape != expected or shift.shape != expected:
        raise DimensionError(
            f"FiLM scale {scale.shape} and shift {shift.shape}, grid expects {expected}"
        )
    ids = grid.batch_ids
    return grid.with_features(
        ops.scale_shift(grid.features, ops.gather_rows(scale, ids), ops.gather_rows(shift, ids))
    )
