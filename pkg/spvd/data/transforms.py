""" Normalization and the KNOWN/FREE masks of the completion and super-resolution tasks. """

import logging
from typing import Union

import numpy as np

from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import FloatArray, IntArray, PointCloud, SampleMask

NORMALIZATION_MODES = ("per_shape_unit_box", "per_shape_unit_sphere")
MIN_PART_FRACTION = 0.02


def normalize(
    cloud: PointCloud, mode: str = "per_shape_unit_box"
) -> tuple[PointCloud, FloatArray, float]:
    """Center and scale a cloud into [-1, 1]^3.

    per_shape_unit_box moves the bounding box center to the origin and divides by the largest
    half extent. per_shape_unit_sphere moves the centroid to the origin and divides by the
    largest distance from it. Normalized points are p' = (p - center) / scale.

    Parameters
    ----------
    cloud : PointCloud
        Shape to normalize.
    mode : str
        One of NORMALIZATION_MODES.

    Returns
    -------
    tuple
        (normalized cloud, center (3,), scale)

    Raises
    ------
    ConfigError
        For an unknown mode.
    ContractError
        If the cloud has zero extent.
    """

    points = np.asarray(cloud.points, dtype=np.float64)
    if mode == "per_shape_unit_box":
        low, high = points.min(axis=0), points.max(axis=0)
        center = (low + high) / 2.0
        scale = float(((high - low) / 2.0).max())
    elif mode == "per_shape_unit_sphere":
        center = points.mean(axis=0)
        scale = float(np.linalg.norm(points - center, axis=1).max())
    else:
        raise ConfigError(f"Unknown normalization {mode}.")
    if not scale > 0.0:
        name = cloud.name or "unnamed"
        raise ContractError(f"cannot normalize a cloud of zero extent ({name})")

    normalized = np.clip((points - center) / scale, -1.0, 1.0)
    out = PointCloud(
        normalized.astype(cloud.points.dtype),
        part_ids=cloud.part_ids,
        class_id=cloud.class_id,
        name=cloud.name,
    )
    return out, center, scale


def denormalize(cloud: PointCloud, center: FloatArray, scale: float) -> PointCloud:
    """Inverse of `normalize`: p = p' * scale + center."""

    points = np.asarray(cloud.points, dtype=np.float64) * scale + np.asarray(center)
    return PointCloud(
        points.astype(cloud.points.dtype),
        part_ids=cloud.part_ids,
        class_id=cloud.class_id,
        name=cloud.name,
    )


def merge_small_parts(part_ids: IntArray, min_fraction: float = MIN_PART_FRACTION) -> IntArray:
    """Relabel parts holding fewer than `min_fraction` of the points as the largest part."""

    part_ids = np.asarray(part_ids, dtype=np.int64)
    labels, counts = np.unique(part_ids, return_counts=True)
    largest = labels[np.argmax(counts)]
    small = labels[counts < min_fraction * len(part_ids)]
    if not len(small):
        return part_ids
    logging.debug(f"Merging parts {small.tolist()} into part {largest}")
    return np.where(np.isin(part_ids, small), largest, part_ids)


def sample_part_mask(part_ids: IntArray, m: int, rng: np.random.Generator) -> SampleMask:
    """Mark between 1 and m randomly chosen parts FREE, the remaining parts KNOWN.

    Parts below 2% of the points are merged into the largest part first. When the shape has
    no more than m parts, m is lowered to parts - 1 so that one part always stays KNOWN.

    Parameters
    ----------
    part_ids : ndarray
        (N,) part label per point.
    m : int
        Largest number of parts to remove, at least 1.
    rng : numpy.random.Generator
        Draws the number of parts, then the parts.

    Returns
    -------
    SampleMask
        Mask of shape (1, N).

    Raises
    ------
    ContractError
        If the shape has at most one part or m is below 1.
    """

    if m < 1:
        raise ContractError(f"m must be at least 1, got {m}")
    merged = merge_small_parts(part_ids)
    parts = np.unique(merged)
    if len(parts) <= 1:
        raise ContractError("completion needs a shape with at least two parts")
    if m >= len(parts):
        logging.warning(f"Lowering m from {m} to {len(parts) - 1}: {len(parts)} parts")
        m = len(parts) - 1

    k = int(rng.integers(1, m + 1))
    chosen = rng.choice(parts, size=k, replace=False)
    return SampleMask(np.isin(merged, chosen))


def sample_part_masks(part_ids: IntArray, m: int, rng: np.random.Generator) -> SampleMask:
    """One part mask per row of a (B, N) part id array, drawn in row order."""

    part_ids = np.asarray(part_ids)
    if part_ids.ndim != 2:
        raise ContractError(f"part ids must have shape (B, N), got {part_ids.shape}")
    return SampleMask.stack([sample_part_mask(row, m, rng) for row in part_ids])


def random_subset(
    cloud: Union[PointCloud, FloatArray], k: int, n_out: int, rng: np.random.Generator
) -> tuple[FloatArray, SampleMask]:
    """Draw k input points and the mask of an n_out point super-resolution target.

    The KNOWN points occupy the first k slots of the target; the other n_out - k slots are
    FREE.

    Returns:
        (known points (k, 3), mask of shape (1, n_out))

    Raises:
        ContractError: If k >= n_out, k < 1, or the cloud has fewer than k points.
    """

    points = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud)
    if k >= n_out:
        raise ContractError(f"the target must be denser than the input: k={k}, n_out={n_out}")
    if k < 1 or k > len(points):
        raise ContractError(f"cannot draw {k} of {len(points)} points")

    picks = rng.choice(len(points), size=k, replace=False)
    free = np.ones(n_out, dtype=bool)
    free[:k] = False
    return points[picks], SampleMask(free)
