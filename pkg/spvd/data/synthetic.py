""" Synthetic shape datasets built from sampled primitive surfaces.

Kinds:

- sphere: the unit sphere centered at the origin.
- box: the surface of an axis-aligned box with random extents.
- cylinder: the closed surface of a vertical cylinder with random radius and height.
- chairoid: a chair made of labeled boxes (seat, back, leg1 to leg4) with random proportions.
- tableoid: a table made of labeled boxes (top, leg1 to leg4) with random proportions.

Points are drawn uniformly by area on every primitive. Each shape receives the index of its
kind in `KINDS` as class id.
"""

import logging
from typing import Sequence, Union

import numpy as np

from spvd.data.dataset import Dataset
from spvd.data.transforms import NORMALIZATION_MODES, normalize
from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import FloatArray, IntArray, PointCloud

KINDS = ("sphere", "box", "cylinder", "chairoid", "tableoid")
PART_NAMES = {
    "chairoid": ("seat", "back", "leg1", "leg2", "leg3", "leg4"),
    "tableoid": ("top", "leg1", "leg2", "leg3", "leg4"),
}
# Share of the points given to each part; every part keeps at least 5%.
PART_FRACTIONS = {
    "chairoid": (0.3, 0.3, 0.1, 0.1, 0.1, 0.1),
    "tableoid": (0.4, 0.15, 0.15, 0.15, 0.15),
}
MIN_POINTS = 64


def _allocate(n_points: int, fractions: Sequence[float]) -> list[int]:
    counts = [int(np.floor(f * n_points)) for f in fractions]
    counts[0] += n_points - sum(counts)
    return counts


def sphere_surface(n: int, rng: np.random.Generator) -> FloatArray:
    directions = rng.standard_normal((n, 3))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def box_surface(
    center: FloatArray, half: FloatArray, n: int, rng: np.random.Generator
) -> FloatArray:
    """Points uniform by area on the surface of an axis-aligned box."""

    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(half, dtype=np.float64)
    # Faces come in pairs normal to x, y and z.
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    areas = np.repeat(areas, 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    uv[np.arange(n), axis] = sign
    return center + uv * half


def cylinder_surface(
    radius: float, height: float, n: int, rng: np.random.Generator
) -> FloatArray:
    """Points uniform by area on a closed cylinder of axis z centered at the origin."""

    side = 2.0 * np.pi * radius * height
    cap = np.pi * radius**2
    region = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    # Caps: sqrt of a uniform radius gives uniform density over the disc.
    r = np.where(region == 0, radius, radius * np.sqrt(rng.uniform(size=n)))
    z = np.where(
        region == 0,
        rng.uniform(-height / 2, height / 2, size=n),
        np.where(region == 1, -height / 2, height / 2),
    )
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _legs(
    width: float, depth: float, height: float, thickness: float
) -> list[tuple[FloatArray, FloatArray]]:
    half = np.array([thickness / 2, thickness / 2, height / 2])
    corners = []
    for sx, sz in ((-1, -1), (1, -1), (-1, 1), (1, 1)):
        x = sx * (width / 2 - thickness / 2)
        y = sz * (depth / 2 - thickness / 2)
        corners.append((np.array([x, y, height / 2]), half))
    return corners


def _chairoid(n: int, rng: np.random.Generator) -> tuple[FloatArray, IntArray]:
    width = rng.uniform(0.8, 1.2)
    depth = rng.uniform(0.8, 1.2)
    seat_height = rng.uniform(0.8, 1.2)
    back_height = rng.uniform(0.8, 1.4)
    thickness = rng.uniform(0.08, 0.12)
    slab = rng.uniform(0.08, 0.14)

    seat = (np.array([0.0, 0.0, seat_height + slab / 2]), np.array([width, depth, slab]) / 2)
    back = (
        np.array([0.0, depth / 2 - slab / 2, seat_height + slab + back_height / 2]),
        np.array([width, slab, back_height]) / 2,
    )
    boxes = [seat, back] + _legs(width, depth, seat_height, thickness)
    return _assemble(boxes, _allocate(n, PART_FRACTIONS["chairoid"]), rng)


def _tableoid(n: int, rng: np.random.Generator) -> tuple[FloatArray, IntArray]:
    width = rng.uniform(1.2, 2.0)
    depth = rng.uniform(0.8, 1.2)
    height = rng.uniform(0.7, 1.1)
    thickness = rng.uniform(0.08, 0.14)
    slab = rng.uniform(0.06, 0.12)

    top = (np.array([0.0, 0.0, height + slab / 2]), np.array([width, depth, slab]) / 2)
    boxes = [top] + _legs(width, depth, height, thickness)
    return _assemble(boxes, _allocate(n, PART_FRACTIONS["tableoid"]), rng)


def _assemble(
    boxes: list[tuple[FloatArray, FloatArray]], counts: list[int], rng: np.random.Generator
) -> tuple[FloatArray, IntArray]:
    points = [box_surface(c, h, k, rng) for (c, h), k in zip(boxes, counts)]
    part_ids = np.repeat(np.arange(len(boxes)), counts)
    return np.concatenate(points), part_ids


def synth_shape(kind: str, n_points: int, rng: np.random.Generator) -> PointCloud:
    """Sample one unnormalized shape of the given kind.

    Raises:
        ConfigError: For an unknown kind.
        ContractError: If n_points is below 64.
    """

    if kind not in KINDS:
        raise ConfigError(f"Unknown shape kind {kind}; expected one of {', '.join(KINDS)}.")
    if n_points < MIN_POINTS:
        raise ContractError(f"need at least {MIN_POINTS} points per shape, got {n_points}")

    part_ids = None
    if kind == "sphere":
        points = sphere_surface(n_points, rng)
    elif kind == "box":
        points = box_surface(np.zeros(3), rng.uniform(0.25, 0.5, size=3), n_points, rng)
    elif kind == "cylinder":
        points = cylinder_surface(rng.uniform(0.3, 0.6), rng.uniform(0.8, 1.6), n_points, rng)
    elif kind == "chairoid":
        points, part_ids = _chairoid(n_points, rng)
    else:
        points, part_ids = _tableoid(n_points, rng)

    order = rng.permutation(n_points)
    return PointCloud(
        points=points[order],
        part_ids=None if part_ids is None else part_ids[order],
        class_id=KINDS.index(kind),
        name=kind,
    )


def synth_dataset(
    kind: Union[str, Sequence[str]],
    n_shapes: int,
    n_points: int,
    seed: int,
    normalization: str = "per_shape_unit_box",
) -> Dataset:
    """Generate a normalized synthetic dataset.

    Parameters
    ----------
    kind : str or sequence of str
        One kind, or several kinds assigned to the shapes in turn.
    n_shapes : int
        Number of shapes.
    n_points : int
        Points per shape, at least 64.
    seed : int
        Seed; equal arguments give identical datasets.
    normalization : str
        Normalization mode applied to every shape.

    Returns
    -------
    Dataset

    Raises
    ------
    ConfigError
        For an unknown kind or normalization mode.
    ContractError
        If n_points is below 64 or n_shapes is not positive.
    """

    kinds = [kind] if isinstance(kind, str) else list(kind)
    if not kinds:
        raise ConfigError("At least one shape kind is required.")
    for name in kinds:
        if name not in KINDS:
            raise ConfigError(f"Unknown shape kind {name}; expected one of {', '.join(KINDS)}.")
    if normalization not in NORMALIZATION_MODES:
        raise ConfigError(f"Unknown normalization {normalization}.")
    if n_shapes < 1:
        raise ContractError(f"need at least one shape, got {n_shapes}")

    rng = np.random.default_rng(seed)
    shapes, centers, scales = [], [], []
    for i in range(n_shapes):
        raw = synth_shape(kinds[i % len(kinds)], n_points, rng)
        cloud, center, scale = normalize(raw, normalization)
        cloud.name = f"{raw.name}_{i:04d}"
        shapes.append(cloud)
        centers.append(center)
        scales.append(scale)

    logging.debug(f"Generated {n_shapes} synthetic shapes ({', '.join(kinds)}) seed={seed}")
    return Dataset(shapes, np.array(centers), np.array(scales), normalization)
