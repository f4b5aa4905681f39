""" Normalized shape collections and their JSON manifests.

A manifest lists the files of a dataset with their class ids and names the normalization
convention applied when the files are loaded:

    {
        "normalization": "per_shape_unit_box",
        "shapes": [{"path": "chair_0001.ply", "class_id": 3}, ...]
    }

Relative paths resolve against the manifest's directory.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from spvd.data.point_io import load_cloud
from spvd.data.transforms import normalize
from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import JSON, FloatArray, PointCloud, PointCloudBatch

PathLike = Union[str, Path]


@dataclass
class Dataset:
    """Normalized shapes with the per-shape transform that produced them."""

    shapes: list[PointCloud]
    centers: FloatArray
    scales: FloatArray
    normalization: str = "per_shape_unit_box"

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(-1)
        if len(self.centers) != len(self.shapes) or len(self.scales) != len(self.shapes):
            raise ContractError("every shape needs a center and a scale")

    def __len__(self) -> int:
        return len(self.shapes)

    @property
    def num_points(self) -> Optional[int]:
        """Points per shape, or None when the shapes differ in size."""

        sizes = {len(s) for s in self.shapes}
        return sizes.pop() if len(sizes) == 1 else None

    @property
    def has_parts(self) -> bool:
        return bool(self.shapes) and all(s.part_ids is not None for s in self.shapes)

    @property
    def num_classes(self) -> int:
        ids = [s.class_id for s in self.shapes if s.class_id is not None]
        return max(ids) + 1 if ids else 0

    def batch(self, indices: Sequence[int]) -> PointCloudBatch:
        """Stack the selected shapes into a batch.

        Raises:
            ContractError: If the shapes differ in size.
        """

        shapes = [self.shapes[i] for i in indices]
        if len({len(s) for s in shapes}) > 1:
            raise ContractError("shapes of one batch must have the same number of points")
        part_ids = None
        if all(s.part_ids is not None for s in shapes):
            part_ids = np.stack([s.part_ids for s in shapes])  # type: ignore[misc]
        class_ids = None
        if all(s.class_id is not None for s in shapes):
            class_ids = np.array([s.class_id for s in shapes])
        return PointCloudBatch(
            np.stack([s.points for s in shapes]), part_ids=part_ids, class_ids=class_ids
        )


def load_manifest(path: PathLike) -> Dataset:
    """Load and normalize the shapes listed in a manifest.

    Raises:
        ConfigError: If the manifest lacks the `shapes` list or names an unknown normalization.
        ParseError: If a listed file cannot be parsed.
    """

    path = Path(path)
    with open(path, "r") as f:
        document: JSON = json.load(f)
    if not isinstance(document.get("shapes"), list):
        raise ConfigError(f"Manifest {path} has no 'shapes' list.")
    mode = document.get("normalization", "per_shape_unit_box")

    shapes, centers, scales = [], [], []
    for entry in document["shapes"]:
        file = Path(entry["path"])
        if not file.is_absolute():
            file = path.parent / file
        cloud = load_cloud(file)
        cloud.class_id = entry.get("class_id")
        normalized, center, scale = normalize(cloud, mode)
        shapes.append(normalized)
        centers.append(center)
        scales.append(scale)

    logging.info(f"Loaded {len(shapes)} shapes from manifest {path}")
    return Dataset(shapes, np.array(centers), np.array(scales), mode)


def save_manifest(dataset: Dataset, files: Sequence[PathLike], path: PathLike) -> None:
    """Write the manifest of a dataset whose shapes were saved to `files`."""

    if len(files) != len(dataset):
        raise ContractError(f"need one file per shape, got {len(files)} for {len(dataset)}")
    document = {
        "normalization": dataset.normalization,
        "shapes": [
            {"path": str(file), "class_id": shape.class_id}
            for file, shape in zip(files, dataset.shapes)
        ],
    }
    with open(path, "w") as f:
        json.dump(document, f, indent=2)
