from copy import deepcopy
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
from pandas import DataFrame, json_normalize

from spvd.errors import ContractError

# Describes generic JSON serializable data.
JSON = dict[str, Any]

# Real-valued and integer numpy arrays.
FloatArray = npt.NDArray[np.floating[Any]]
IntArray = npt.NDArray[np.integer[Any]]
BoolArray = npt.NDArray[np.bool_]


class SigmaVariant(str, Enum):
    SQRT_BETA = "sqrt_beta"
    POSTERIOR = "posterior"


class SamplingRule(str, Enum):
    DDPM = "ddpm"
    DDIM = "ddim"


class DistanceMetric(str, Enum):
    CD = "CD"
    EMD = "EMD"


class Resample(str, Enum):
    DOWN = "down"
    UP = "up"
    NONE = "none"


@dataclass
class PointCloud:
    """A single shape: N points with optional per-point part ids and a class id."""

    points: FloatArray
    part_ids: Optional[IntArray] = None
    class_id: Optional[int] = None
    name: str = ""

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {self.points.shape}")
        if self.part_ids is not None:
            self.part_ids = np.asarray(self.part_ids, dtype=np.int64)
            if self.part_ids.shape != (self.points.shape[0],):
                raise ValueError("part_ids must cover every point")

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass
class PointCloudBatch:
    """B samples of N points each, stored as a (B, N, 3) array."""

    points: FloatArray
    part_ids: Optional[IntArray] = None
    class_ids: Optional[IntArray] = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError(f"points must have shape (B, N, 3), got {self.points.shape}")
        if self.part_ids is not None:
            self.part_ids = np.asarray(self.part_ids, dtype=np.int64)
            if self.part_ids.shape != self.points.shape[:2]:
                raise ValueError("part_ids must have shape (B, N)")
        if self.class_ids is not None:
            self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
            if self.class_ids.shape != (self.points.shape[0],):
                raise ValueError("class_ids must have shape (B,)")

    @property
    def batch_size(self) -> int:
        return int(self.points.shape[0])

    @property
    def num_points(self) -> int:
        return int(self.points.shape[1])

    def clouds(self) -> list[PointCloud]:
        """Split the batch into individual clouds."""

        clouds = []
        for b in range(self.batch_size):
            clouds.append(
                PointCloud(
                    points=self.points[b],
                    part_ids=None if self.part_ids is None else self.part_ids[b],
                    class_id=None if self.class_ids is None else int(self.class_ids[b]),
                )
            )
        return clouds


@dataclass
class SampleMask:
    """Per-point KNOWN/FREE flags for masked diffusion.

    FREE points are noised during training and generated during sampling. KNOWN points are
    clamped to their input values.
    """

    free: BoolArray
    known_counts: IntArray = field(init=False)
    free_counts: IntArray = field(init=False)

    def __post_init__(self) -> None:
        free = np.asarray(self.free, dtype=bool)
        if free.ndim == 1:
            free = free[None, :]
        if free.ndim != 2:
            raise ContractError(f"mask must have shape (B, N), got {free.shape}")
        self.free = free
        self.free_counts = free.sum(axis=1)
        self.known_counts = free.shape[1] - self.free_counts
        if (self.free_counts == 0).any():
            empty = np.flatnonzero(self.free_counts == 0).tolist()
            raise ContractError(f"every sample needs at least one FREE point (samples {empty})")

    @property
    def known(self) -> BoolArray:
        return ~self.free

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.free.shape[0]), int(self.free.shape[1]))

    @staticmethod
    def all_free(batch_size: int, num_points: int) -> "SampleMask":
        return SampleMask(np.ones((batch_size, num_points), dtype=bool))

    @staticmethod
    def stack(masks: list["SampleMask"]) -> "SampleMask":
        return SampleMask(np.concatenate([m.free for m in masks], axis=0))


class Data:
    """Wrapper for JSON documents produced by the package (reports, manifests, logs)."""

    def __init__(self, json: Any, *, selector: Optional[str] = None):
        """Wrap a JSON document.

        Args:
            json: The JSON serializable document.
            selector: Dot separated string of keys used to extract the rows of the data frame.
        """

        self.json = json
        self.selector = selector

        self._df: Optional[DataFrame] = None

    @staticmethod
    def to_df(json: Any, selector: Optional[str]) -> DataFrame:
        """Create a data frame from JSON data.

        Args:
            json: JSON document.
            selector: Dot separated string of keys used to extract data for data frame.

        Returns:
            A data frame containing the data located by the selector.
        """

        def get_df_data(data: JSON, selector: str) -> Any:
            df_data: Any = data
            for key in selector.split("."):
                if isinstance(df_data, dict) and key in df_data.keys():
                    df_data = df_data[key]
            return df_data

        data = deepcopy(json)

        if selector:
            df_data = get_df_data(data, selector)
            if isinstance(df_data, list) and df_data and not isinstance(df_data[0], dict):
                df = DataFrame(df_data)
            else:
                df = json_normalize(df_data) if df_data else DataFrame()
        else:
            df = json_normalize(data)

        return df

    @property
    def df(self) -> DataFrame:
        """Return the data frame."""

        if not isinstance(self._df, DataFrame):
            self._df = Data.to_df(self.json, self.selector)

        return self._df
