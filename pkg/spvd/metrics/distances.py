""" Shape distances and pairwise distance matrices.

Conventions:

- Chamfer distance uses squared Euclidean distances, each direction averaged over its set:
  CD(A, B) = mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2
- Earth mover distance is the mean unsquared Euclidean cost of the optimal bijection between
  two sets of equal size.

Distance matrices between shape sets are filled by worker threads that each own a block of
rows; every entry is computed independently, so the result does not depend on the number of
workers.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from spvd.errors import ConfigError, ContractError
from spvd.metrics.assignment import auction_assignment, solve_assignment
from spvd.spvd_types import DistanceMetric, FloatArray

CHUNK_ROWS = 1024
EMD_EXACT_LIMIT = 512
EPS_EMD = 0.005


def _check_cloud(points: FloatArray, name: str) -> FloatArray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ContractError(f"{name} must have shape (N, 3), got {points.shape}")
    if not len(points):
        raise ContractError(f"{name} is empty")
    return points


def squared_distances(a: FloatArray, b: FloatArray) -> FloatArray:
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=2)


def chamfer(a: FloatArray, b: FloatArray) -> float:
    """Chamfer distance between two point sets.

    Raises:
        ContractError: If either set is empty.
    """

    a = _check_cloud(a, "A")
    b = _check_cloud(b, "B")
    a_to_b = np.empty(len(a))
    b_to_a = np.full(len(b), np.inf)
    for start in range(0, len(a), CHUNK_ROWS):
        d2 = squared_distances(a[start : start + CHUNK_ROWS], b)
        a_to_b[start : start + CHUNK_ROWS] = d2.min(axis=1)
        b_to_a = np.minimum(b_to_a, d2.min(axis=0))
    return float(np.mean(a_to_b) + np.mean(b_to_a))


def emd(a: FloatArray, b: FloatArray, mode: str = "exact", eps_emd: float = EPS_EMD) -> float:
    """Earth mover distance between two point sets of equal size.

    Parameters
    ----------
    a, b : ndarray
        (N, 3) point sets.
    mode : str
        "exact" solves the assignment problem and supports N up to 512; "approx" runs an
        auction whose cost is at most (1 + eps_emd) times the exact cost.
    eps_emd : float
        Relative tolerance of the approximate mode.

    Returns
    -------
    float
        Mean Euclidean cost of the optimal (or near optimal) bijection.

    Raises
    ------
    ContractError
        If the sets differ in size or are empty.
    ConfigError
        For an unknown mode, or exact mode above the supported size.
    """

    a = _check_cloud(a, "A")
    b = _check_cloud(b, "B")
    if len(a) != len(b):
        raise ContractError(f"EMD needs sets of equal size, got {len(a)} and {len(b)}")
    cost = np.sqrt(squared_distances(a, b))
    if mode == "exact":
        if len(a) > EMD_EXACT_LIMIT:
            raise ConfigError(
                f"Exact EMD supports up to {EMD_EXACT_LIMIT} points, got {len(a)}; use approx."
            )
        _, total = solve_assignment(cost)
    elif mode == "approx":
        _, total = auction_assignment(cost, eps_emd)
    else:
        raise ConfigError(f"Unknown EMD mode {mode}.")
    return total / len(a)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Pairwise distances between the shapes of two sets (rows: first set)."""

    values: FloatArray
    metric: DistanceMetric

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))


def shape_distance(
    a: FloatArray, b: FloatArray, metric: Union[DistanceMetric, str], emd_mode: str = "exact"
) -> float:
    if DistanceMetric(metric) == DistanceMetric.CD:
        return chamfer(a, b)
    return emd(a, b, emd_mode)


def distance_matrix(
    set_a: Sequence[FloatArray],
    set_b: Sequence[FloatArray],
    metric: Union[DistanceMetric, str],
    *,
    emd_mode: str = "exact",
    workers: int = 4,
) -> DistanceMatrix:
    """Fill the |A| x |B| matrix of shape distances with `workers` threads.

    Raises:
        ContractError: If a pair cannot be compared under the metric; the first such error
            of any worker is re-raised.
    """

    metric = DistanceMetric(metric)
    values = np.zeros((len(set_a), len(set_b)))
    errors: list[Exception] = []

    def fill(rows: range) -> None:
        try:
            for i in rows:
                for j in range(len(set_b)):
                    values[i, j] = shape_distance(set_a[i], set_b[j], metric, emd_mode)
        except (ContractError, ConfigError) as error:
            errors.append(error)

    workers = max(1, min(workers, len(set_a)))
    bounds = np.linspace(0, len(set_a), workers + 1).astype(int)
    threads = []
    for k in range(workers):
        t = threading.Thread(target=fill, args=(range(bounds[k], bounds[k + 1]),))
        threads.append(t)
        t.start()

    for t in threads:
        t.join()

    if errors:
        raise errors[0]
    logging.debug(f"distance matrix {metric.value}: {values.shape} with {workers} threads")
    return DistanceMatrix(values, metric)
