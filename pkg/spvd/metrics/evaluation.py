""" Generative evaluation: 1-NN accuracy, minimum matching distance and coverage.

All three statistics are computed from distance matrices between a generated set G and a
reference set R:

- 1-NNA classifies every shape of G and R by the set of its nearest neighbor in G + R,
  itself excluded, and reports the percentage classified correctly. 50% means the sets are
  indistinguishable. Ties go to the lower index in the merged order G + R, so on exactly
  equal distances a neighbor from G wins; swapping G and R can then change the score.
- MMD is the mean over reference shapes of the distance to the closest generated shape.
- COV is the percentage of reference shapes that are the nearest reference shape of at least
  one generated shape.
"""

import logging
from typing import Any, Optional, Sequence, Union

import numpy as np
from pandas import DataFrame

from spvd.errors import ConfigError, ContractError
from spvd.metrics.distances import distance_matrix
from spvd.spvd_types import JSON, Data, DistanceMetric, FloatArray

METRIC_KEYS = ("one_nna_cd", "one_nna_emd", "mmd_cd", "mmd_emd", "cov_cd", "cov_emd")


def one_nna_from_matrices(gg: FloatArray, gr: FloatArray, rr: FloatArray) -> float:
    """1-NN accuracy in percent from the G-G, G-R and R-R distance matrices.

    Shapes are indexed G first, then R; a tie between neighbors goes to the lower index.
    """

    n_gen, n_ref = gr.shape
    merged = np.block([[gg, gr], [gr.T, rr]]).astype(np.float64)
    np.fill_diagonal(merged, np.inf)
    labels = np.concatenate([np.ones(n_gen, dtype=bool), np.zeros(n_ref, dtype=bool)])
    # argmin returns the first minimum
    nearest = np.argmin(merged, axis=1)
    return float(np.mean(labels[nearest] == labels) * 100.0)


def mmd_from_matrix(rg: FloatArray) -> float:
    """Minimum matching distance from the R x G distance matrix."""

    return float(rg.min(axis=1).mean())


def coverage_from_matrix(rg: FloatArray) -> float:
    """Coverage in percent from the R x G distance matrix."""

    matched = np.unique(np.argmin(rg, axis=0))
    return float(len(matched) / rg.shape[0] * 100.0)


def _check_sets(gen: Sequence[FloatArray], ref: Sequence[FloatArray], minimum: int) -> None:
    if len(gen) < minimum or len(ref) < minimum:
        raise ContractError(
            f"need at least {minimum} shapes per set, "
            f"got {len(gen)} generated and {len(ref)} reference"
        )


def one_nn_accuracy(
    gen: Sequence[FloatArray],
    ref: Sequence[FloatArray],
    metric: Union[DistanceMetric, str],
    *,
    emd_mode: str = "exact",
    workers: int = 4,
) -> float:
    """1-NN two-sample accuracy in percent.

    Raises:
        ContractError: If either set has fewer than 2 shapes.
    """

    _check_sets(gen, ref, 2)
    if len(gen) != len(ref):
        logging.warning(f"1-NNA on sets of unequal size: {len(gen)} vs {len(ref)}")
    kwargs: Any = {"emd_mode": emd_mode, "workers": workers}
    gg = distance_matrix(gen, gen, metric, **kwargs).values
    gr = distance_matrix(gen, ref, metric, **kwargs).values
    rr = distance_matrix(ref, ref, metric, **kwargs).values
    return one_nna_from_matrices(gg, gr, rr)


def mmd(
    gen: Sequence[FloatArray],
    ref: Sequence[FloatArray],
    metric: Union[DistanceMetric, str],
    *,
    emd_mode: str = "exact",
    workers: int = 4,
) -> float:
    """Minimum matching distance.

    Raises:
        ContractError: If either set is empty.
    """

    _check_sets(gen, ref, 1)
    matrix = distance_matrix(ref, gen, metric, emd_mode=emd_mode, workers=workers)
    return mmd_from_matrix(matrix.values)


def coverage(
    gen: Sequence[FloatArray],
    ref: Sequence[FloatArray],
    metric: Union[DistanceMetric, str],
    *,
    emd_mode: str = "exact",
    workers: int = 4,
) -> float:
    """Coverage in percent.

    Raises:
        ContractError: If either set is empty.
    """

    _check_sets(gen, ref, 1)
    matrix = distance_matrix(ref, gen, metric, emd_mode=emd_mode, workers=workers)
    return coverage_from_matrix(matrix.values)


class MetricReport(Data):
    """Evaluation results: the selected run's six statistics plus every run.

    `json` holds the full document and `df` one row per run. Metrics that could not be
    computed are None and named in `flags`.
    """

    def __init__(self, json: JSON):
        super().__init__(json, selector="runs")

    def __getitem__(self, key: str) -> Optional[float]:
        value = self.json[key]
        return None if value is None else float(value)

    @property
    def flags(self) -> list[str]:
        return list(self.json.get("flags", []))

    def table(self) -> str:
        """Aligned plain text: one row per statistic, CD and EMD columns."""

        def fmt(value: Optional[float]) -> str:
            return "n/a" if value is None else f"{value:.4f}"

        rows = [
            ("1-NNA (%)", self["one_nna_cd"], self["one_nna_emd"]),
            ("MMD", self["mmd_cd"], self["mmd_emd"]),
            ("COV (%)", self["cov_cd"], self["cov_emd"]),
        ]
        frame = DataFrame(
            [(name, fmt(cd), fmt(em)) for name, cd, em in rows], columns=["metric", "CD", "EMD"]
        )
        return frame.to_string(index=False)


def _run_metrics(
    gen: Sequence[FloatArray],
    ref: Sequence[FloatArray],
    emd_mode: str,
    workers: int,
    flags: list[str],
) -> dict[str, Optional[float]]:
    values: dict[str, Optional[float]] = {}
    for metric in DistanceMetric:
        suffix = metric.value.lower()
        try:
            kwargs: Any = {"emd_mode": emd_mode, "workers": workers}
            gg = distance_matrix(gen, gen, metric, **kwargs)
            gr = distance_matrix(gen, ref, metric, **kwargs)
            rr = distance_matrix(ref, ref, metric, **kwargs)
        except (ContractError, ConfigError) as error:
            logging.warning(f"{metric.value} metrics omitted: {error}")
            for name in ("one_nna", "mmd", "cov"):
                values[f"{name}_{suffix}"] = None
                if f"{name}_{suffix}" not in flags:
                    flags.append(f"{name}_{suffix}")
            continue
        rg = gr.values.T
        values[f"one_nna_{suffix}"] = one_nna_from_matrices(gg.values, gr.values, rr.values)
        values[f"mmd_{suffix}"] = mmd_from_matrix(rg)
        values[f"cov_{suffix}"] = coverage_from_matrix(rg)
    return values


def _distance_to_fair(run: dict[str, Any]) -> float:
    for key in ("one_nna_cd", "one_nna_emd"):
        if run.get(key) is not None:
            return abs(float(run[key]) - 50.0)
    return np.inf


def eval_report(
    gen: Sequence[FloatArray],
    ref: Sequence[FloatArray],
    runs: int = 3,
    seed: int = 0,
    *,
    emd_mode: str = "exact",
    workers: int = 4,
) -> MetricReport:
    """Evaluate a generated set against a reference set over several runs.

    Each run compares the reference set with a subset of the generated set of the same size,
    drawn without replacement from the run's own random stream; when the generated set is not
    larger than the reference set every run uses it whole. The reported statistics are those
    of the run whose 1-NNA (CD, else EMD) is closest to 50%.

    Parameters
    ----------
    gen, ref : sequence of ndarray
        Generated and reference clouds, each (N, 3).
    runs : int
        Number of evaluation runs.
    seed : int
        Seed of the subset draws.
    emd_mode : str
        "exact" or "approx".
    workers : int
        Threads per distance matrix.

    Returns
    -------
    MetricReport

    Raises
    ------
    ContractError
        If either set has fewer than 2 shapes or runs is below 1.
    """

    _check_sets(gen, ref, 2)
    if runs < 1:
        raise ContractError(f"runs must be positive, got {runs}")
    if len(gen) != len(ref):
        logging.warning(f"Generated set has {len(gen)} shapes, reference set {len(ref)}")

    flags: list[str] = []
    entries = []
    for run in range(runs):
        if len(gen) > len(ref):
            rng = np.random.default_rng([seed, run])
            picks = np.sort(rng.choice(len(gen), size=len(ref), replace=False))
            subset = [gen[i] for i in picks]
        else:
            subset = list(gen)
        entry: dict[str, Any] = {"run": run, "gen_size": len(subset)}
        entry.update(_run_metrics(subset, ref, emd_mode, workers, flags))
        entries.append(entry)
        logging.info(f"Evaluation run {run}: {entry}")

    best = min(range(runs), key=lambda r: _distance_to_fair(entries[r]))
    document: JSON = {key: entries[best][key] for key in METRIC_KEYS}
    document.update(
        {
            "gen_size": len(gen),
            "ref_size": len(ref),
            "seed": seed,
            "best_run": best,
            "runs": entries,
            "flags": flags,
            "conventions": {
                "cd": "squared euclidean, mean per direction",
                "emd": f"euclidean, mean over the optimal bijection ({emd_mode})",
            },
        }
    )
    return MetricReport(document)
