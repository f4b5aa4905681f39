import numpy as np
import pytest

from spvd.errors import ContractError
from spvd.metrics import MetricReport, chamfer, coverage, eval_report, mmd, one_nn_accuracy
from spvd.metrics.evaluation import METRIC_KEYS, one_nna_from_matrices


@pytest.fixture
def rng():
    return np.random.default_rng(21)


@pytest.fixture
def reference(rng):
    return [rng.normal(size=(16, 3)) for _ in range(6)]


def _brute_force_nna(gen, ref):
    shapes = list(gen) + list(ref)
    labels = [True] * len(gen) + [False] * len(ref)
    correct = 0
    for i, shape in enumerate(shapes):
        best, nearest = np.inf, -1
        for j, other in enumerate(shapes):
            if j != i and chamfer(shape, other) < best:
                best, nearest = chamfer(shape, other), j
        correct += labels[nearest] == labels[i]
    return 100.0 * correct / len(shapes)


def test_twins_give_zero_accuracy(reference):
    copies = [shape.copy() for shape in reference]

    assert one_nn_accuracy(copies, reference, "CD") == 0.0
    assert one_nn_accuracy(copies, reference, "EMD") == 0.0


def test_separated_clusters_give_full_accuracy(reference):
    far = [shape + 100.0 for shape in reference]

    assert one_nn_accuracy(far, reference, "CD") == 100.0


def test_ties_go_to_the_lower_merged_index():
    gg = np.array([[0.0, 1.0], [1.0, 0.0]])
    rr = np.array([[0.0, 3.0], [3.0, 0.0]])
    # G0 is as close to R0 as to G1.
    gr = np.array([[1.0, 5.0], [2.0, 5.0]])

    forward = one_nna_from_matrices(gg, gr, rr)
    swapped = one_nna_from_matrices(rr, gr.T, gg)

    # Forward, G1 (index 1) beats R0 (index 2) for G0, which is then classified correctly.
    assert forward == 75.0
    # Swapped, R0 comes first in the merged order and G0 is misclassified.
    assert swapped == 50.0


def test_accuracy_matches_brute_force(rng, reference):
    gen = [rng.normal(size=(16, 3)) * 1.2 for _ in range(5)]

    assert one_nn_accuracy(gen, reference, "CD") == pytest.approx(
        _brute_force_nna(gen, reference)
    )


def test_mmd_and_coverage_match_brute_force(rng, reference):
    gen = [rng.normal(size=(16, 3)) for _ in range(4)]

    expected_mmd = np.mean([min(chamfer(r, g) for g in gen) for r in reference])
    matched = {int(np.argmin([chamfer(r, g) for r in reference])) for g in gen}

    assert mmd(gen, reference, "CD") == pytest.approx(expected_mmd, rel=1e-12)
    assert coverage(gen, reference, "CD") == pytest.approx(100.0 * len(matched) / 6)


def test_identity_sets(reference):
    assert mmd(reference, reference, "EMD") == 0.0
    assert coverage(reference, reference, "CD") == 100.0


def test_single_generated_shape_covers_one(reference):
    assert coverage(reference[:1], reference, "CD") == pytest.approx(100.0 / 6)


def test_report_for_identical_sets(reference):
    report = eval_report([s.copy() for s in reference], reference, runs=2)

    assert isinstance(report, MetricReport)
    assert report["one_nna_cd"] == 0.0 and report["one_nna_emd"] == 0.0
    assert report["mmd_cd"] == 0.0 and report["mmd_emd"] == 0.0
    assert report["cov_cd"] == 100.0 and report["cov_emd"] == 100.0
    assert report.flags == []
    assert len(report.df) == 2
    assert set(METRIC_KEYS) <= set(report.df.columns)
    assert "1-NNA (%)" in report.table()


def test_report_picks_run_closest_to_half(rng, reference):
    gen = [rng.normal(size=(16, 3)) for _ in range(15)]

    report = eval_report(gen, reference, runs=4, seed=3)

    distances = [abs(run["one_nna_cd"] - 50.0) for run in report.json["runs"]]
    assert report.json["best_run"] == int(np.argmin(distances))
    assert report["one_nna_cd"] == report.json["runs"][report.json["best_run"]]["one_nna_cd"]
    assert all(run["gen_size"] == 6 for run in report.json["runs"])
    for key in ("one_nna_cd", "one_nna_emd", "cov_cd", "cov_emd"):
        assert 0.0 <= report[key] <= 100.0


def test_mixed_sizes_flag_emd(rng, reference):
    gen = [rng.normal(size=(16, 3)) for _ in range(5)] + [rng.normal(size=(20, 3))]

    report = eval_report(gen, reference, runs=1)

    assert report["one_nna_emd"] is None and report["cov_emd"] is None
    assert report.flags == ["one_nna_emd", "mmd_emd", "cov_emd"]
    assert report["mmd_cd"] is not None
    assert "n/a" in report.table()


def test_small_sets_are_rejected(reference):
    with pytest.raises(ContractError):
        eval_report(reference[:1], reference)
    with pytest.raises(ContractError):
        one_nn_accuracy(reference, reference[:1], "CD")
    with pytest.raises(ContractError):
        eval_report(reference, reference, runs=0)
