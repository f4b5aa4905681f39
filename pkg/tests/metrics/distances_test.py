import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from spvd.errors import ConfigError, ContractError
from spvd.metrics import (
    assignment_lower_bound,
    auction_assignment,
    chamfer,
    distance_matrix,
    emd,
    solve_assignment,
)


@pytest.fixture
def rng():
    return np.random.default_rng(13)


def test_chamfer_hand_values():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])

    assert chamfer(a, b) == 2.0
    assert chamfer(a, a) == 0.0


def test_chamfer_matches_double_loop(rng):
    a = rng.normal(size=(64, 3))
    b = rng.normal(size=(50, 3))

    forward = np.mean([min(((p - q) ** 2).sum() for q in b) for p in a])
    backward = np.mean([min(((p - q) ** 2).sum() for p in a) for q in b])

    assert chamfer(a, b) == pytest.approx(forward + backward, rel=1e-12)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-9)


def test_chamfer_rejects_empty_sets():
    with pytest.raises(ContractError):
        chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


def test_emd_hand_values():
    a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    assert emd(a, a) == 0.0
    assert emd(a, a[::-1]) == 0.0
    assert emd(a, a + [0.0, 3.0, 4.0]) == pytest.approx(5.0)


def test_emd_matches_all_permutations(rng):
    a = rng.normal(size=(7, 3))
    b = rng.normal(size=(7, 3))
    cost = np.linalg.norm(a[:, None] - b[None], axis=2)

    best = min(cost[np.arange(7), list(p)].sum() for p in itertools.permutations(range(7)))

    assert emd(a, b) == pytest.approx(best / 7, rel=1e-12)
    assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-9)


@pytest.mark.parametrize("n", [1, 5, 40, 120])
def test_assignment_matches_scipy(rng, n):
    cost = rng.uniform(0, 10, size=(n, n))

    assignment, total = solve_assignment(cost)

    rows, cols = linear_sum_assignment(cost)
    assert sorted(assignment.tolist()) == list(range(n))
    assert total == pytest.approx(cost[rows, cols].sum(), rel=1e-10)
    assert total >= assignment_lower_bound(cost) - 1e-9


def test_assignment_with_ties():
    cost = np.ones((4, 4))

    assignment, total = solve_assignment(cost)

    assert total == 4.0
    assert sorted(assignment.tolist()) == [0, 1, 2, 3]


def test_approximate_emd_is_within_tolerance(rng):
    for _ in range(3):
        a = rng.normal(size=(32, 3))
        b = rng.normal(size=(32, 3))

        exact = emd(a, b)
        approx = emd(a, b, mode="approx")

        assert exact - 1e-12 <= approx <= exact * 1.005


def test_auction_assignment_is_a_permutation(rng):
    cost = rng.uniform(0, 1, size=(60, 60))

    assignment, total = auction_assignment(cost, 0.01)

    assert sorted(assignment.tolist()) == list(range(60))
    assert total <= solve_assignment(cost)[1] * 1.01


def test_emd_errors(rng):
    with pytest.raises(ContractError):
        emd(rng.normal(size=(3, 3)), rng.normal(size=(4, 3)))
    with pytest.raises(ConfigError):
        emd(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), mode="sinkhorn")
    with pytest.raises(ConfigError):
        emd(np.zeros((513, 3)), np.zeros((513, 3)))
    with pytest.raises(ContractError):
        solve_assignment(np.zeros((2, 3)))


def test_distance_matrix_is_independent_of_workers(rng):
    shapes = [rng.normal(size=(16, 3)) for _ in range(5)]
    others = [rng.normal(size=(16, 3)) for _ in range(3)]

    single = distance_matrix(shapes, others, "CD", workers=1)
    threaded = distance_matrix(shapes, others, "CD", workers=4)

    assert single.shape == (5, 3)
    np.testing.assert_array_equal(single.values, threaded.values)
    assert single.values[2, 1] == chamfer(shapes[2], others[1])


def test_distance_matrix_reraises_worker_errors(rng):
    shapes = [rng.normal(size=(16, 3)), rng.normal(size=(12, 3))]

    with pytest.raises(ContractError):
        distance_matrix(shapes, shapes, "EMD", workers=2)


def _variants(a, b, seed):
    """The pair swapped, moved by an orthogonal map plus translation, and reordered."""

    rng = np.random.default_rng(seed)
    rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    shift = rng.normal(size=3)
    return {
        "swapped": (b, a),
        "rigid": (a @ rotation.T + shift, b @ rotation.T + shift),
        "reordered": (a[rng.permutation(len(a))], b[rng.permutation(len(b))]),
    }


@pytest.mark.parametrize("seed", range(10))
def test_chamfer_invariances(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(int(rng.integers(1, 60)), 3))
    b = rng.normal(size=(int(rng.integers(1, 60)), 3))
    expected = chamfer(a, b)

    for name, (x, y) in _variants(a, b, seed).items():
        assert chamfer(x, y) == pytest.approx(expected, rel=1e-9, abs=1e-12), name


@pytest.mark.parametrize("seed", range(10))
def test_exact_emd_invariances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    expected = emd(a, b)

    for name, (x, y) in _variants(a, b, seed).items():
        assert emd(x, y) == pytest.approx(expected, rel=1e-9, abs=1e-12), name


@pytest.mark.parametrize("seed", range(10))
def test_approximate_emd_invariances(seed):
    """Every variant stays within the approximation bound of the shared exact cost."""

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    exact = emd(a, b)

    for name, (x, y) in _variants(a, b, seed).items():
        assert exact * (1 - 1e-9) <= emd(x, y, mode="approx") <= exact * 1.005 + 1e-12, name
