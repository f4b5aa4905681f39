""" Solvers for the square linear assignment problem.

`solve_assignment` is the shortest-augmenting-path method with row and column potentials; it
adds one row per phase and runs in O(n^3). The inner scan over columns is vectorized, and ties
resolve toward the lowest column index.

`auction_assignment` is a Jacobi auction with epsilon scaling. An assignment that satisfies
epsilon complementary slackness costs at most n * epsilon more than the optimum, so the final
epsilon is chosen from a lower bound of the optimal cost to meet a relative tolerance.
"""

import logging

import numpy as np

from spvd.errors import ContractError
from spvd.spvd_types import FloatArray, IntArray

EPS_SCALING_FACTOR = 5.0


def _check_square(cost: FloatArray) -> FloatArray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ContractError(f"cost matrix must be non-empty and square, got {cost.shape}")
    return cost


def solve_assignment(cost: FloatArray) -> tuple[IntArray, float]:
    """Minimum-cost perfect matching of rows to columns.

    Returns:
        (assignment, total) where assignment[i] is the column of row i.

    Raises:
        ContractError: If the matrix is empty or not square.
    """

    cost = _check_square(cost)
    n = cost.shape[0]
    # Index 0 is a virtual column; rows and columns are 1-based below.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)

    for row in range(1, n + 1):
        owner[0] = row
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            improve = free & (reduced < minv[1:])
            minv[1:][improve] = reduced[improve]
            way[1:][improve] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]

            settled = np.flatnonzero(used)
            u[owner[settled]] += delta
            v[settled] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break

        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    assignment = np.empty(n, dtype=np.int64)
    assignment[owner[1:] - 1] = np.arange(n)
    return assignment, float(cost[np.arange(n), assignment].sum())


def assignment_lower_bound(cost: FloatArray) -> float:
    """max(sum of row minima, sum of column minima), a lower bound of the optimal cost."""

    cost = _check_square(cost)
    return float(max(cost.min(axis=1).sum(), cost.min(axis=0).sum()))


def auction_assignment(cost: FloatArray, rel_tol: float = 0.005) -> tuple[IntArray, float]:
    """Near-optimal assignment whose cost is at most (1 + rel_tol) times the optimum.

    Falls back to the exact solver when the lower bound of the optimum is zero.

    Raises:
        ContractError: If the matrix is empty or not square, or rel_tol is not positive.
    """

    cost = _check_square(cost)
    if rel_tol <= 0:
        raise ContractError(f"relative tolerance must be positive, got {rel_tol}")
    n = cost.shape[0]
    bound = assignment_lower_bound(cost)
    if n == 1 or bound <= 0.0:
        return solve_assignment(cost)

    final_eps = rel_tol * bound / n
    benefit = -cost
    prices = np.zeros(n)
    eps = max(float(cost.max() - cost.min()) / 2.0, final_eps)
    rounds = 0
    while True:
        owner = np.full(n, -1, dtype=np.int64)
        assigned = np.full(n, -1, dtype=np.int64)
        while (assigned < 0).any():
            rounds += 1
            bidders = np.flatnonzero(assigned < 0)
            values = benefit[bidders] - prices
            best = np.argmax(values, axis=1)
            picks = np.arange(len(bidders))
            first = values[picks, best]
            values[picks, best] = -np.inf
            second = values.max(axis=1)
            bids = prices[best] + first - second + eps

            top = np.full(n, -np.inf)
            np.maximum.at(top, best, bids)
            winners = np.flatnonzero(bids == top[best])
            _, keep = np.unique(best[winners], return_index=True)
            winners = winners[keep]
            objects = best[winners]

            previous = owner[objects]
            assigned[previous[previous >= 0]] = -1
            owner[objects] = bidders[winners]
            assigned[bidders[winners]] = objects
            prices[objects] = top[objects]
        if eps <= final_eps:
            break
        eps = max(eps / EPS_SCALING_FACTOR, final_eps)

    logging.debug(f"auction assignment: n={n} rounds={rounds} final_eps={final_eps:.3e}")
    return assigned, float(cost[np.arange(n), assigned].sum())
