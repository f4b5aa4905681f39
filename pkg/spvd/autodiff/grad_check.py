""" Finite-difference verification of backward rules.

Central differences (f(x + eps * e) - f(x - eps * e)) / (2 * eps) are compared per coordinate
with the gradient computed by `backward()`. The relative error of a coordinate is

    |analytic - numeric| / max(|analytic|, |numeric|, floor)

where `floor` keeps coordinates whose true derivative is zero from dividing rounding noise by
zero. Run checks with `precision("float64")`.
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from spvd.autodiff.tensor import Array, Tensor, no_grad
from spvd.errors import ContractError


def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central_difference(loss_fn: Callable[[], Tensor], flat: Array, index: int, eps: float) -> float:
    original = flat[index]
    with no_grad():
        flat[index] = original + eps
        plus = loss_fn().item()
        flat[index] = original - eps
        minus = loss_fn().item()
    flat[index] = original
    return (plus - minus) / (2.0 * eps)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    *,
    coords: Optional[Sequence[int]] = None,
    floor: float = 1e-3,
) -> float:
    """Compare the backward gradient of a scalar function with central differences.

    Parameters
    ----------
    f : callable
        Maps `x` to a scalar tensor.
    x : Tensor
        The input; must require gradients. Its values are perturbed in place and restored.
    eps : float
        Finite-difference step.
    coords : sequence of int, optional
        Flat indices to check. Default is every coordinate.
    floor : float
        Lower bound of the relative-error denominator.

    Returns
    -------
    float
        The maximum relative error over the checked coordinates.

    Raises
    ------
    ContractError
        If eps is not positive or x does not require gradients.
    """

    if eps <= 0:
        raise ContractError("grad_check needs eps > 0")
    if not x.requires_grad:
        raise ContractError("grad_check needs an input that requires gradients")

    x.grad = None
    f(x).backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    for index in indices:
        numeric = _central_difference(lambda: f(x), flat, int(index), eps)
        worst = max(worst, _relative_error(float(analytic.reshape(-1)[index]), numeric, floor))
    return worst


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    samples: int,
    rng: np.random.Generator,
    eps: float = 1e-5,
    floor: float = 1e-3,
) -> float:
    """Check `samples` randomly chosen scalar parameters of a loss.

    The (tensor, coordinate) pairs are drawn uniformly over all parameter coordinates.

    Returns:
        The maximum relative error over the sampled coordinates.
    """

    for p in params:
        p.grad = None
    loss_fn().backward()

    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = rng.choice(int(offsets[-1]), size=min(samples, int(offsets[-1])), replace=False)

    worst = 0.0
    for pick in np.sort(picks):
        which = int(np.searchsorted(offsets, pick, side="right") - 1)
        param = params[which]
        index = int(pick - offsets[which])
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        numeric = _central_difference(loss_fn, param.data.reshape(-1), index, eps)
        error = _relative_error(float(grad.reshape(-1)[index]), numeric, floor)
        if error > worst:
            logging.debug(f"grad_check: param={param.name} index={index} error={error:.3e}")
        worst = max(worst, error)
    return worst
