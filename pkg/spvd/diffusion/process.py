""" The forward noising process and the noise-prediction training objective.

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps

Timesteps are drawn per sample. When a `SampleMask` is given only FREE points are noised and
scored; KNOWN points enter the network at their clean positions.
"""

from typing import Optional, Protocol

import numpy as np

from spvd.autodiff import ops
from spvd.autodiff.tensor import Tensor
from spvd.diffusion.schedule import NoiseSchedule
from spvd.errors import ContractError, DimensionError
from spvd.spvd_types import FloatArray, IntArray, SampleMask


class Denoiser(Protocol):
    """Predicts the noise of a batch of noisy clouds."""

    def __call__(
        self, x_t: FloatArray, t: IntArray, class_ids: Optional[IntArray] = None
    ) -> Tensor:
        ...


def _check_points(x: FloatArray) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise DimensionError(f"point batches must have shape (B, N, 3), got {x.shape}")
    return x


def forward_sample(
    x0: FloatArray, t: IntArray, eps: FloatArray, sched: NoiseSchedule
) -> FloatArray:
    """Noise every sample of `x0` to its own timestep in closed form.

    Raises:
        ContractError: If a timestep lies outside [1, T].
        DimensionError: If `eps` does not match `x0` or `t` has not one entry per sample.
    """

    x0 = _check_points(x0)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise DimensionError(f"noise {eps.shape} does not match points {x0.shape}")
    t = sched.check_timesteps(t).reshape(-1)
    if t.shape != (x0.shape[0],):
        raise DimensionError(f"need one timestep per sample, got {t.shape}")
    ab = sched.alpha_bar[t][:, None, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def q_step(
    x_prev: FloatArray, t: int, sched: NoiseSchedule, rng: np.random.Generator
) -> FloatArray:
    """One transition of the noising Markov chain, from step t - 1 to step t."""

    t = int(sched.check_timesteps(t))
    x_prev = np.asarray(x_prev, dtype=np.float64)
    z = rng.standard_normal(x_prev.shape)
    return np.sqrt(sched.alpha[t]) * x_prev + np.sqrt(sched.beta[t]) * z


def training_loss(
    net: Denoiser,
    x0: FloatArray,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    class_ids: Optional[IntArray] = None,
    mask: Optional[SampleMask] = None,
    t: Optional[IntArray] = None,
    eps: Optional[FloatArray] = None,
) -> Tensor:
    """Mean squared error between the true and the predicted noise over FREE coordinates.

    Parameters
    ----------
    net : Denoiser
        The noise predictor.
    x0 : ndarray
        (B, N, 3) clean clouds.
    sched : NoiseSchedule
    rng : numpy.random.Generator
        Draws the per-sample timesteps first, then the noise, for whichever of `t` and
        `eps` is not given.
    class_ids : ndarray, optional
        Class label per sample for conditional models.
    mask : SampleMask, optional
        FREE points are noised and scored; the default treats every point as FREE.
    t, eps : ndarray, optional
        Fixed timesteps and noise.

    Returns
    -------
    Tensor
        Scalar loss, sum of squared errors over FREE coordinates divided by their count.

    Raises
    ------
    ContractError
        If the mask does not fit the batch.
    """

    x0 = _check_points(x0)
    batch, n = x0.shape[:2]
    if mask is None:
        mask = SampleMask.all_free(batch, n)
    elif mask.shape != (batch, n):
        raise ContractError(f"mask {mask.shape} does not fit points {x0.shape[:2]}")
    if t is None:
        t = rng.integers(1, sched.T + 1, size=batch)
    if eps is None:
        eps = rng.standard_normal(x0.shape)

    free = mask.free[:, :, None]
    x_t = np.where(free, forward_sample(x0, t, eps, sched), x0)
    predicted = ops.reshape(net(x_t, np.asarray(t), class_ids), (batch * n, 3))

    weights = Tensor(mask.free.reshape(-1, 1).astype(np.float64))
    diff = ops.mul(ops.sub(predicted, Tensor(eps.reshape(-1, 3))), weights)
    count = int(mask.free_counts.sum()) * 3
    return ops.scale(ops.sum(ops.mul(diff, diff)), 1.0 / count)
