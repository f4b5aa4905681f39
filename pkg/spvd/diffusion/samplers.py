""" DDPM and DDIM samplers, with optional clamping of KNOWN points.

DDPM runs the full reverse chain T, T-1, ..., 1. DDIM visits an evenly spaced descending
subsequence of [1, T] that always contains T and 1, then takes a last step to t = 0, where
alpha_bar is 1 and the update returns the predicted clean cloud. DDIM uses no stochastic term.

In masked sampling FREE points start as pure noise, KNOWN points start at their inputs, and
KNOWN points are reset to the inputs after every step.
"""

import logging
import time
from typing import Optional, Union

import numpy as np
from tqdm import tqdm

from spvd.autodiff.tensor import no_grad
from spvd.diffusion.process import Denoiser
from spvd.diffusion.schedule import NoiseSchedule
from spvd.errors import ConfigError, ContractError, DimensionError
from spvd.spvd_types import FloatArray, IntArray, PointCloudBatch, SampleMask, SamplingRule


def _predict(
    net: Denoiser, x_t: FloatArray, t: int, class_ids: Optional[IntArray]
) -> FloatArray:
    steps = np.full(x_t.shape[0], t, dtype=np.int64)
    with no_grad():
        return np.asarray(net(x_t, steps, class_ids).data, dtype=np.float64)


def ddpm_step(
    net: Denoiser,
    x_t: FloatArray,
    t: int,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    class_ids: Optional[IntArray] = None,
    z: Optional[FloatArray] = None,
) -> FloatArray:
    """One ancestral step x_t -> x_{t-1}.

        x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t) + sigma_t * z

    No noise is added at t = 1. `z` overrides the drawn noise.
    """

    t = int(sched.check_timesteps(t))
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = _predict(net, x_t, t, class_ids)
    coef = (1.0 - sched.alpha[t]) / np.sqrt(1.0 - sched.alpha_bar[t])
    mean = (x_t - coef * eps) / np.sqrt(sched.alpha[t])
    if t == 1:
        return mean
    if z is None:
        z = rng.standard_normal(x_t.shape)
    return mean + sched.sigma[t] * z


def ddim_step(
    net: Denoiser,
    x_t: FloatArray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    class_ids: Optional[IntArray] = None,
) -> FloatArray:
    """One deterministic step x_t -> x_{t_prev}; t_prev = 0 returns the predicted x_0.

    Raises:
        ContractError: Unless 0 <= t_prev < t <= T.
    """

    t = int(sched.check_timesteps(t))
    t_prev = int(sched.check_timesteps(t_prev, lowest=0))
    if t_prev >= t:
        raise ContractError(f"DDIM steps must descend, got {t} -> {t_prev}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = _predict(net, x_t, t, class_ids)
    ab, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t_prev]
    x0_pred = (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    return np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev) * eps


def ddim_timesteps(T: int, steps: int) -> IntArray:
    """Evenly spaced descending timesteps from T to 1.

    Raises:
        ConfigError: If steps is not in [1, T].
    """

    if steps < 1 or steps > T:
        raise ConfigError(f"Sampling steps must lie in [1, {T}], got {steps}.")
    return np.round(np.linspace(T, 1, steps)).astype(np.int64)


def _clamp(x: FloatArray, known: Optional[tuple[FloatArray, SampleMask]]) -> FloatArray:
    if known is None:
        return x
    points, mask = known
    return np.where(mask.free[:, :, None], x, points)


def sample(
    net: Denoiser,
    batch_size: int,
    num_points: int,
    sched: NoiseSchedule,
    rule: Union[SamplingRule, str],
    steps: int,
    rng: np.random.Generator,
    *,
    class_ids: Optional[IntArray] = None,
    known: Optional[tuple[FloatArray, SampleMask]] = None,
    stochastic: bool = True,
    progress: bool = False,
) -> PointCloudBatch:
    """Generate clouds by running a reverse chain from Gaussian noise.

    Parameters
    ----------
    net : Denoiser
    batch_size, num_points : int
        Output shape (B, N, 3).
    sched : NoiseSchedule
    rule : SamplingRule
        "ddpm" always runs all T steps; "ddim" visits `steps` timesteps.
    steps : int
        Number of DDIM steps, at most T.
    rng : numpy.random.Generator
        Source of the initial noise and of the DDPM noise.
    class_ids : ndarray, optional
        Class label per sample for conditional models.
    known : (ndarray, SampleMask), optional
        (B, N, 3) input points and the mask of points to keep.
    stochastic : bool
        When False the DDPM noise is forced to 0.
    progress : bool
        Show a progress bar.

    Returns
    -------
    PointCloudBatch
        With KNOWN positions equal to the inputs.

    Raises
    ------
    ConfigError
        If steps exceeds T or the rule is unknown.
    """

    try:
        rule = SamplingRule(rule)
    except ValueError:
        raise ConfigError(f"Unknown sampling rule {rule}.")
    if steps > sched.T:
        raise ConfigError(f"Sampling steps {steps} exceed T={sched.T}.")
    shape = (batch_size, num_points, 3)
    if known is not None:
        points, mask = known
        if np.shape(points) != shape or mask.shape != shape[:2]:
            raise DimensionError(f"known points/mask do not match the output shape {shape}")
        known = (np.asarray(points, dtype=np.float64), mask)

    start = time.perf_counter()
    x = _clamp(rng.standard_normal(shape), known)
    if rule == SamplingRule.DDPM:
        timesteps = range(sched.T, 0, -1)
        for t in tqdm(timesteps, disable=not progress, desc="ddpm"):
            z = None if stochastic else np.zeros(shape)
            x = _clamp(ddpm_step(net, x, t, sched, rng, class_ids, z=z), known)
    else:
        visits = ddim_timesteps(sched.T, steps).tolist()
        pairs = list(zip(visits, visits[1:] + [0]))
        for t, t_prev in tqdm(pairs, disable=not progress, desc="ddim"):
            x = _clamp(ddim_step(net, x, t, t_prev, sched, class_ids), known)

    logging.info(
        f"Sampled {batch_size}x{num_points} points with {rule.value} "
        f"in {time.perf_counter() - start:.2f}s"
    )
    return PointCloudBatch(x, class_ids=class_ids)
