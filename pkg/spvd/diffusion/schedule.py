""" Linear variance schedules of the forward noising process.

The arrays of a `NoiseSchedule` have length T + 1 and are indexed directly by the timestep;
entry 0 holds the t = 0 convention (beta 0, alpha 1, alpha_bar 1, sigma 0), so
`sched.alpha_bar[t]` is valid for every t in [0, T]. All values are float64.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import JSON, FloatArray, SigmaVariant


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: FloatArray
    alpha: FloatArray
    alpha_bar: FloatArray
    sigma: FloatArray
    variant: SigmaVariant
    beta_start: float
    beta_end: float

    @property
    def T(self) -> int:
        return int(self.beta.shape[0] - 1)

    def check_timesteps(self, t: Union[int, np.ndarray], lowest: int = 1) -> np.ndarray:
        """Return `t` as an int64 array, rejecting values outside [lowest, T]."""

        t = np.asarray(t, dtype=np.int64)
        if t.size and (t.min() < lowest or t.max() > self.T):
            raise ContractError(f"timesteps must lie in [{lowest}, {self.T}], got {t}")
        return t

    @property
    def json(self) -> JSON:
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_variant": self.variant.value,
        }

    @staticmethod
    def from_json(data: JSON) -> "NoiseSchedule":
        return make_linear_schedule(
            int(data["T"]),
            float(data["beta_start"]),
            float(data["beta_end"]),
            SigmaVariant(data["sigma_variant"]),
        )


def make_linear_schedule(
    T: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    variant: Union[SigmaVariant, str] = SigmaVariant.POSTERIOR,
) -> NoiseSchedule:
    """Build a schedule with beta linearly spaced from `beta_start` to `beta_end`.

    Parameters
    ----------
    T : int
        Number of diffusion steps, at least 2.
    beta_start, beta_end : float
        Endpoints with 0 < beta_start < beta_end < 1.
    variant : SigmaVariant
        "sqrt_beta" uses sigma_t^2 = beta_t. "posterior" uses
        sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.

    Returns
    -------
    NoiseSchedule

    Raises
    ------
    ConfigError
        If T or the beta range is invalid.
    """

    try:
        variant = SigmaVariant(variant)
    except ValueError:
        raise ConfigError(f"Unknown sigma variant {variant}.")
    if T < 2:
        raise ConfigError(f"A schedule needs at least 2 steps, got T={T}.")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ConfigError(f"Invalid beta range {beta_start} -> {beta_end}.")

    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T, dtype=np.float64)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if variant == SigmaVariant.SQRT_BETA:
        sigma = np.sqrt(beta)
    else:
        sigma = np.zeros_like(beta)
        sigma[1:] = np.sqrt((1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:])

    logging.debug(
        f"Noise schedule: T={T} beta={beta_start}->{beta_end} variant={variant.value} "
        f"alpha_bar_T={alpha_bar[-1]:.3e}"
    )
    return NoiseSchedule(beta, alpha, alpha_bar, sigma, variant, beta_start, beta_end)
