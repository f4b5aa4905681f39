""" Adam with bias correction and the one-cycle learning rate policy. """

import math
from typing import Sequence

import numpy as np

from spvd.autodiff.tensor import Tensor
from spvd.errors import ConfigError

WARMUP_FRACTION = 0.1
FINAL_DIVISOR = 100.0


def one_cycle_lr(step: int, total: int, peak: float) -> float:
    """Learning rate of 0-based `step` in a run of `total` steps.

    The rate rises linearly over the first 10% of the steps, reaching `peak` at the last
    warmup step, then follows a cosine down to peak / 100 at the last step.

    Raises:
        ConfigError: If total is not positive or step lies outside [0, total).
    """

    if total < 1 or not 0 <= step < total:
        raise ConfigError(f"step {step} is outside a run of {total} steps")
    warmup = max(1, round(WARMUP_FRACTION * total))
    if step < warmup:
        return peak * (step + 1) / warmup
    floor = peak / FINAL_DIVISOR
    decay = total - warmup
    progress = (step - warmup + 1) / decay if decay else 1.0
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam over a fixed list of leaf tensors.

    Moments are kept in float64 and the update is cast to each parameter's dtype. Parameters
    without a gradient are skipped and keep their moments.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if lr <= 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1) or eps <= 0:
            raise ConfigError(f"Invalid Adam settings lr={lr} betas={betas} eps={eps}.")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.steps = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float = 0.0) -> None:
        """Apply one update with learning rate `lr`, or the constructor's rate when 0."""

        lr = lr or self.lr
        beta1, beta2 = self.betas
        self.steps += 1
        correction1 = 1.0 - beta1**self.steps
        correction2 = 1.0 - beta2**self.steps
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = np.asarray(p.grad, dtype=np.float64)
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)
