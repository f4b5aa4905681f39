import numpy as np
import pytest

from spvd.autodiff import Tensor
from spvd.diffusion import forward_sample, make_linear_schedule, q_step, training_loss
from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import SampleMask, SigmaVariant

_SCHED = make_linear_schedule(100)


class RecordingNet:
    """Returns a fixed prediction and remembers its last input."""

    def __init__(self, prediction):
        self.prediction = prediction
        self.x_t = None

    def __call__(self, x_t, t, class_ids=None):
        self.x_t = x_t
        return Tensor(self.prediction(x_t, t))


def test_schedule_arrays():
    sched = make_linear_schedule(1000, 1e-4, 0.02)

    assert sched.T == 1000
    assert sched.beta[0] == 0.0 and sched.alpha_bar[0] == 1.0 and sched.sigma[0] == 0.0
    assert sched.beta[1] == pytest.approx(1e-4) and sched.beta[1000] == pytest.approx(0.02)
    np.testing.assert_allclose(sched.alpha_bar[1:], np.cumprod(1.0 - sched.beta[1:]))
    assert (np.diff(sched.alpha_bar) < 0).all()
    assert sched.alpha_bar[1000] < 1e-4
    # Posterior sigma vanishes at t = 1; sqrt_beta does not.
    assert sched.sigma[1] == 0.0
    assert make_linear_schedule(10, variant="sqrt_beta").sigma[1] == pytest.approx(1e-2)


def test_schedule_json():
    sched = make_linear_schedule(50, 1e-3, 0.05, SigmaVariant.SQRT_BETA)

    restored = type(sched).from_json(sched.json)

    assert sched.json == {
        "T": 50,
        "beta_start": 1e-3,
        "beta_end": 0.05,
        "sigma_variant": "sqrt_beta",
    }
    np.testing.assert_array_equal(restored.sigma, sched.sigma)


def test_schedule_errors():
    with pytest.raises(ConfigError):
        make_linear_schedule(1)
    with pytest.raises(ConfigError):
        make_linear_schedule(10, 0.02, 1e-4)
    with pytest.raises(ConfigError):
        make_linear_schedule(10, variant="cosine")


def test_forward_sample_limits():
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, size=(2, 16, 3))
    eps = rng.standard_normal(x0.shape)
    t = np.array([3, 1000])
    sched = make_linear_schedule(1000)

    no_noise = forward_sample(x0, t, np.zeros_like(x0), sched)
    noisy = forward_sample(x0, t, eps, sched)

    np.testing.assert_allclose(no_noise[0], np.sqrt(sched.alpha_bar[3]) * x0[0])
    np.testing.assert_allclose(noisy[1], eps[1], atol=0.02)
    with pytest.raises(ContractError):
        forward_sample(x0, np.array([0, 5]), eps, sched)


@pytest.mark.parametrize("t", [1, 50, 100])
def test_chain_matches_closed_form(t):
    """Iterating single transitions reproduces the closed-form marginal statistics."""

    rng = np.random.default_rng(t)
    x0 = np.full((20_000, 1, 3), 0.8)

    x = x0
    for step in range(1, t + 1):
        x = q_step(x, step, _SCHED, rng)

    mean = np.sqrt(_SCHED.alpha_bar[t]) * 0.8
    var = 1.0 - _SCHED.alpha_bar[t]
    assert x.mean() == pytest.approx(mean, rel=0.02)
    assert x.var() == pytest.approx(var, rel=0.02)


def test_oracle_net_has_zero_loss():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, size=(3, 20, 3))
    t = np.array([1, 40, 100])
    eps = rng.standard_normal(x0.shape)
    net = RecordingNet(lambda x_t, steps: eps)

    loss = training_loss(net, x0, _SCHED, rng, t=t, eps=eps)

    assert loss.item() == 0.0


def test_zero_net_loss_is_noise_variance():
    rng = np.random.default_rng(2)
    x0 = rng.uniform(-1, 1, size=(16, 256, 3))
    net = RecordingNet(lambda x_t, steps: np.zeros_like(x_t))

    loss = training_loss(net, x0, _SCHED, rng)

    assert loss.item() == pytest.approx(1.0, rel=0.05)


def test_full_mask_equals_unmasked():
    x0 = np.random.default_rng(3).uniform(-1, 1, size=(2, 12, 3))
    net = RecordingNet(lambda x_t, steps: 0.5 * x_t)

    plain = training_loss(net, x0, _SCHED, np.random.default_rng(9))
    masked = training_loss(
        net, x0, _SCHED, np.random.default_rng(9), mask=SampleMask.all_free(2, 12)
    )

    assert plain.item() == masked.item()


def test_known_points_stay_clean_and_unscored():
    rng = np.random.default_rng(4)
    x0 = rng.uniform(-1, 1, size=(1, 10, 3))
    free = np.zeros((1, 10), dtype=bool)
    free[0, 6:] = True
    eps = rng.standard_normal(x0.shape)
    # Wrong only on KNOWN points, which must not count.
    net = RecordingNet(lambda x_t, steps: np.where(free[:, :, None], eps, 100.0))

    loss = training_loss(net, x0, _SCHED, rng, mask=SampleMask(free), t=np.array([30]), eps=eps)

    assert loss.item() == 0.0
    np.testing.assert_array_equal(net.x_t[0, :6], x0[0, :6])
    assert not np.allclose(net.x_t[0, 6:], x0[0, 6:])


def test_mask_without_free_points_is_rejected():
    with pytest.raises(ContractError):
        SampleMask(np.zeros((1, 10), dtype=bool))
