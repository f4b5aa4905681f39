import numpy as np
import pytest

from spvd.autodiff import Tensor
from spvd.diffusion import (
    ddim_step,
    ddim_timesteps,
    ddpm_step,
    forward_sample,
    make_linear_schedule,
    sample,
    time_embedding,
)
from spvd.diffusion.embedding import class_embedding, combine_embeddings
from spvd.errors import ConfigError, ContractError
from spvd.spvd_types import SampleMask

_SCHED = make_linear_schedule(50)


class OriginNet:
    """The exact noise predictor for data concentrated at `target`."""

    def __init__(self, sched, target=0.0):
        self.sched = sched
        self.target = target
        self.calls = 0

    def __call__(self, x_t, t, class_ids=None):
        self.calls += 1
        ab = self.sched.alpha_bar[np.asarray(t)][:, None, None]
        return Tensor((x_t - np.sqrt(ab) * self.target) / np.sqrt(1.0 - ab), dtype=np.float64)


def _zero_net(x_t, t, class_ids=None):
    return Tensor(np.zeros_like(x_t))


def test_ddim_timesteps():
    np.testing.assert_array_equal(ddim_timesteps(10, 10), np.arange(10, 0, -1))
    steps = ddim_timesteps(1000, 7)
    assert steps[0] == 1000 and steps[-1] == 1
    assert (np.diff(steps) < 0).all()
    with pytest.raises(ConfigError):
        ddim_timesteps(10, 11)


def test_ddpm_step_reductions():
    x_t = np.random.default_rng(0).normal(size=(1, 8, 3))
    rng = np.random.default_rng(1)

    out = ddpm_step(_zero_net, x_t, 20, _SCHED, rng, z=np.zeros_like(x_t))
    np.testing.assert_allclose(out, x_t / np.sqrt(_SCHED.alpha[20]))

    # No noise is added at t = 1 whatever the generator does.
    first = ddpm_step(_zero_net, x_t, 1, _SCHED, np.random.default_rng(2))
    second = ddpm_step(_zero_net, x_t, 1, _SCHED, np.random.default_rng(3))
    np.testing.assert_array_equal(first, second)


def test_ddpm_inverts_two_step_schedule():
    sched = make_linear_schedule(2, 1e-4, 0.02)
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-1, 1, size=(1, 8, 3))
    eps = rng.standard_normal(x0.shape)
    x_t = forward_sample(x0, np.array([2]), eps, sched)

    def oracle(x, t, class_ids=None):
        ab = sched.alpha_bar[np.asarray(t)][:, None, None]
        return Tensor((x - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab), dtype=np.float64)

    x1 = ddpm_step(oracle, x_t, 2, sched, rng, z=np.zeros_like(x0))
    out = ddpm_step(oracle, x1, 1, sched, rng)

    np.testing.assert_allclose(out, x0, atol=1e-5)


def test_ddim_terminal_step_returns_predicted_x0():
    rng = np.random.default_rng(6)
    x0 = rng.uniform(-1, 1, size=(2, 8, 3))
    eps = rng.standard_normal(x0.shape)
    x_t = forward_sample(x0, np.array([30, 30]), eps, _SCHED)

    def oracle(x, t, class_ids=None):
        return Tensor(eps, dtype=np.float64)

    np.testing.assert_allclose(ddim_step(oracle, x_t, 30, 0, _SCHED), x0, atol=1e-12)
    with pytest.raises(ContractError):
        ddim_step(oracle, x_t, 10, 20, _SCHED)


def test_samplers_reach_the_data():
    net = OriginNet(_SCHED, target=0.25)

    for rule, steps in [("ddim", 10), ("ddpm", 50)]:
        out = sample(net, 2, 16, _SCHED, rule, steps, np.random.default_rng(0))
        assert out.points.shape == (2, 16, 3)
        np.testing.assert_allclose(out.points, 0.25, atol=1e-6)


def test_ddim_visits_requested_steps():
    net = OriginNet(_SCHED)

    sample(net, 1, 8, _SCHED, "ddim", 7, np.random.default_rng(0))

    assert net.calls == 7


def test_sampling_is_deterministic():
    def net(x_t, t, class_ids=None):
        return Tensor(np.tanh(x_t) * (t[:, None, None] / 50.0), dtype=np.float64)

    for rule in ["ddim", "ddpm"]:
        first = sample(net, 2, 8, _SCHED, rule, 20, np.random.default_rng(42)).points
        second = sample(net, 2, 8, _SCHED, rule, 20, np.random.default_rng(42)).points
        np.testing.assert_array_equal(first, second)


def test_known_points_are_clamped():
    rng = np.random.default_rng(8)
    known = rng.uniform(-1, 1, size=(2, 12, 3))
    free = np.zeros((2, 12), dtype=bool)
    free[:, 8:] = True

    out = sample(
        OriginNet(_SCHED),
        2,
        12,
        _SCHED,
        "ddim",
        5,
        rng,
        known=(known, SampleMask(free)),
    )

    np.testing.assert_array_equal(out.points[:, :8], known[:, :8])
    assert np.isfinite(out.points).all()


def test_sample_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sample(_zero_net, 1, 8, _SCHED, "ddim", 51, rng)
    with pytest.raises(ConfigError):
        sample(_zero_net, 1, 8, _SCHED, "euler", 5, rng)


def test_time_embedding():
    zero = time_embedding(np.array([0]), 8)
    np.testing.assert_array_equal(zero, [[0, 1, 0, 1, 0, 1, 0, 1]])

    table = time_embedding(np.arange(1, 1001), 64)
    assert len(np.unique(table.round(12), axis=0)) == 1000
    with pytest.raises(ConfigError):
        time_embedding(np.array([1]), 7)


def test_class_embedding():
    table = Tensor(np.arange(6.0).reshape(3, 2))
    time = Tensor(np.ones((2, 2)))

    label = class_embedding(np.array([2, 0]), table)

    np.testing.assert_array_equal(combine_embeddings(time, label).numpy(), [[5, 6], [1, 2]])
    assert combine_embeddings(time, None) is time
    with pytest.raises(ContractError):
        class_embedding(np.array([3]), table)
