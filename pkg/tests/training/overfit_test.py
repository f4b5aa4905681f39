"""Desk-scale training sanity runs. Run with `pytest -m slow`."""

import time

import numpy as np
import pytest

from spvd.diffusion import sample
from spvd.metrics import chamfer
from spvd.training import RunConfig, build_dataset, rng_stream, train

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    config = RunConfig.from_json(
        {
            "data": {"kind": ["chairoid", "tableoid"], "n_shapes": 8, "n_points": 256},
            "model": {"preset": "spvd-tiny"},
            "schedule": {"T": 100},
            "train": {"steps": 3000, "batch": 8, "lr": 0.002, "seed": 0, "log_every": 500},
            "sample": {"steps": 10},
        }
    )
    return config, train(config, tmp_path_factory.mktemp("overfit"))


def test_training_loss_drops(overfit):
    _, result = overfit
    losses = result.losses.df["loss"]

    assert losses.iloc[:100].mean() > losses.iloc[-100:].mean()
    assert losses.iloc[-100:].mean() < 0.5


def test_samples_resemble_training_shapes(overfit):
    config, result = overfit

    shapes = [s.points for s in build_dataset(config.data, config.seed).shapes]
    generated = sample(
        result.network, 4, 256, result.schedule, "ddpm", 100, rng_stream(0, "sample")
    )

    to_nearest = np.mean([min(chamfer(g, s) for s in shapes) for g in generated.points])
    chairs, tables = shapes[0::2], shapes[1::2]
    between = np.mean([chamfer(c, t) for c in chairs for t in tables])
    assert to_nearest < between


def test_ddim_cost_scales_with_steps(overfit):
    _, result = overfit
    rng = rng_stream(0, "sample")
    seconds = {}
    for steps in (10, 100):
        began = time.perf_counter()
        clouds = sample(result.network, 2, 256, result.schedule, "ddim", steps, rng)
        seconds[steps] = time.perf_counter() - began
        assert np.isfinite(clouds.points).all()
        assert np.abs(clouds.points).max() <= 1.5

    assert seconds[100] / seconds[10] == pytest.approx(10.0, rel=0.15)
