import numpy as np
import pytest
from pandas import read_csv

from spvd.data import load_checkpoint, synth_dataset
from spvd.errors import ConfigError
from spvd.training import RunConfig, task_mask, train, with_overrides
from spvd.training.run_config import TaskConfig
from spvd.training.trainer import CHECKPOINT, LOSS_LOG
from tests._test_utils import read_resource_file


@pytest.fixture
def config():
    return RunConfig.from_json(read_resource_file("run_config.json"))


@pytest.fixture
def batch():
    return synth_dataset(["chairoid", "tableoid"], 4, 96, seed=3).batch([0, 1, 2, 3])


def test_no_task_leaves_batch_unmasked(batch):
    points, mask = task_mask(TaskConfig(), batch, np.random.default_rng(0))

    assert mask is None
    assert points is batch.points


def test_completion_masks_parts(batch):
    points, mask = task_mask(TaskConfig("completion", m=2), batch, np.random.default_rng(0))

    assert mask.shape == (4, 96)
    for row, free in zip(batch.part_ids, mask.free):
        freed = np.unique(row[free])
        assert 1 <= len(freed) <= 2
        assert np.array_equal(free, np.isin(row, freed))


def test_completion_needs_part_labels():
    spheres = synth_dataset("sphere", 2, 96, seed=3).batch([0, 1])

    with pytest.raises(ConfigError, match="needs shapes with part labels"):
        task_mask(TaskConfig("completion"), spheres, np.random.default_rng(0))


def test_superres_keeps_the_density_ratio(batch):
    task = TaskConfig("superres", k_in=512, n_out=2048)

    points, mask = task_mask(task, batch, np.random.default_rng(0))

    assert mask.known_counts.tolist() == [24] * 4
    assert not mask.free[:, :24].any()
    for before, after in zip(batch.points, points):
        assert np.array_equal(np.sort(before, axis=0), np.sort(after, axis=0))


def test_zero_step_run_writes_initial_checkpoint(tmp_path, config):
    config = with_overrides(config, {"train.steps": 0})

    result = train(config, tmp_path)

    assert result.step == 0
    assert result.losses.json["losses"] == []
    assert (tmp_path / CHECKPOINT).exists()
    assert load_checkpoint(tmp_path / CHECKPOINT).step == 0


def test_short_run_logs_every_step(tmp_path, config):
    result = train(config, tmp_path)

    frame = read_csv(tmp_path / LOSS_LOG)
    assert list(frame.columns) == ["step", "loss", "lr"]
    assert frame["step"].tolist() == [1, 2, 3]
    assert frame["lr"].tolist() == pytest.approx([2e-3, (2e-3 + 2e-5) / 2, 2e-5])
    assert np.isfinite(frame["loss"]).all()
    assert result.losses.df["step"].tolist() == [1, 2, 3]
    assert load_checkpoint(result.checkpoint).step == 3


def test_runs_are_reproducible(tmp_path, config):
    first = train(config, tmp_path / "a")
    second = train(config, tmp_path / "b")

    assert first.losses.df["loss"].tolist() == second.losses.df["loss"].tolist()
    for name, tensor in first.network.params.items():
        assert np.array_equal(second.network.params[name].data, tensor.data)


def test_resume_appends_to_the_loss_log(tmp_path, config):
    first = train(config, tmp_path)
    longer = with_overrides(config, {"train.steps": 5})

    result = train(longer, tmp_path, resume=load_checkpoint(first.checkpoint))

    assert result.step == 5
    assert read_csv(tmp_path / LOSS_LOG)["step"].tolist() == [1, 2, 3, 4, 5]
    assert load_checkpoint(tmp_path / CHECKPOINT).step == 5


def test_conditional_model_needs_every_class(tmp_path, config):
    config = with_overrides(config, {"model": {"preset": "spvd-tiny", "num_classes": 2}})

    with pytest.raises(ConfigError, match="The data has 5 classes, the model 2"):
        train(config, tmp_path)
