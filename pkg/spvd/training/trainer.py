""" The training loop: task-aware batches, Adam under one-cycle, loss log and checkpoints.

Example: train the tiny network for 10 steps

    config = with_overrides(RunConfig(), {"train.steps": 10, "schedule.T": 100})
    result = train(config, "runs/demo")
    print(result.losses.df.tail())
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pandas import DataFrame, read_csv
from tqdm import tqdm

from spvd.data.checkpoint import Checkpoint, save_checkpoint
from spvd.data.dataset import Dataset, load_manifest
from spvd.data.synthetic import synth_dataset
from spvd.data.transforms import sample_part_masks
from spvd.diffusion.process import training_loss
from spvd.diffusion.schedule import NoiseSchedule
from spvd.errors import ConfigError
from spvd.network.spvd_unet import Network, build_network
from spvd.spvd_types import Data, FloatArray, PointCloudBatch, SampleMask
from spvd.training.optim import Adam, one_cycle_lr
from spvd.training.run_config import DataConfig, RunConfig, TaskConfig, rng_stream

CHECKPOINT = "checkpoint.spvd"
LOSS_LOG = "loss.csv"
LOSS_COLUMNS = ["step", "loss", "lr"]


@dataclass
class TrainResult:
    network: Network
    schedule: NoiseSchedule
    losses: Data
    checkpoint: Path
    step: int


def build_dataset(config: DataConfig, seed: int) -> Dataset:
    """The training shapes: a manifest when `path` is set, otherwise synthetic shapes."""

    if config.path:
        dataset = load_manifest(config.path)
        if dataset.num_points is None:
            raise ConfigError(f"Shapes of {config.path} differ in size; resample them first.")
        return dataset
    return synth_dataset(
        config.kind, config.n_shapes, config.n_points, seed, config.normalization
    )


def task_mask(
    task: TaskConfig, batch: PointCloudBatch, rng: np.random.Generator
) -> tuple[FloatArray, Optional[SampleMask]]:
    """Points and KNOWN/FREE mask of one training batch under the configured task.

    Completion frees between 1 and m parts of every shape. Super-resolution keeps the input
    to output density ratio k_in / n_out: the first round(N k_in / n_out) points of a random
    permutation of every shape are KNOWN.
    """

    points = batch.points
    if task.kind == "completion":
        if batch.part_ids is None:
            raise ConfigError("The completion task needs shapes with part labels.")
        return points, sample_part_masks(batch.part_ids, task.m, rng)
    if task.kind == "superres":
        n = batch.num_points
        k = min(max(1, round(n * task.k_in / task.n_out)), n - 1)
        orders = np.stack([rng.permutation(n) for _ in range(batch.batch_size)])
        points = np.take_along_axis(points, orders[:, :, None], axis=1)
        free = np.ones(points.shape[:2], dtype=bool)
        free[:, :k] = False
        return points, SampleMask(free)
    return points, None


def _write_losses(rows: list[list[float]], path: Path, append: bool) -> Data:
    frame = DataFrame(rows, columns=LOSS_COLUMNS)
    frame["step"] = frame["step"].astype(int)
    if append and path.exists():
        frame.to_csv(path, mode="a", header=False, index=False)
    else:
        frame.to_csv(path, index=False)
    full = read_csv(path)
    return Data({"losses": full.to_dict(orient="records")}, selector="losses")


def train(
    config: RunConfig,
    out_dir: Union[str, Path],
    *,
    resume: Optional[Checkpoint] = None,
    progress: bool = False,
) -> TrainResult:
    """Train a network as configured and write its checkpoint and loss log to `out_dir`.

    `train.steps` is the total number of steps of the run. A resumed run continues from the
    checkpoint's step with the same learning rate schedule and appends to the loss log; Adam
    moments restart from zero.

    Parameters
    ----------
    config : RunConfig
        Validated run configuration.
    out_dir : str or Path
        Output directory, created when missing.
    resume : Checkpoint, optional
        Checkpoint to continue from.
    progress : bool
        Show a progress bar.

    Returns
    -------
    TrainResult

    Raises
    ------
    ConfigError
        If the data does not support the task or the batch settings.
    NumericalError
        If the loss becomes NaN or Inf.
    """

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed
    dataset = build_dataset(config.data, seed)
    data_rng = rng_stream(seed, "data")
    noise_rng = rng_stream(seed, "noise")
    mask_rng = rng_stream(seed, "mask")

    if resume is not None:
        net, sched, start = resume.network, resume.schedule, resume.step
    else:
        net = build_network(config.network_config(), rng_stream(seed, "init"))
        sched = config.noise_schedule()
        start = 0
    conditional = net.config.num_classes > 0
    if conditional and dataset.num_classes > net.config.num_classes:
        raise ConfigError(
            f"The data has {dataset.num_classes} classes, the model {net.config.num_classes}."
        )

    total = config.train.steps
    optimizer = Adam(net.params.tensors(), lr=config.train.lr)
    checkpoint = out / CHECKPOINT
    rows: list[list[float]] = []
    began = time.perf_counter()
    for step in tqdm(range(start, total), disable=not progress, desc="train"):
        replace = config.train.batch > len(dataset)
        indices = data_rng.choice(len(dataset), size=config.train.batch, replace=replace)
        batch = dataset.batch(indices)
        points, mask = task_mask(config.task, batch, mask_rng)
        lr = config.train.lr
        if config.train.one_cycle:
            lr = one_cycle_lr(step, total, lr)

        optimizer.zero_grad()
        loss = training_loss(
            net,
            points,
            sched,
            noise_rng,
            class_ids=batch.class_ids if conditional else None,
            mask=mask,
        )
        loss.backward()
        optimizer.step(lr)
        rows.append([step + 1, loss.item(), lr])

        if (step + 1) % config.train.log_every == 0:
            logging.info(f"step {step + 1}/{total} loss {loss.item():.5f} lr {lr:.3e}")
        if config.train.save_every and (step + 1) % config.train.save_every == 0:
            save_checkpoint(net, sched, step + 1, checkpoint, seed)

    final = max(start, total)
    save_checkpoint(net, sched, final, checkpoint, seed)
    losses = _write_losses(rows, out / LOSS_LOG, append=resume is not None)
    logging.info(
        f"Trained {len(rows)} steps in {time.perf_counter() - began:.1f}s; "
        f"wrote {checkpoint} and {out / LOSS_LOG}"
    )
    return TrainResult(net, sched, losses, checkpoint, final)
