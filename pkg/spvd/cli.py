""" Command line interface.

    spvd train    --config run.json --out runs/demo
    spvd sample   --checkpoint runs/demo/checkpoint.spvd --rule ddim --steps 50 --count 32 --out s/
    spvd complete --checkpoint ... --input chair.ply --m 2 --out chair_completed.ply
    spvd superres --checkpoint ... --input sparse.ply --n-out 2048 --out dense.ply
    spvd eval     --gen samples/ --ref reference/ --runs 3 --out eval/
    spvd inspect  --checkpoint ... | --config run.json

Exit codes: 0 on success, 2 for configuration and usage errors, 3 for every other failure.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from spvd.data.checkpoint import Checkpoint, load_checkpoint
from spvd.data.point_io import load_cloud, load_directory, save_ply
from spvd.data.transforms import denormalize, normalize, random_subset, sample_part_mask
from spvd.diffusion.samplers import ddim_timesteps, sample
from spvd.errors import ConfigError, SpvdError
from spvd.metrics.evaluation import eval_report
from spvd.network.spvd_unet import build_network, param_count
from spvd.spvd_types import PointCloud, SampleMask, SamplingRule
from spvd.training.run_config import (
    RunConfig,
    load_run_config,
    rng_stream,
    with_overrides,
    write_resolved_config,
)
from spvd.training.trainer import train

MANIFEST = "manifest.json"
REPORT = "report.json"


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _settings(pairs: Optional[Sequence[str]]) -> dict[str, Any]:
    overrides = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair}.")
        overrides[key.strip()] = _parse_value(value)
    return overrides


def _resolve(
    args: argparse.Namespace,
    overrides: dict[str, Any],
    checkpoint: Optional[Checkpoint] = None,
) -> RunConfig:
    """The run configuration: file or defaults, then the checkpoint's model, then flags."""

    config = load_run_config(args.config)
    settings: dict[str, Any] = {}
    if checkpoint is not None:
        settings["model"] = checkpoint.network.config.json
        settings["schedule"] = checkpoint.schedule.json
    settings.update(_settings(args.set))
    settings.update(overrides)
    if getattr(args, "seed", None) is not None:
        settings["train.seed"] = args.seed
    return with_overrides(config, settings)


def _load_input(path: str) -> PointCloud:
    if not Path(path).is_file():
        raise ConfigError(f"Input cloud {path} does not exist.")
    return load_cloud(path)


def cmd_train(args: argparse.Namespace) -> int:
    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    config = _resolve(args, {"train.steps": args.steps}, resume)
    write_resolved_config(config, args.out)
    result = train(config, args.out, resume=resume, progress=args.progress)
    df = result.losses.df
    if len(df):
        print(f"step {result.step}: loss {df['loss'].iloc[-1]:.5f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = _resolve(
        args,
        {"sample.rule": args.rule, "sample.steps": args.steps, "sample.count": args.count},
        ckpt,
    )
    net, sched = ckpt.network, ckpt.schedule
    count = config.sample.count
    num_points = args.num_points or config.data.n_points
    class_ids = None
    if args.class_id is not None:
        if not net.config.num_classes:
            raise ConfigError("--class-id needs a class-conditional checkpoint.")
        class_ids = np.full(count, args.class_id, dtype=np.int64)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(config, out)
    rng = rng_stream(config.seed, "sample")
    batch = args.batch or count
    began = time.perf_counter()
    clouds = []
    for start in range(0, count, batch):
        size = min(batch, count - start)
        result = sample(
            net,
            size,
            num_points,
            sched,
            config.sample.rule,
            config.sample.steps,
            rng,
            class_ids=None if class_ids is None else class_ids[start : start + size],
            stochastic=config.sample.stochastic,
            progress=args.progress,
        )
        clouds.extend(result.clouds())
    elapsed = time.perf_counter() - began

    files = []
    for i, cloud in enumerate(clouds):
        path = out / f"sample_{i:04d}.ply"
        save_ply(cloud, path)
        files.append(path.name)
    rule = SamplingRule(config.sample.rule)
    visits = (
        ddim_timesteps(sched.T, config.sample.steps).tolist()
        if rule == SamplingRule.DDIM
        else list(range(sched.T, 0, -1))
    )
    manifest = {
        "checkpoint": str(args.checkpoint),
        "seed": config.seed,
        "rule": rule.value,
        "steps": len(visits),
        "timesteps": visits,
        "count": count,
        "num_points": num_points,
        "class_id": args.class_id,
        "seconds": elapsed,
        "files": files,
    }
    with open(out / MANIFEST, "w") as f:
        json.dump(manifest, f, indent=2)
    logging.info(f"Wrote {count} samples and {out / MANIFEST} ({elapsed:.2f}s)")
    return 0


def _masked_sample(
    args: argparse.Namespace,
    ckpt: Checkpoint,
    config: RunConfig,
    original: PointCloud,
    known: np.ndarray,
    mask: SampleMask,
) -> PointCloud:
    """Sample around KNOWN points given in input coordinates; KNOWN slots keep their values."""

    normalized, center, scale = normalize(PointCloud(known), config.data.normalization)
    class_ids = None
    if original.class_id is not None and ckpt.network.config.num_classes:
        class_ids = np.array([original.class_id])
    generated = sample(
        ckpt.network,
        1,
        len(known),
        ckpt.schedule,
        config.sample.rule,
        config.sample.steps,
        rng_stream(config.seed, "sample"),
        class_ids=class_ids,
        known=(normalized.points[None].astype(np.float64), mask),
        stochastic=config.sample.stochastic,
        progress=args.progress,
    ).clouds()[0]
    restored = denormalize(generated, center, scale).points.astype(np.float32)
    points = np.where(mask.free[0][:, None], restored, known)
    return PointCloud(points, part_ids=original.part_ids, class_id=original.class_id)


def cmd_complete(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = _resolve(args, {"sample.rule": args.rule, "sample.steps": args.steps}, ckpt)
    cloud = _load_input(args.input)
    if cloud.part_ids is None:
        raise ConfigError(f"{args.input} has no part labels (PLY vertex property 'part').")
    write_resolved_config(config, Path(args.out).parent)

    mask = sample_part_mask(cloud.part_ids, args.m, rng_stream(config.seed, "mask"))
    known = np.asarray(cloud.points, dtype=np.float32)
    result = _masked_sample(args, ckpt, config, cloud, known, mask)
    save_ply(result, args.out)
    freed = int(mask.free_counts[0])
    logging.info(f"Completed {freed} of {len(cloud)} points into {args.out}")
    return 0


def cmd_superres(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = _resolve(args, {"sample.rule": args.rule, "sample.steps": args.steps}, ckpt)
    cloud = _load_input(args.input)
    k = args.k_in or len(cloud)
    if args.n_out <= k:
        raise ConfigError(f"--n-out {args.n_out} must exceed the {k} input points.")
    write_resolved_config(config, Path(args.out).parent)

    subset, mask = random_subset(cloud, k, args.n_out, rng_stream(config.seed, "mask"))
    # FREE slots only fix the shape of the target; their values are never read.
    known = np.zeros((args.n_out, 3), dtype=np.float32)
    known[:k] = subset
    known[k:] = subset[np.arange(args.n_out - k) % k]
    result = _masked_sample(args, ckpt, config, PointCloud(subset), known, mask)
    save_ply(result, args.out)
    logging.info(f"Upsampled {k} to {args.n_out} points into {args.out}")
    return 0


def _load_set(directory: str) -> list[np.ndarray]:
    if not Path(directory).is_dir():
        raise ConfigError(f"{directory} is not a readable directory.")
    clouds = load_directory(directory)
    if len(clouds) < 2:
        raise ConfigError(f"{directory} holds {len(clouds)} clouds; evaluation needs 2 or more.")
    return [np.asarray(c.points, dtype=np.float64) for c in clouds]


def cmd_eval(args: argparse.Namespace) -> int:
    gen = _load_set(args.gen)
    ref = _load_set(args.ref)
    seed = args.seed or 0
    report = eval_report(
        gen, ref, runs=args.runs, seed=seed, emd_mode=args.emd_mode, workers=args.workers
    )
    if args.out:
        out = Path(args.out)
        write_resolved_config(_resolve(args, {}), out)
        with open(out / REPORT, "w") as f:
            json.dump(report.json, f, indent=2)
        logging.info(f"Wrote {out / REPORT}")
    print(report.table())
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        net, schedule = ckpt.network, ckpt.schedule.json
        extra = {"step": ckpt.step, "seed": ckpt.seed}
    else:
        config = _resolve(args, {})
        net = build_network(config.network_config(), rng_stream(config.seed, "init"))
        schedule, extra = config.json["schedule"], {}
    document = {
        "network": net.config.json,
        "schedule": schedule,
        "param_count": param_count(net),
        **extra,
    }
    print(json.dumps(document, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spvd", description="Sparse point-voxel diffusion.")
    parser.add_argument("--verbose", "-v", action="store_true", help="log at debug level")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument("--config", help="run configuration JSON")
        sub.add_argument("--seed", type=int, help="run seed (overrides train.seed)")
        sub.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a configuration key, e.g. train.batch=4",
        )
        sub.add_argument("--progress", action="store_true", help="show progress bars")
        return sub

    sub = command("train", "train a network")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--checkpoint", help="checkpoint to resume from")
    sub.add_argument("--steps", type=int, help="total training steps")
    sub.set_defaults(handler=cmd_train)

    def sampling(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--checkpoint", required=True)
        sub.add_argument("--rule", choices=[r.value for r in SamplingRule])
        sub.add_argument("--steps", type=int, help="DDIM steps")

    sub = command("sample", "generate clouds")
    sampling(sub)
    sub.add_argument("--count", type=int)
    sub.add_argument("--num-points", type=int)
    sub.add_argument("--batch", type=int, help="clouds generated at once")
    sub.add_argument("--class-id", type=int)
    sub.add_argument("--out", required=True, help="output directory")
    sub.set_defaults(handler=cmd_sample)

    sub = command("complete", "regenerate removed parts of a labeled cloud")
    sampling(sub)
    sub.add_argument("--input", required=True)
    sub.add_argument("--m", type=int, default=3, help="largest number of parts to regenerate")
    sub.add_argument("--out", required=True, help="output PLY")
    sub.set_defaults(handler=cmd_complete)

    sub = command("superres", "densify a sparse cloud")
    sampling(sub)
    sub.add_argument("--input", required=True)
    sub.add_argument("--n-out", type=int, default=2048)
    sub.add_argument("--k-in", type=int, help="input points to keep (default: all)")
    sub.add_argument("--out", required=True, help="output PLY")
    sub.set_defaults(handler=cmd_superres)

    sub = command("eval", "evaluate generated clouds against reference clouds")
    sub.add_argument("--gen", required=True)
    sub.add_argument("--ref", required=True)
    sub.add_argument("--runs", type=int, default=3)
    sub.add_argument("--emd-mode", choices=["exact", "approx"], default="exact")
    sub.add_argument("--workers", type=int, default=4)
    sub.add_argument("--out", help="directory of the JSON report")
    sub.set_defaults(handler=cmd_eval)

    sub = command("inspect", "print the configuration and parameter count")
    sub.add_argument("--checkpoint")
    sub.set_defaults(handler=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return int(args.handler(args))
    except ConfigError as error:
        logging.error(str(error))
        return 2
    except (SpvdError, OSError) as error:
        logging.error(str(error))
        return 3


if __name__ == "__main__":
    sys.exit(main())
