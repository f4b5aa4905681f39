""" Run configuration documents and seeded random streams.

A run configuration is a JSON document with the sections data, model, schedule, train, sample
and task. Every key is optional; missing keys take the defaults below and unknown keys are
rejected. Example:

    {
        "data": {"kind": ["chairoid", "tableoid"], "n_shapes": 8, "n_points": 256},
        "model": {"preset": "spvd-tiny", "num_classes": 5},
        "schedule": {"T": 100},
        "train": {"steps": 3000, "batch": 8, "lr": 0.002, "seed": 7},
        "sample": {"rule": "ddim", "steps": 50, "count": 32},
        "task": {"completion": {"m": 3}}
    }

The task section is "none", {"completion": {"m": ...}} or {"superres": {"k_in": ...,
"n_out": ...}}.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from spvd.data.transforms import NORMALIZATION_MODES
from spvd.diffusion.schedule import NoiseSchedule, make_linear_schedule
from spvd.errors import ConfigError
from spvd.network.config import NetworkConfig
from spvd.spvd_types import JSON, SamplingRule

STREAMS = ("init", "data", "noise", "mask", "sample")
TASKS = ("none", "completion", "superres")
RESOLVED_CONFIG = "resolved_config.json"


@dataclass
class DataConfig:
    kind: Union[str, list[str]] = "chairoid"
    path: Optional[str] = None
    n_shapes: int = 8
    n_points: int = 256
    normalization: str = "per_shape_unit_box"


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_variant: str = "posterior"


@dataclass
class TrainConfig:
    steps: int = 3000
    batch: int = 8
    lr: float = 2e-3
    one_cycle: bool = True
    seed: int = 0
    log_every: int = 100
    save_every: int = 0


@dataclass
class SampleConfig:
    rule: str = "ddim"
    steps: int = 100
    count: int = 32
    stochastic: bool = True


@dataclass
class TaskConfig:
    kind: str = "none"
    m: int = 3
    k_in: int = 512
    n_out: int = 2048

    @property
    def json(self) -> Union[str, JSON]:
        if self.kind == "completion":
            return {"completion": {"m": self.m}}
        if self.kind == "superres":
            return {"superres": {"k_in": self.k_in, "n_out": self.n_out}}
        return "none"

    @staticmethod
    def from_json(data: Union[str, JSON, None]) -> "TaskConfig":
        if data is None or data == "none":
            return TaskConfig()
        if isinstance(data, str):
            if data not in TASKS:
                raise ConfigError(f"Unknown task {data}; expected one of {', '.join(TASKS)}.")
            return TaskConfig(kind=data)
        if not isinstance(data, dict) or len(data) != 1:
            raise ConfigError(f"task must be 'none' or a single-key object, got {data}.")
        kind, options = next(iter(data.items()))
        if kind not in TASKS[1:]:
            raise ConfigError(f"Unknown task {kind}; expected completion or superres.")
        allowed = {"completion": ("m",), "superres": ("k_in", "n_out")}[kind]
        options = options or {}
        unknown = set(options) - set(allowed)
        if unknown:
            raise ConfigError(f"Unknown {kind} keys {sorted(unknown)}.")
        return TaskConfig(kind=kind, **{key: int(value) for key, value in options.items()})


def _section(cls: Any, data: Optional[JSON], name: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"Section {name} must be an object, got {type(data).__name__}.")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"Unknown keys in section {name}: {sorted(unknown)}.")
    return cls(**data)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: JSON = field(default_factory=lambda: {"preset": "spvd-tiny"})
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    task: TaskConfig = field(default_factory=TaskConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def network_config(self) -> NetworkConfig:
        return NetworkConfig.from_json(self.model)

    def noise_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return make_linear_schedule(s.T, s.beta_start, s.beta_end, s.sigma_variant)

    def validate(self) -> None:
        """Check the values that no constructor checks on its own.

        Raises:
            ConfigError: If a count is out of range or the sampling settings do not fit the
                schedule.
        """

        if self.train.steps < 0 or self.train.batch < 1 or self.train.lr <= 0:
            raise ConfigError("train.steps must be >= 0, train.batch >= 1 and train.lr > 0.")
        if self.train.log_every < 1 or self.train.save_every < 0:
            raise ConfigError("train.log_every must be >= 1 and train.save_every >= 0.")
        if self.data.n_shapes < 1 or self.data.n_points < 1:
            raise ConfigError("data.n_shapes and data.n_points must be positive.")
        if self.sample.count < 1 or not 1 <= self.sample.steps <= self.schedule.T:
            raise ConfigError(
                f"sample.count must be positive and sample.steps within [1, {self.schedule.T}]."
            )
        if self.sample.rule not in [r.value for r in SamplingRule]:
            raise ConfigError(f"Unknown sampling rule {self.sample.rule}.")
        if self.data.normalization not in NORMALIZATION_MODES:
            raise ConfigError(f"Unknown normalization {self.data.normalization}.")
        if self.task.kind == "completion" and self.task.m < 1:
            raise ConfigError("task completion.m must be at least 1.")
        if self.task.kind == "superres" and not 1 <= self.task.k_in < self.task.n_out:
            raise ConfigError("task superres needs 1 <= k_in < n_out.")
        self.network_config().validate()
        self.noise_schedule()

    @property
    def json(self) -> JSON:
        return {
            "data": asdict(self.data),
            "model": dict(self.model),
            "schedule": asdict(self.schedule),
            "train": asdict(self.train),
            "sample": asdict(self.sample),
            "task": self.task.json,
        }

    @staticmethod
    def from_json(data: JSON) -> "RunConfig":
        """Parse a run configuration document.

        Raises:
            ConfigError: For unknown sections or keys, or invalid values.
        """

        if not isinstance(data, dict):
            raise ConfigError("A run configuration must be a JSON object.")
        sections = {"data", "model", "schedule", "train", "sample", "task"}
        unknown = set(data) - sections
        if unknown:
            raise ConfigError(f"Unknown configuration sections {sorted(unknown)}.")
        try:
            config = RunConfig(
                data=_section(DataConfig, data.get("data"), "data"),
                model=dict(data.get("model") or {"preset": "spvd-tiny"}),
                schedule=_section(ScheduleConfig, data.get("schedule"), "schedule"),
                train=_section(TrainConfig, data.get("train"), "train"),
                sample=_section(SampleConfig, data.get("sample"), "sample"),
                task=TaskConfig.from_json(data.get("task")),
            )
            config.validate()
        except TypeError as error:
            raise ConfigError(f"Invalid configuration value: {error}")
        return config


def load_run_config(path: Union[str, Path, None]) -> RunConfig:
    """Read a run configuration file, or return the defaults when no path is given.

    Raises:
        ConfigError: If the file is not valid JSON or fails validation.
    """

    if path is None:
        config = RunConfig()
        config.validate()
        return config
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except json.JSONDecodeError as error:
        raise ConfigError(f"{path} is not valid JSON: {error}")
    return RunConfig.from_json(document)


def with_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Apply overrides such as {"train.steps": 10} and re-validate.

    A key without a dot replaces a whole section. None values are ignored.

    Raises:
        ConfigError: If a key does not name a setting.
    """

    document = config.json
    for key, value in overrides.items():
        if value is None:
            continue
        if "." not in key and key in document:
            document[key] = value
            continue
        section, _, name = key.partition(".")
        if section not in document or not name or not isinstance(document[section], dict):
            raise ConfigError(f"Unknown setting {key}.")
        document[section][name] = value
    return RunConfig.from_json(document)


def write_resolved_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    """Write the full configuration of a run next to its outputs."""

    path = Path(out_dir) / RESOLVED_CONFIG
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config.json, f, indent=2)
    logging.info(f"Wrote {path}")
    return path


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """The generator of one named random stream of a run.

    Streams of different names are independent; equal (seed, name) pairs give identical
    streams.

    Raises:
        ConfigError: For an unknown stream name.
    """

    if name not in STREAMS:
        raise ConfigError(f"Unknown random stream {name}; expected one of {', '.join(STREAMS)}.")
    return np.random.default_rng([int(seed), STREAMS.index(name)])
