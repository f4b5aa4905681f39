""" Declarative network configurations and the architecture presets.

A network is a stem, an ordered list of down blocks, an optional mid block and an ordered list
of up blocks. Each down block pushes its pre-downsampling output as a skip connection; up
blocks pop them in reverse order, so the number of down and up blocks must agree and every
pop must happen at the resolution level where the skip was pushed. A block flagged
`project_to_points` ends one point-voxel block: its voxel output is interpolated back to the
points and the next block re-voxelizes the fused point features.

Example: a small custom network

    config = NetworkConfig(
        stem=BlockSpec(16),
        down=(BlockSpec(16, resample=Resample.DOWN), BlockSpec(32, project_to_points=True)),
        up=(BlockSpec(32, resample=Resample.UP), BlockSpec(16, project_to_points=True)),
    )
    config.validate()
"""

from dataclasses import asdict, dataclass, replace
from typing import Any, Optional

from spvd.errors import ConfigError
from spvd.spvd_types import JSON, Resample

WIDEN_AT = ("first_conv", "downsample")


@dataclass(frozen=True)
class BlockSpec:
    feature_dim: int
    project_to_points: bool = False
    resample: Resample = Resample.NONE
    use_attention: bool = False

    @property
    def json(self) -> JSON:
        data = asdict(self)
        data["resample"] = self.resample.value
        return data

    @staticmethod
    def from_json(data: JSON) -> "BlockSpec":
        unknown = set(data) - {"feature_dim", "project_to_points", "resample", "use_attention"}
        if unknown:
            raise ConfigError(f"Unknown block keys {sorted(unknown)}.")
        try:
            return BlockSpec(
                feature_dim=int(data["feature_dim"]),
                project_to_points=bool(data.get("project_to_points", False)),
                resample=Resample(data.get("resample", "none")),
                use_attention=bool(data.get("use_attention", False)),
            )
        except (KeyError, ValueError) as error:
            raise ConfigError(f"Invalid block specification {data}: {error}")


@dataclass(frozen=True)
class NetworkConfig:
    stem: BlockSpec
    down: tuple[BlockSpec, ...]
    up: tuple[BlockSpec, ...]
    mid: Optional[BlockSpec] = None
    base_resolution: int = 32
    time_embed_dim: int = 32
    num_classes: int = 0
    in_channels: int = 3
    attention_heads: int = 4
    widen_at: str = "first_conv"
    preset: str = "custom"

    def blocks(self) -> list[tuple[str, str, BlockSpec]]:
        """(name, kind, spec) of every block in execution order."""

        blocks = [("stem", "stem", self.stem)]
        blocks += [(f"down{i + 1}", "down", spec) for i, spec in enumerate(self.down)]
        if self.mid is not None:
            blocks.append(("mid", "mid", self.mid))
        blocks += [(f"up{i + 1}", "up", spec) for i, spec in enumerate(self.up)]
        return blocks

    @property
    def num_levels(self) -> int:
        return sum(spec.resample == Resample.DOWN for spec in self.down) + 1

    def validate(self) -> None:
        """Check the block table.

        Raises:
            ConfigError: If resampling flags do not pair off, skips would be consumed at
                the wrong level, the last block does not project to points, or a scalar
                setting is out of range.
        """

        if self.widen_at not in WIDEN_AT:
            raise ConfigError(f"widen_at must be one of {WIDEN_AT}, got {self.widen_at}.")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}.")
        if self.num_classes < 0 or self.in_channels < 1 or self.attention_heads < 1:
            raise ConfigError("num_classes, in_channels and attention_heads are out of range.")
        if not self.up or len(self.down) != len(self.up):
            raise ConfigError(
                f"{len(self.down)} down blocks and {len(self.up)} up blocks do not pair off."
            )

        allowed = {
            "stem": (Resample.NONE,),
            "mid": (Resample.NONE,),
            "down": (Resample.DOWN, Resample.NONE),
            "up": (Resample.UP, Resample.NONE),
        }
        level = 0
        skips: list[int] = []
        for name, kind, spec in self.blocks():
            if spec.feature_dim < 1:
                raise ConfigError(f"{name}: feature_dim must be positive.")
            if spec.resample not in allowed[kind]:
                raise ConfigError(f"{name}: a {kind} block cannot resample {spec.resample.value}.")
            if spec.use_attention and spec.feature_dim % self.attention_heads:
                raise ConfigError(
                    f"{name}: {spec.feature_dim} features do not split into "
                    f"{self.attention_heads} heads."
                )
            if kind == "down":
                skips.append(level)
                level += spec.resample == Resample.DOWN
            elif kind == "up":
                if skips.pop() != level:
                    raise ConfigError(f"{name}: skip connection taken at a different level.")
                level -= spec.resample == Resample.UP
                if level < 0:
                    raise ConfigError(f"{name}: more upsampling than downsampling.")
        if level != 0:
            raise ConfigError("Down and up sampling flags do not return to the input stride.")
        if not self.blocks()[-1][2].project_to_points:
            raise ConfigError("The last block must project its features to the points.")
        factor = 2 ** (self.num_levels - 1)
        if self.base_resolution < 2 or self.base_resolution % factor:
            raise ConfigError(
                f"base_resolution {self.base_resolution} does not support "
                f"{self.num_levels - 1} downsampling steps."
            )

    @property
    def json(self) -> JSON:
        return {
            "preset": self.preset,
            "stem": self.stem.json,
            "down": [spec.json for spec in self.down],
            "mid": None if self.mid is None else self.mid.json,
            "up": [spec.json for spec in self.up],
            "base_resolution": self.base_resolution,
            "time_embed_dim": self.time_embed_dim,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "attention_heads": self.attention_heads,
            "widen_at": self.widen_at,
        }

    @staticmethod
    def from_json(data: JSON) -> "NetworkConfig":
        """Parse an explicit block table, or a preset name with scalar overrides.

        Raises:
            ConfigError: For unknown keys or an invalid table.
        """

        scalars = {
            "base_resolution",
            "time_embed_dim",
            "num_classes",
            "in_channels",
            "attention_heads",
            "widen_at",
        }
        unknown = set(data) - scalars - {"preset", "stem", "down", "mid", "up"}
        if unknown:
            raise ConfigError(f"Unknown model keys {sorted(unknown)}.")
        overrides: dict[str, Any] = {key: data[key] for key in scalars if key in data}

        if "stem" not in data:
            return preset_config(data.get("preset", "spvd-tiny"), **overrides)
        mid = data.get("mid")
        config = NetworkConfig(
            stem=BlockSpec.from_json(data["stem"]),
            down=tuple(BlockSpec.from_json(spec) for spec in data.get("down", [])),
            mid=None if mid is None else BlockSpec.from_json(mid),
            up=tuple(BlockSpec.from_json(spec) for spec in data.get("up", [])),
            preset=data.get("preset", "custom"),
            **overrides,
        )
        config.validate()
        return config


def _table(dims: str, project: str, resample: str, attention: str) -> list[BlockSpec]:
    """Blocks from whitespace separated table rows; "y" marks a set flag, "d"/"u" resampling."""

    modes = {"-": Resample.NONE, "d": Resample.DOWN, "u": Resample.UP}
    return [
        BlockSpec(int(d), p == "y", modes[r], a == "y")
        for d, p, r, a in zip(dims.split(), project.split(), resample.split(), attention.split())
    ]


def _preset(
    name: str, blocks: list[BlockSpec], n_down: int, has_mid: bool, **kwargs: Any
) -> NetworkConfig:
    down = blocks[1 : 1 + n_down]
    rest = blocks[1 + n_down :]
    return NetworkConfig(
        stem=blocks[0],
        down=tuple(down),
        mid=rest[0] if has_mid else None,
        up=tuple(rest[1:] if has_mid else rest),
        preset=name,
        **kwargs,
    )


PRESETS: dict[str, NetworkConfig] = {
    "spvd-tiny": _preset(
        "spvd-tiny",
        _table(
            "16 16 32 32 32 16",
            "-  -  y  -  -  y",
            "-  d  -  -  u  -",
            "-  -  -  y  -  -",
        ),
        n_down=2,
        has_mid=True,
        time_embed_dim=32,
    ),
    "spvd-s": _preset(
        "spvd-s",
        _table(
            "32 32 64 128 256 256 256 128 64 32",
            "-  -  -  -   -   -   -   -   -  y",
            "-  d  d  d   -   -   u   u   u  -",
            "-  -  -  -   y   -   y   -   -  -",
        ),
        n_down=4,
        has_mid=True,
        time_embed_dim=128,
    ),
    "spvd-m": _preset(
        "spvd-m",
        _table(
            "32 64 128 192 192 256 256 192 128 64 32",
            "y  -  -   -   -   y   -   y   -   -  y",
            "-  d  d   d   d   -   u   u   u   u  -",
            "-  -  -   -   y   y   y   y   -   -  -",
        ),
        n_down=5,
        has_mid=False,
        time_embed_dim=128,
        widen_at="downsample",
    ),
    "spvd-l": _preset(
        "spvd-l",
        _table(
            "64 128 192 256 384 384 384 256 192 128 64",
            "y  -   -   -   -   y   -   y   -   -   y",
            "-  d   d   d   d   -   u   u   u   u   -",
            "-  -   -   -   y   y   y   y   -   -   -",
        ),
        n_down=5,
        has_mid=False,
        time_embed_dim=128,
        widen_at="downsample",
    ),
}


def preset_config(name: str, **overrides: Any) -> NetworkConfig:
    """Return a preset, optionally with scalar settings replaced.

    Raises:
        ConfigError: If the preset is unknown or the overrides make it invalid.
    """

    if name not in PRESETS:
        raise ConfigError(f"Unknown preset {name}; choose one of {sorted(PRESETS)}.")
    config = replace(PRESETS[name], **overrides) if overrides else PRESETS[name]
    config.validate()
    return config


def scaled_config(config: NetworkConfig, factor: int) -> NetworkConfig:
    """The same block table with every feature dimension multiplied by `factor`."""

    def scale(spec: BlockSpec) -> BlockSpec:
        return replace(spec, feature_dim=spec.feature_dim * factor)

    return replace(
        config,
        stem=scale(config.stem),
        down=tuple(scale(s) for s in config.down),
        mid=None if config.mid is None else scale(config.mid),
        up=tuple(scale(s) for s in config.up),
    )
