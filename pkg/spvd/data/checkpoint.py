""" Binary checkpoints of a network and its noise schedule.

Layout (all integers little-endian):

    4 bytes   magic b"SPVD"
    u32       format version (1)
    u64       header length H
    H bytes   UTF-8 JSON header
    payload   float32 parameter values, concatenated in header order

The header holds the network configuration, the schedule configuration, the training step,
the seed, and for every parameter its name, shape, byte offset within the payload and value
count. Files are written to a temporary file in the target directory and renamed into place.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from spvd.diffusion.schedule import NoiseSchedule
from spvd.errors import CheckpointError, ContractError
from spvd.network.config import NetworkConfig
from spvd.network.spvd_unet import Network, build_network
from spvd.spvd_types import JSON

MAGIC = b"SPVD"
VERSION = 1
PREFIX = struct.Struct("<4sIQ")
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    network: Network
    schedule: NoiseSchedule
    step: int
    seed: int
    header: JSON


def save_checkpoint(
    net: Network,
    sched: NoiseSchedule,
    step: int,
    path: Union[str, Path],
    seed: int = 0,
) -> None:
    """Write a checkpoint atomically.

    Parameters
    ----------
    net : Network
        Network whose parameters are stored as float32.
    sched : NoiseSchedule
        Schedule the network was trained with.
    step : int
        Number of completed training steps.
    path : str or Path
        Destination file.
    seed : int
        Run seed.
    """

    entries = []
    blobs = []
    offset = 0
    for name, tensor in net.params.items():
        values = np.ascontiguousarray(tensor.data, dtype=PAYLOAD_DTYPE)
        entries.append(
            {"name": name, "shape": list(values.shape), "offset": offset, "count": values.size}
        )
        blobs.append(values.tobytes())
        offset += values.nbytes

    header = {
        "version": VERSION,
        "network": net.config.json,
        "schedule": sched.json,
        "step": int(step),
        "seed": int(seed),
        "params": entries,
        "payload_bytes": offset,
    }
    encoded = json.dumps(header).encode("utf-8")

    path = Path(path)
    fd, temp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(PREFIX.pack(MAGIC, VERSION, len(encoded)))
            f.write(encoded)
            for blob in blobs:
                f.write(blob)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.remove(temp)
        raise
    logging.info(f"Wrote checkpoint {path}: step {step}, {len(entries)} tensors, {offset} bytes")


def read_header(path: Union[str, Path]) -> tuple[JSON, bytes]:
    """Validate the framing of a checkpoint and return (header, payload).

    Raises:
        CheckpointError: For a bad magic, an unsupported version, a truncated file, an
            unreadable header, or offsets that do not match the payload.
    """

    name = str(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < PREFIX.size:
        raise CheckpointError(name, "file is truncated before the header")
    magic, version, length = PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(name, f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(name, f"unsupported format version {version}")
    start = PREFIX.size + length
    if start > len(raw):
        raise CheckpointError(name, "file is truncated inside the header")
    try:
        header = json.loads(raw[PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointError(name, f"header is not valid JSON: {error}")

    payload = raw[start:]
    expected = header.get("payload_bytes")
    if expected is None or len(payload) < expected:
        raise CheckpointError(name, f"payload is truncated: {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise CheckpointError(name, f"{len(payload) - expected} unexpected bytes after payload")

    offset = 0
    for entry in header.get("params", []):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if entry["offset"] != offset or entry["count"] != count:
            raise CheckpointError(name, f"offset mismatch at parameter {entry['name']}")
        offset += count * PAYLOAD_DTYPE.itemsize
    if offset != expected:
        raise CheckpointError(name, f"offset mismatch: parameters cover {offset} of {expected}")
    logging.debug(f"Checkpoint {name}: header {length} bytes, payload {expected} bytes")
    return header, payload


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Rebuild the network and schedule stored in a checkpoint.

    Raises:
        CheckpointError: If the file is corrupt, or its parameters do not match the network
            its configuration describes.
    """

    header, payload = read_header(path)
    try:
        config = NetworkConfig.from_json(header["network"])
        schedule = NoiseSchedule.from_json(header["schedule"])
    except (KeyError, TypeError) as error:
        raise CheckpointError(str(path), f"header lacks a configuration entry: {error}")
    # Initial values are overwritten below.
    net = build_network(config, np.random.default_rng(0))

    state = {}
    for entry in header["params"]:
        values = np.frombuffer(
            payload, dtype=PAYLOAD_DTYPE, count=entry["count"], offset=entry["offset"]
        )
        state[entry["name"]] = values.reshape(entry["shape"])
    try:
        net.params.load_state(state)
    except ContractError as error:
        raise CheckpointError(str(path), str(error))
    return Checkpoint(net, schedule, int(header["step"]), int(header.get("seed", 0)), header)
