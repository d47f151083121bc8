"""Parameter checkpoints: a text manifest plus a little-endian tensor blob.

Manifest layout::

    eqnio-checkpoint 1
    config <key>=<value>          (zero or more)
    tensor <name> <dtype> <d0,d1,..> <offset> <nbytes>
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

FORMAT = "eqnio-checkpoint"
VERSION = 1
MANIFEST, BLOB = "model.manifest", "model.bin"


class CheckpointError(ValueError):
    pass


def save_checkpoint(directory, tensors: dict, config: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{FORMAT} {VERSION}"]
    for key in sorted(config or {}):
        value = str(config[key])
        if "\n" in value or "=" in key:
            raise CheckpointError(f"bad config entry {key!r}")
        lines.append(f"config {key}={value}")
    offset = 0
    chunks = []
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"tensor {name} {arr.dtype.str} {shape} {offset} {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    tmp = directory / (BLOB + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, directory / BLOB)
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[dict, dict]:
    """Returns ``(tensors, config)``; config values stay strings."""
    directory = Path(directory)
    try:
        lines = (directory / MANIFEST).read_text().splitlines()
        blob = (directory / BLOB).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint in {directory}: {exc}") from exc
    if not lines or lines[0].split() != [FORMAT, str(VERSION)]:
        raise CheckpointError(f"unsupported checkpoint header {lines[:1]}")
    tensors, config = {}, {}
    for line in lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, _, value = rest.partition("=")
            config[key] = value
        elif kind == "tensor":
            name, dtype, shape, offset, nbytes = rest.split()
            offset, nbytes = int(offset), int(nbytes)
            if offset + nbytes > len(blob):
                raise CheckpointError(f"tensor {name} runs past end of blob")
            dims = () if shape == "-" else tuple(int(d) for d in shape.split(","))
            arr = np.frombuffer(blob, dtype=np.dtype(dtype), count=nbytes // np.dtype(dtype).itemsize, offset=offset)
            tensors[name] = arr.reshape(dims).astype(np.dtype(dtype).newbyteorder("="))
        elif line.strip():
            raise CheckpointError(f"unrecognized manifest line: {line!r}")
    return tensors, config
