"""On-disk checkpoint format.

Layout::

    ERASEBENCH-CKPT-v1\\n
    <header: one line of JSON>\\n
    <payload: little-endian float64 values>

The header holds ``kind``, ``hyper``, ``shape``, ``rng_state``,
``provenance``, the parameter ``segments`` as ``[name, offset, length]``
and the ``tables`` as ``[name, shape]``. The payload is every parameter
segment in header order followed by every table in header order. Floats in
the header are written with ``repr`` precision, so a save/load/save cycle is
byte-identical.
"""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

import numpy as np

from ..core_math import ParamVector
from ..models.base import Checkpoint

MAGIC = b"ERASEBENCH-CKPT-v1"


class CheckpointError(ValueError):
    pass


class ProvenanceWarning(UserWarning):
    pass


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "kind": ckpt.kind,
        "hyper": ckpt.hyper,
        "shape": ckpt.shape,
        "rng_state": ckpt.rng_state,
        "provenance": ckpt.provenance,
        "segments": [[n, int(o), int(l)] for n, o, l in ckpt.params.segments],
        "tables": [[name, list(np.shape(arr))] for name, arr in ckpt.tables.items()],
    }
    parts = [MAGIC, b"\n", json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"), b"\n"]
    for name, offset, length in ckpt.params.segments:
        parts.append(np.ascontiguousarray(ckpt.params.values[offset:offset + length], dtype="<f8").tobytes())
    for arr in ckpt.tables.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt))
    return path


def parse_checkpoint(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC + b"\n"):
        raise CheckpointError("not an erasebench checkpoint (bad magic string)")
    rest = data[len(MAGIC) + 1:]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(rest[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    payload = memoryview(rest[nl + 1:])

    segments = [(str(n), int(o), int(l)) for n, o, l in header["segments"]]
    total = sum(l for _, _, l in segments)
    values = np.zeros(total, dtype=np.float64)
    pos = 0
    for name, offset, length in segments:
        nbytes = 8 * length
        if pos + nbytes > len(payload):
            raise CheckpointError(f"truncated payload at segment {name}")
        values[offset:offset + length] = np.frombuffer(payload[pos:pos + nbytes], dtype="<f8")
        pos += nbytes
    tables = {}
    for name, shape in header["tables"]:
        count = math.prod(shape) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(payload):
            raise CheckpointError(f"truncated payload at segment {name}")
        tables[name] = np.frombuffer(payload[pos:pos + nbytes], dtype="<f8").reshape(shape).copy()
        pos += nbytes
    if pos != len(payload):
        raise CheckpointError(f"payload length mismatch: {len(payload) - pos} unexpected trailing bytes")
    try:
        params = ParamVector(values, segments)
    except ValueError as exc:
        raise CheckpointError(f"segment table does not match payload: {exc}") from None
    return Checkpoint(
        kind=header["kind"],
        hyper=header["hyper"],
        params=params,
        tables=tables,
        rng_state=header["rng_state"],
        provenance=header["provenance"],
        shape=header["shape"],
    )


def load_checkpoint(path, dataset=None) -> Checkpoint:
    """Read a checkpoint. A dataset whose digest differs from the recorded one only triggers a warning.

    The recorded digest is ``current_train`` for unlearned checkpoints (the
    retain set they now correspond to) and ``trained_on`` otherwise.
    """
    ckpt = parse_checkpoint(Path(path).read_bytes())
    if dataset is not None:
        trained_on = ckpt.provenance.get("current_train") or ckpt.provenance.get("trained_on")
        if trained_on and trained_on != dataset.digest():
            warnings.warn(
                f"checkpoint {Path(path).name} was trained on dataset {trained_on[:12]}, not {dataset.digest()[:12]}",
                ProvenanceWarning,
                stacklevel=2,
            )
    return ckpt


def checkpoint_io(mode: str, path, ckpt: Checkpoint | None = None, dataset=None) -> Checkpoint:
    if mode == "save":
        if ckpt is None:
            raise ValueError("save needs a checkpoint")
        save_checkpoint(ckpt, path)
        return ckpt
    if mode == "load":
        return load_checkpoint(path, dataset)
    raise ValueError(f"mode must be 'save' or 'load', not {mode!r}")
