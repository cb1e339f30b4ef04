"""Named-array container files used for checkpoints and feature caches.

Layout (all integers little-endian, arrays row-major float64 ``<f8``):

    line 1   b"NSEDARR1\\n"
    line 2   UTF-8 JSON header followed by b"\\n":
             {"arrays": [{"name", "shape", "dtype", "offset", "nbytes"}, ...],
              "metadata": {...}}
             offsets are relative to the first byte after the header line
    rest     raw array bytes, concatenated in header order

The header is written with sorted keys and no whitespace so identical inputs
produce identical files.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"NSEDARR1\n"


class CheckpointError(ValueError):
    pass


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a sibling temp file and rename; the result gets ordinary umask permissions."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            os.fchmod(fh.fileno(), 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_arrays(arrays: Mapping[str, np.ndarray], metadata: Mapping[str, Any] | None = None) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        raw = data.tobytes(order="C")
        entries.append({"name": name, "shape": list(data.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "metadata": dict(metadata or {})},
                        sort_keys=True, separators=(",", ":"))
    return MAGIC + header.encode("utf-8") + b"\n" + b"".join(blobs)


def decode_arrays(payload: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if not payload.startswith(MAGIC):
        raise CheckpointError("not a named-array file (bad magic)")
    end = payload.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(payload[len(MAGIC):end].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    body = memoryview(payload)[end + 1:]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(body):
            raise CheckpointError(f"array {entry['name']!r} runs past end of file")
        arr = np.frombuffer(body[start:start + nbytes], dtype=entry["dtype"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return arrays, header.get("metadata", {})


def save_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                metadata: Mapping[str, Any] | None = None) -> None:
    atomic_write_bytes(path, encode_arrays(arrays, metadata))


def load_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return decode_arrays(Path(path).read_bytes())
