"""Binary containers for datasets and checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"DUALPROX"
    u32       container format version
    u64       header length H
    H bytes   UTF-8 JSON header (sorted keys, compact separators)
    payload   arrays back to back, each little-endian <f8 or <i8

The header's ``arrays`` entry lists ``{name, dtype, shape, offset, nbytes}``
with offsets relative to the payload start, so a reader can fetch a subset
of arrays without touching the rest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DUALPROX"
CONTAINER_VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class ContainerError(ValueError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f8"
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "i8"
    raise ContainerError(f"unsupported dtype {arr.dtype}")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(kind: str, meta: dict, arrays: dict) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = dumps_json({"kind": kind, "meta": meta, "arrays": entries}).encode()
    return b"".join([MAGIC, struct.pack("<IQ", CONTAINER_VERSION, len(header)), header, *chunks])


def write_container(path, kind: str, meta: dict, arrays: dict) -> None:
    Path(path).write_bytes(encode(kind, meta, arrays))


def read_header(fh):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ContainerError("not a dualprox container")
    version, hlen = struct.unpack("<IQ", fh.read(12))
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(fh.read(hlen).decode())
    return header, len(MAGIC) + 12 + hlen


def read_container(path, names=None, kind: str | None = None):
    """Return ``(meta, arrays)``; with ``names`` only those arrays are read."""
    with open(path, "rb") as fh:
        header, start = read_header(fh)
        if kind is not None and header["kind"] != kind:
            raise ContainerError(f"expected a {kind} container, found {header['kind']}")
        arrays = {}
        for entry in header["arrays"]:
            if names is not None and entry["name"] not in names:
                continue
            fh.seek(start + entry["offset"])
            raw = fh.read(entry["nbytes"])
            arrays[entry["name"]] = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()
        if names is not None:
            missing = set(names) - set(arrays)
            if missing:
                raise ContainerError(f"container lacks arrays {sorted(missing)}")
    return header["meta"], arrays


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
