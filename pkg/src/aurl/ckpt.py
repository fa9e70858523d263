"""Versioned tensor container used for projector and training checkpoints.

Layout::

    AURLCKPT <version>\\n
    <one-line JSON header>\\n
    <payload: every tensor as little-endian float64, header order>

The header lists ``tensors`` as ``[name, shape]`` pairs plus the payload
length and its SHA-256, so truncation and corruption are detected on load.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = b"AURLCKPT"
VERSION = 1


def write_container(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    arrays = [np.ascontiguousarray(t, dtype="<f8") for t in tensors.values()]
    payload = b"".join(a.tobytes() for a in arrays)
    header = dict(meta)
    header["tensors"] = [[name, list(a.shape)] for name, a in zip(tensors, arrays)]
    header["payload_bytes"] = len(payload)
    header["sha256"] = hashlib.sha256(payload).hexdigest()
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(MAGIC + b" " + str(VERSION).encode() + b"\n" + head + b"\n" + payload)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    if first < 0 or not raw.startswith(MAGIC + b" "):
        raise CorruptFile(f"{path}: not a checkpoint file")
    try:
        version = int(raw[len(MAGIC) + 1:first])
    except ValueError:
        raise CorruptFile(f"{path}: unreadable version field") from None
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(raw[first + 1:second])
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: bad header JSON ({exc})") from None
    payload = raw[second + 1:]
    if len(payload) != header.get("payload_bytes"):
        raise CorruptFile(f"{path}: payload has {len(payload)} bytes, header says {header.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CorruptFile(f"{path}: payload checksum mismatch")
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in header.pop("tensors"):
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + 8 * count]
        tensors[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(payload):
        raise CorruptFile(f"{path}: payload size disagrees with tensor shapes")
    header.pop("payload_bytes")
    header.pop("sha256")
    return header, tensors
