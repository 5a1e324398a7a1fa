"""Named-tensor container files.

Layout (all integers little-endian uint64, all values IEEE-754 float64)::

    magic bytes
    tensor count
    repeated: name length, UTF-8 name, element count, elements

Arrays are stored flat; a tensor named ``<name>.shape`` records the shape of
``<name>`` when it is not 1-D. Non-numeric metadata is stored as the UTF-8
bytes of a JSON document, one byte per element.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"ANNEALVI01"
DATASET_MAGIC = b"DATASET01"


class FormatError(ValueError):
    pass


def encode_json(obj) -> np.ndarray:
    data = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return np.frombuffer(data, dtype=np.uint8).astype(np.float64)


def decode_json(arr: np.ndarray):
    return json.loads(np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8"))


def dumps(magic: bytes, tensors: dict[str, np.ndarray]) -> bytes:
    parts = [magic]
    flat: dict[str, np.ndarray] = {}
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        flat[name] = arr.ravel()
        if arr.ndim != 1:
            flat[name + ".shape"] = np.asarray(arr.shape, dtype="<f8")
    parts.append(struct.pack("<Q", len(flat)))
    for name, arr in flat.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<Q", arr.size))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def loads(magic: bytes, data: bytes) -> dict[str, np.ndarray]:
    if data[: len(magic)] != magic:
        raise FormatError(f"bad magic: expected {magic!r}")
    pos = len(magic)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated file at byte {pos}")
        chunk = data[pos: pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<Q", take(8))
    flat = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (size,) = struct.unpack("<Q", take(8))
        if size > (len(data) - pos) // 8:
            raise FormatError(f"tensor {name!r} overruns file at byte {pos}")
        flat[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
    if pos != len(data):
        raise FormatError(f"trailing bytes after byte {pos}")
    out = {}
    for name, arr in flat.items():
        if name.endswith(".shape"):
            continue
        shape = flat.get(name + ".shape")
        out[name] = arr.reshape(tuple(int(s) for s in shape)) if shape is not None else arr
    return out


def save(path, magic: bytes, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(magic, tensors))


def load(path, magic: bytes) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(magic, fh.read())
