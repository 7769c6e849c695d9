"""Binary field files and key=value manifests.

Field layout (all little-endian)::

    b"HOM3" | version u32 | kind u8 (0 vertex, 1 edge-vector) | radius i32 | float64 payload

The payload lists vertices lexicographically with x1 fastest.  Edge-vector
fields store component 1 for every vertex, then component 2, then 3.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .lattice import Box, box_of

MAGIC = b"HOM3"
VERSION = 1
VERTEX, EDGE = 0, 1
_HEADER = struct.Struct("<4sIBi")


class FieldFormatError(ValueError):
    pass


def to_bytes(field: np.ndarray) -> bytes:
    box = box_of(field)
    if field.ndim == 3:
        kind = VERTEX
        payload = np.ravel(field, order="F")
    elif field.ndim == 4 and field.shape[0] == 3:
        kind = EDGE
        payload = np.concatenate([np.ravel(c, order="F") for c in field])
    else:
        raise FieldFormatError(f"cannot serialize array of shape {field.shape}")
    header = _HEADER.pack(MAGIC, VERSION, kind, box.radius)
    return header + np.ascontiguousarray(payload, dtype="<f8").tobytes()


def from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FieldFormatError("truncated header")
    magic, version, kind, radius = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FieldFormatError(f"unsupported version {version}")
    box = Box(radius)
    ncomp = {VERTEX: 1, EDGE: 3}.get(kind)
    if ncomp is None:
        raise FieldFormatError(f"unknown field kind {kind}")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != ncomp * box.num_vertices:
        raise FieldFormatError(f"payload has {payload.size} values, expected {ncomp * box.num_vertices}")
    parts = [p.reshape(box.shape, order="F") for p in np.split(payload.astype(np.float64), ncomp)]
    return parts[0].copy() if kind == VERTEX else np.stack(parts)


def write_field(path, field: np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(field))


def read_field(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k}={_fmt(v)}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(float(x)) if isinstance(x, (float, np.floating)) else str(x)
                        for x in np.ravel(v).tolist())
    return str(v)
