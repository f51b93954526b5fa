"""FFLD field files and charge-set JSON."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .field import ChargeSet, GridSpec, VectorField

MAGIC = b"FFLD"
VERSION = 1
_HEADER = struct.Struct("<4sHHId")
MAX_DIM = 4


class FormatError(ValueError):
    """Malformed input; ``location`` is a byte offset or a JSON path."""

    def __init__(self, message: str, location):
        self.location = location
        where = f"byte offset {location}" if isinstance(location, int) else f"JSON path {location}"
        super().__init__(f"{message} (at {where})")


def encode_field(V: VectorField) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, V.dim, V.grid.cells_per_axis, float(V.q))
    return header + np.ascontiguousarray(V.values, dtype="<f8").tobytes()


def decode_field(data: bytes, label: str = "file") -> VectorField:
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: {len(data)} bytes, need {_HEADER.size}", len(data))
    magic, version, dim, N, q = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if not 1 <= dim <= MAX_DIM:
        raise FormatError(f"dimension {dim} outside 1..{MAX_DIM}", 6)
    if N < 1:
        raise FormatError("cells_per_axis must be positive", 8)
    if not np.isfinite(q) or q > 1:
        raise FormatError(f"weight exponent q={q} must be finite and <= 1", 12)
    count = N ** dim * dim
    expected = _HEADER.size + 8 * count
    if len(data) != expected:
        raise FormatError(f"body holds {len(data) - _HEADER.size} bytes, expected {8 * count}",
                          min(len(data), expected))
    values = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("corrupt field: nonfinite value", _HEADER.size + 8 * int(bad[0]))
    values = values.astype(float).reshape((N,) * dim + (dim,))
    return VectorField(GridSpec(dim, N), values, q=float(q), label=label)


def write_field(path, V: VectorField) -> None:
    Path(path).write_bytes(encode_field(V))


def read_field(path) -> VectorField:
    path = Path(path)
    return decode_field(path.read_bytes(), label=path.name)


def parse_charges(text: str) -> ChargeSet:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(data, list):
        raise FormatError("charge file must be a JSON array", "$")
    pairs = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise FormatError("charge must be an object", f"$[{i}]")
        pos, deg = item.get("pos"), item.get("deg")
        if not isinstance(pos, list) or not all(isinstance(v, (int, float)) for v in pos) or not pos:
            raise FormatError("pos must be a nonempty array of numbers", f"$[{i}].pos")
        if not isinstance(deg, int) or isinstance(deg, bool):
            raise FormatError("deg must be an integer", f"$[{i}].deg")
        pairs.append((pos, deg))
    try:
        return ChargeSet.from_pairs(pairs)
    except ValueError as exc:
        raise FormatError(str(exc), "$") from None


def read_charges(path) -> ChargeSet:
    return parse_charges(Path(path).read_text())


def write_charges(path, charges: ChargeSet) -> None:
    Path(path).write_text(json.dumps(charges.to_json(), indent=1))
