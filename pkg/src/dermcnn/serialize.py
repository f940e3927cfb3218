"""Binary tensor container used for checkpoints and preprocessed images.

Layout: magic ``b"DCNN"``, format version (u16 LE), header byte length
(u32 LE), UTF-8 JSON header, then the raw payloads as little-endian float32
in the order the header's ``arrays`` list declares them.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import BadMagic, CorruptHeader, TruncatedPayload, VersionMismatch

MAGIC = b"DCNN"
FORMAT_VERSION = 1

_PREFIX = struct.Struct("<4sHI")  # magic, version, header length


def write_tensor_file(path: str | os.PathLike, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays with a JSON header; declaration order is preserved."""
    header = dict(header)
    header["arrays"] = [{"name": name, "shape": list(a.shape)} for name, a in arrays.items()]
    raw_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(raw_header)))
        fh.write(raw_header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_file(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a tensor file back into (header, {name: float32 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not a DCNN tensor file")
    _, version, header_len = _PREFIX.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header_end = _PREFIX.size + header_len
    if len(blob) < header_end:
        raise CorruptHeader(f"{path}: declared header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[_PREFIX.size:header_end].decode("utf-8"))
        declared = [(entry["name"], tuple(int(d) for d in entry["shape"])) for entry in header["arrays"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeader(f"{path}: malformed JSON header ({exc})") from exc

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for name, shape in declared:
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if offset + nbytes > len(blob):
            raise TruncatedPayload(f"{path}: payload for {name!r} is truncated")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CorruptHeader(f"{path}: {len(blob) - offset} trailing bytes after payload")
    return header, arrays
