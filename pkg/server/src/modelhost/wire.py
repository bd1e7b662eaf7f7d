"""Tensor-blob wire format, server-side implementation.

Deliberately independent of the client package: both sides implement the
published byte layout (magic "DTEN", version 1, dtype byte 0 = float32 LE,
rank byte, reserved zero, uint32 LE dims, row-major payload) and the
conformance tests check they agree bit for bit.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DTEN"
VERSION = 1
DTYPE_F32 = 0


class WireError(ValueError):
    pass


def tensor_to_blob(arr: np.ndarray) -> bytes:
    a = np.asarray(arr, dtype="<f4")
    if a.ndim:
        a = np.ascontiguousarray(a)
    if a.ndim > 255:
        raise WireError(f"rank {a.ndim} exceeds the wire limit")
    header = MAGIC + bytes([VERSION, DTYPE_F32, a.ndim, 0])
    dims = b"".join(struct.pack("<I", d) for d in a.shape)
    return header + dims + a.tobytes(order="C")


def blob_to_tensor(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise WireError(f"blob too short ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise WireError(f"bad magic {data[:4]!r}")
    version, dtype, rank, reserved = data[4], data[5], data[6], data[7]
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise WireError(f"unsupported dtype byte {dtype}")
    if reserved != 0:
        raise WireError(f"reserved byte must be zero, got {reserved}")
    if len(data) < 8 + 4 * rank:
        raise WireError("blob truncated inside dims")
    dims = struct.unpack_from("<" + "I" * rank, data, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = 8 + 4 * rank + 4 * count
    if len(data) != expected:
        raise WireError(f"payload length mismatch (expected {expected}, got {len(data)})")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=8 + 4 * rank)
    return flat.reshape(dims).astype(np.float32, copy=True)


def read_frame(data: bytes) -> tuple[dict, bytes]:
    """4-byte LE JSON header length, JSON header, then the blob."""
    if len(data) < 4:
        raise WireError("frame too short for a header length")
    (hlen,) = struct.unpack_from("<I", data)
    if len(data) < 4 + hlen:
        raise WireError("frame truncated inside the JSON header")
    try:
        header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise WireError("frame header must be a JSON object")
    return header, data[4 + hlen :]


def write_frame(header: dict, blob: bytes) -> bytes:
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + blob
