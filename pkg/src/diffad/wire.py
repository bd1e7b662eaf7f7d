"""Binary tensor-blob format and the framed message helpers.

Blob layout (little-endian throughout):
  magic "DTEN" | version byte (1) | dtype byte (0 = float32 LE) |
  rank byte | reserved zero byte | rank x uint32 dims | row-major payload

Framed messages prepend a 4-byte little-endian JSON header length and the
UTF-8 JSON header to a blob; /v1/eps requests and /v1/features responses use
this framing.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ProtocolError

MAGIC = b"DTEN"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sBBBB")


def encode_tensor(arr: np.ndarray) -> bytes:
    """Serialize an array as a float32 tensor blob."""
    a = np.asarray(arr, dtype="<f4")
    if a.ndim:
        a = np.ascontiguousarray(a)
    if a.ndim > 255:
        raise ProtocolError(f"rank {a.ndim} exceeds the wire limit of 255")
    dims = struct.pack("<" + "I" * a.ndim, *a.shape)
    return _HEADER.pack(MAGIC, VERSION, DTYPE_F32, a.ndim, 0) + dims + a.tobytes(order="C")


def decode_tensor(data: bytes, endpoint: str | None = None) -> np.ndarray:
    """Parse a tensor blob; raises ProtocolError on any malformation."""
    if len(data) < _HEADER.size:
        raise ProtocolError(f"blob too short ({len(data)} bytes)", endpoint)
    magic, version, dtype, rank, reserved = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}", endpoint)
    if version != VERSION:
        raise ProtocolError(f"unsupported blob version {version}", endpoint)
    if dtype != DTYPE_F32:
        raise ProtocolError(f"unsupported dtype byte {dtype}", endpoint)
    if reserved != 0:
        raise ProtocolError(f"reserved byte must be zero, got {reserved}", endpoint)
    offset = _HEADER.size
    if len(data) < offset + 4 * rank:
        raise ProtocolError("blob truncated inside the dims block", endpoint)
    dims = struct.unpack_from("<" + "I" * rank, data, offset)
    offset += 4 * rank
    count = 1
    for d in dims:
        count *= d
    expected = offset + 4 * count
    if len(data) != expected:
        raise ProtocolError(
            f"payload length mismatch: expected {expected} bytes total, got {len(data)}", endpoint
        )
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return flat.reshape(dims).astype(np.float32, copy=True)


def pack_frame(header: dict, blob: bytes) -> bytes:
    """4-byte LE header length, UTF-8 JSON header, then the blob."""
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw + blob


def unpack_frame(data: bytes, endpoint: str | None = None) -> tuple[dict, bytes]:
    if len(data) < 4:
        raise ProtocolError("frame too short for a header length", endpoint)
    (hlen,) = struct.unpack_from("<I", data)
    if len(data) < 4 + hlen:
        raise ProtocolError("frame truncated inside the JSON header", endpoint)
    try:
        header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed JSON header: {exc}", endpoint) from exc
    if not isinstance(header, dict):
        raise ProtocolError("frame header must be a JSON object", endpoint)
    return header, data[4 + hlen :]
