"""
Header + raw-array binary container shared by dataset samples and checkpoints.

Layout (little-endian):
    magic bytes | uint64 header length | UTF-8 JSON header | arrays in ``header["layout"]`` order

The header always carries ``layout``: a list of ``[name, dtype, count]`` entries, so a reader
knows exactly how many bytes follow the header.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

_LENGTH = struct.Struct("<Q")

# Only these element types ever hit the disk
DTYPES = {
    "f8": np.dtype("<f8"),
    "u4": np.dtype("<u4"),
}


class ContainerError(ValueError):
    """Base class for malformed container files."""


class BadMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class CountMismatchError(ContainerError):
    pass


def encode_container(magic: bytes, header: Dict[str, Any], arrays: List[Tuple[str, str, np.ndarray]]) -> bytes:
    """
    Serialize a header and named arrays.

    Args:
        magic: File signature
        header: JSON-serializable metadata (``layout`` is added here)
        arrays: ``(name, dtype_code, array)`` triples in on-disk order

    Returns:
        bytes: The complete file payload
    """
    layout = []
    chunks = []
    for name, code, array in arrays:
        dtype = DTYPES[code]
        flat = np.ascontiguousarray(np.asarray(array).reshape(-1), dtype=dtype)
        layout.append([name, code, int(flat.size)])
        chunks.append(flat.tobytes())
    full_header = dict(header)
    full_header["layout"] = layout
    header_bytes = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([magic, _LENGTH.pack(len(header_bytes)), header_bytes] + chunks)


def decode_container(payload: bytes, magic: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Inverse of :func:`encode_container`; raises a distinct error per failure mode."""
    if payload[: len(magic)] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {payload[:len(magic)]!r}")
    offset = len(magic)
    if len(payload) < offset + _LENGTH.size:
        raise TruncatedPayloadError("file ends before the header length field")
    (header_length,) = _LENGTH.unpack_from(payload, offset)
    offset += _LENGTH.size
    if len(payload) < offset + header_length:
        raise TruncatedPayloadError(f"header needs {header_length} bytes, only {len(payload) - offset} present")
    try:
        header = json.loads(payload[offset: offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"header is not valid UTF-8 JSON: {e}")
    offset += header_length

    layout = header.get("layout")
    if not isinstance(layout, list):
        raise CountMismatchError("header has no array layout")
    expected = 0
    for name, code, count in layout:
        if code not in DTYPES:
            raise ContainerError(f"array {name!r} has unsupported dtype {code!r}")
        expected += DTYPES[code].itemsize * int(count)
    available = len(payload) - offset
    if available < expected:
        raise TruncatedPayloadError(f"payload needs {expected} bytes after the header, only {available} present")
    if available > expected:
        raise CountMismatchError(f"{available - expected} unexpected trailing bytes after the declared arrays")

    arrays = {}
    for name, code, count in layout:
        dtype = DTYPES[code]
        nbytes = dtype.itemsize * int(count)
        arrays[name] = np.frombuffer(payload, dtype=dtype, count=int(count), offset=offset).copy()
        offset += nbytes
    return header, arrays


def write_container(path, magic: bytes, header: Dict[str, Any], arrays: List[Tuple[str, str, np.ndarray]]) -> int:
    """Write a container file and return the number of bytes written."""
    payload = encode_container(magic, header, arrays)
    path = Path(path)
    path.write_bytes(payload)
    logging.debug(f"Wrote {len(payload)} bytes to {path}")
    return len(payload)


def read_container(path, magic: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read and validate a container file."""
    return decode_container(Path(path).read_bytes(), magic)


def expect_count(arrays: Dict[str, np.ndarray], name: str, count: int):
    """Check a decoded array against the count its header promised."""
    if name not in arrays:
        raise CountMismatchError(f"array {name!r} missing from payload")
    if arrays[name].size != count:
        raise CountMismatchError(f"array {name!r} holds {arrays[name].size} values, header says {count}")
