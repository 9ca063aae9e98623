"""Versioned binary file helpers.

Two layouts share the same prefix discipline (8-byte magic, little-endian
u32 format version):

* raw float blobs — magic + version + packed float32 payload; offsets into
  the payload live in a side manifest, the CRC32 of the payload too.
* containers — magic + version + length-prefixed JSON header + array
  payload; used for model/tagger checkpoints. The header carries the array
  index and the payload CRC32.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import ChecksumError, FormatError, TruncatedFileError, VersionError

BLOB_MAGIC = b"SRCORPUS"
CONTAINER_MAGIC = b"SRCKPT\x00\x01"
BLOB_VERSION = 1
CONTAINER_VERSION = 1

_PREFIX = struct.Struct("<8sI")


def write_blob(path, payload: bytes, magic: bytes = BLOB_MAGIC,
               version: int = BLOB_VERSION) -> int:
    """Write magic + version + payload; returns the CRC32 of the payload."""
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, version))
        fh.write(payload)
    return zlib.crc32(payload)


def read_blob(path, expected_crc: int | None = None, magic: bytes = BLOB_MAGIC,
              version: int = BLOB_VERSION) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise TruncatedFileError(f"{path}: shorter than the file prefix")
    got_magic, got_version = _PREFIX.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}")
    if got_version != version:
        raise VersionError(f"{path}: format version {got_version}, expected {version}")
    payload = raw[_PREFIX.size:]
    if expected_crc is not None and zlib.crc32(payload) != expected_crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    return payload


def blob_payload_offset() -> int:
    return _PREFIX.size


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Single-file container: prefix, JSON header, concatenated arrays."""
    index = {}
    chunks = []
    offset = 0
    # Canonical payload order: callers' dict insertion order varies (e.g.
    # optimizer slots appear as blocks first receive gradients).
    for name, arr in sorted(arrays.items()):
        arr = np.ascontiguousarray(arr)
        raw = arr.tobytes()
        index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape),
                       "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps({"meta": meta, "arrays": index,
                         "payload_crc32": zlib.crc32(payload)},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(CONTAINER_MAGIC, CONTAINER_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size + 8:
        raise TruncatedFileError(f"{path}: shorter than the container prefix")
    magic, version = _PREFIX.unpack_from(raw)
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise VersionError(f"{path}: container version {version}, "
                           f"expected {CONTAINER_VERSION}")
    (header_len,) = struct.unpack_from("<Q", raw, _PREFIX.size)
    header_start = _PREFIX.size + 8
    if len(raw) < header_start + header_len:
        raise TruncatedFileError(f"{path}: header cut short")
    header = json.loads(raw[header_start:header_start + header_len])
    payload = raw[header_start + header_len:]
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    arrays = {}
    for name, spec in header["arrays"].items():
        start, nbytes = spec["offset"], spec["nbytes"]
        if start + nbytes > len(payload):
            raise TruncatedFileError(f"{path}: array {name} exceeds payload")
        arrays[name] = np.frombuffer(
            payload[start:start + nbytes], dtype=np.dtype(spec["dtype"])
        ).reshape(spec["shape"]).copy()
    return header["meta"], arrays
