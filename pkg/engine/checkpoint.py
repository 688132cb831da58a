"""
Parameter checkpoint files

Layout (little-endian):
    b"DCAW" | u32 version | u32 record count
    per record: u32 name length | UTF-8 name | u32 rank | rank x u64 extents | f32 payload
    u32 metadata length | UTF-8 JSON metadata
"""

import json
import math
import struct
from pathlib import Path

import numpy as np

from utils.errors import FormatError
from utils.logger import logger
from utils.outputs import staged_output

MAGIC = b"DCAW"
VERSION = 1


class BinaryReader:
    """Sequential little-endian reader that reports the offset of every failure"""

    def __init__(self, payload, path=None):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size, what):
        end = self.offset + size
        if end > len(self.payload):
            raise FormatError(f"truncated file while reading {what}: need {size} bytes, "
                              f"{len(self.payload) - self.offset} left", offset=self.offset, path=self.path)
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def u32(self, what):
        return self.unpack("I", what)[0]

    def u64(self, what):
        return self.unpack("Q", what)[0]

    def text(self, what):
        start = self.offset
        length = self.u32(f"{what} length")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", offset=start, path=self.path)

    def f32_array(self, shape, what):
        count = math.prod(shape)
        left = len(self.payload) - self.offset
        if 4 * count > left:
            raise FormatError(f"truncated file: {what} declares shape {shape} but only {left} bytes remain",
                              offset=self.offset, path=self.path)
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

    def expect_magic(self, magic):
        found = self.take(len(magic), "magic bytes")
        if found != magic:
            raise FormatError(f"bad magic bytes {found!r}, expected {magic!r}", offset=0, path=self.path)

    def expect_version(self, supported):
        start = self.offset
        version = self.u32("format version")
        if version != supported:
            raise FormatError(f"unsupported format version {version} (supported: {supported})",
                              offset=start, path=self.path)
        return version

    def expect_end(self):
        if self.offset != len(self.payload):
            raise FormatError(f"{len(self.payload) - self.offset} trailing bytes", offset=self.offset, path=self.path)


def pack_text(value):
    raw = value.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(arrays, metadata=None):
    """
    Serialize named arrays (downcast to f32) and a JSON metadata block

    Args:
        arrays (dict[str, np.ndarray]): Ordered named arrays
        metadata (dict): JSON-compatible metadata

    Returns:
        bytes: File contents
    """
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value)
        parts.append(pack_text(name))
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.astype("<f4").tobytes())
    parts.append(pack_text(json.dumps(metadata or {}, sort_keys=True)))
    return b"".join(parts)


def decode_checkpoint(payload, path=None):
    """
    Parse checkpoint bytes

    Returns:
        tuple: (dict[str, np.ndarray] of float64 arrays, metadata dict)
    """
    reader = BinaryReader(payload, path)
    reader.expect_magic(MAGIC)
    reader.expect_version(VERSION)
    count = reader.u32("record count")

    arrays = {}
    for index in range(count):
        name = reader.text(f"record {index} name")
        rank = reader.u32(f"record '{name}' rank")
        shape = tuple(reader.u64(f"record '{name}' extent {axis}") for axis in range(rank))
        arrays[name] = reader.f32_array(shape, f"record '{name}' payload")

    start = reader.offset
    try:
        metadata = json.loads(reader.text("metadata"))
    except json.JSONDecodeError as e:
        raise FormatError(f"metadata is not valid JSON: {e}", offset=start, path=path)
    reader.expect_end()
    return arrays, metadata


def save_checkpoint(path, arrays, metadata=None):
    """Write a checkpoint file through a .partial staging name"""
    with staged_output(path) as staging:
        Path(staging).write_bytes(encode_checkpoint(arrays, metadata))
    logger.info(f"Saved checkpoint with {len(arrays)} records to {path}")
    return Path(path)


def load_checkpoint(path):
    """Read a checkpoint file; returns (arrays, metadata)"""
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), path)
