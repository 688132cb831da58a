"""
DFCN binary files

Layout (little-endian):
    b"DFCN" | u32 version | u64 T | u64 N | T*N*N f32 values, row-major (t, i, j)
    metadata: subject_id, scan_id (u32 length + UTF-8 each) | i64 label
              | u32 degenerate count + u32 indices | u32 region count + names
"""

import struct
from pathlib import Path

import numpy as np

from dfcn.builder import DfcnTensor
from engine.checkpoint import BinaryReader, pack_text
from utils.errors import FormatError
from utils.logger import logger
from utils.outputs import staged_output

MAGIC = b"DFCN"
VERSION = 1
SUFFIX = ".dfcn"


def encode_dfcn(tensor):
    t, n, _ = tensor.values.shape
    parts = [
        MAGIC,
        struct.pack("<IQQ", VERSION, t, n),
        np.ascontiguousarray(tensor.values).astype("<f4").tobytes(),
        pack_text(tensor.subject_id),
        pack_text(tensor.scan_id),
        struct.pack("<q", tensor.label),
        struct.pack("<I", len(tensor.degenerate_regions)),
        struct.pack(f"<{len(tensor.degenerate_regions)}I", *tensor.degenerate_regions),
        struct.pack("<I", len(tensor.region_names)),
    ]
    parts.extend(pack_text(name) for name in tensor.region_names)
    return b"".join(parts)


def decode_dfcn(payload, path=None):
    reader = BinaryReader(payload, path)
    reader.expect_magic(MAGIC)
    reader.expect_version(VERSION)
    t = reader.u64("window count T")
    n = reader.u64("region count N")
    values = reader.f32_array((t, n, n), "correlation values")

    subject_id = reader.text("subject_id")
    scan_id = reader.text("scan_id")
    label = reader.unpack("q", "label")[0]
    degenerate = tuple(reader.u32("degenerate region index") for _ in range(reader.u32("degenerate count")))
    start = reader.offset
    names = tuple(reader.text("region name") for _ in range(reader.u32("region name count")))
    if names and len(names) != n:
        raise FormatError(f"{len(names)} region names for N={n}", offset=start, path=path)
    reader.expect_end()

    return DfcnTensor(subject_id=subject_id, scan_id=scan_id, label=int(label), values=values,
                      region_names=names, degenerate_regions=degenerate)


def write_dfcn(tensor, path):
    """Write a DfcnTensor through a .partial staging name"""
    with staged_output(path) as staging:
        Path(staging).write_bytes(encode_dfcn(tensor))
    logger.info(f"Wrote {path} (T={tensor.n_windows}, N={tensor.n_regions})")
    return Path(path)


def read_dfcn(path):
    path = Path(path)
    return decode_dfcn(path.read_bytes(), path)


def dfcn_roundtrip(tensor, path):
    """Write then read back; values survive at f32 precision, metadata exactly"""
    write_dfcn(tensor, path)
    return read_dfcn(path)


def load_dfcn_dir(directory):
    """Read every .dfcn file in a directory, sorted by name"""
    paths = sorted(Path(directory).glob(f"*{SUFFIX}"))
    return [read_dfcn(p) for p in paths]
