"""Versioned binary checkpoint format.

Layout: magic "LGLSTM01" (8 bytes), u32 little-endian tensor count, then per
tensor: u32 name length, UTF-8 name, u8 dtype (0 = float32, 1 = float64),
u32 rank, rank u64 extents, raw little-endian data.  A trailing u32 CRC32 of
all preceding bytes closes the file.  Round trips are bit-exact.
"""

import struct
import zlib

import numpy as np

from .errors import (CheckpointCrcError, CheckpointMagicError,
                     CheckpointShapeError, CheckpointTruncatedError)

MAGIC = b"LGLSTM01"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(params, path):
    """Write a name -> array mapping, preserving iteration order."""
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        encoded = name.encode("utf-8")
        code = _DTYPE_CODES[np.dtype(arr.dtype)]
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, file has {len(self.data)})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name -> array dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8:
        raise CheckpointTruncatedError(f"{path}: file too short to be a checkpoint")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointCrcError(
            f"{path}: CRC mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})")

    reader = _Reader(data[:-4], path)
    reader.take(len(MAGIC), "magic")
    count = struct.unpack("<I", reader.take(4, "tensor count"))[0]
    params = {}
    for _ in range(count):
        name_len = struct.unpack("<I", reader.take(4, "name length"))[0]
        name = reader.take(name_len, "name").decode("utf-8")
        code, rank = struct.unpack("<BI", reader.take(5, "dtype/rank"))
        if code not in _DTYPES:
            raise CheckpointShapeError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", reader.take(8 * rank, "extents"))
        n_bytes = _DTYPES[code].itemsize * int(np.prod(shape, dtype=np.int64)) if rank else _DTYPES[code].itemsize
        raw = reader.take(n_bytes, f"data of {name!r}")
        params[name] = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
    if reader.pos != len(reader.data):
        raise CheckpointTruncatedError(
            f"{path}: {len(reader.data) - reader.pos} trailing bytes after last tensor")
    return params


def load_model(path, config):
    """Load a checkpoint into a model skeleton derived from config.

    Names, shapes and dtypes must all match the config-derived expectation;
    the first offending tensor is named in the error.
    """
    from . import network

    params = load_checkpoint(path)
    model = network.init_model(config, seed=0)
    expected = model.named_parameters()
    for name, target in expected.items():
        if name not in params:
            raise CheckpointShapeError(f"{path}: missing tensor {name!r}")
        arr = params[name]
        if tuple(arr.shape) != tuple(target.shape):
            raise CheckpointShapeError(
                f"{path}: tensor {name!r} has shape {tuple(arr.shape)}, "
                f"config expects {tuple(target.shape)}")
        if arr.dtype != target.dtype:
            raise CheckpointShapeError(
                f"{path}: tensor {name!r} has dtype {arr.dtype}, "
                f"config expects {target.dtype}")
    extra = set(params) - set(expected)
    if extra:
        raise CheckpointShapeError(f"{path}: unexpected tensors {sorted(extra)}")
    model.set_parameters(params)
    return model
