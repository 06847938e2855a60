"""Binary model checkpoints.

Layout (little-endian)::

    b"LSTM"  u32 version=1
    u32 kind  u32 n_i  u32 n_c  u32 n_o  u32 n_r  u32 n_p   (0 = absent)
    u64 step  u32 n_records
    per record: u16 name_len, name (utf-8), u32 rows, u32 cols, rows*cols float64

Vectors are stored as rows × 1. Weights are always written as float64.
"""

import struct

import numpy as np

from .cells import KIND_CODES, ArchSpec, ModelParams
from .errors import BadMagicError, InconsistentRecordError, TruncatedFileError, VersionMismatchError

MAGIC = b"LSTM"
VERSION = 1
_HEAD = struct.Struct("<4sI6IQI")
_REC = struct.Struct("<II")
_CODES_TO_KIND = {v: k for k, v in KIND_CODES.items()}


def checkpoint_bytes(params, step=0):
    spec = params.spec
    parts = [_HEAD.pack(MAGIC, VERSION, KIND_CODES[spec.kind], spec.n_i, spec.n_c, spec.n_o,
                        spec.n_r or 0, spec.n_p or 0, step, len(params.layout))]
    for name, block in params.items():
        rows, cols = block.shape if block.ndim == 2 else (block.shape[0], 1)
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded + _REC.pack(rows, cols))
        parts.append(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params, step=0):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, step))


def load_checkpoint(path):
    """Return (ModelParams, step)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < _HEAD.size:
        raise TruncatedFileError(f"{path}: truncated header")
    _, version, kind, n_i, n_c, n_o, n_r, n_p, step, n_records = _HEAD.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    if kind not in _CODES_TO_KIND:
        raise InconsistentRecordError(f"{path}: unknown architecture code {kind}")
    try:
        spec = ArchSpec(_CODES_TO_KIND[kind], n_i, n_c, n_o, n_r or None, n_p or None)
    except ValueError as exc:
        raise InconsistentRecordError(f"{path}: invalid architecture: {exc}") from None
    params = ModelParams(spec)
    if n_records != len(params.layout):
        raise InconsistentRecordError(f"{path}: {n_records} records, {spec.name} has {len(params.layout)}")
    pos = _HEAD.size
    for name, shape, _ in params.layout:
        if pos + 2 > len(blob):
            raise TruncatedFileError(f"{path}: truncated before record {name}")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + name_len + _REC.size > len(blob):
            raise TruncatedFileError(f"{path}: truncated inside record header for {name}")
        stored = blob[pos:pos + name_len].decode(errors="replace")
        pos += name_len
        rows, cols = _REC.unpack_from(blob, pos)
        pos += _REC.size
        want = shape if len(shape) == 2 else (shape[0], 1)
        if stored != name or (rows, cols) != want:
            raise InconsistentRecordError(
                f"{path}: record {stored!r} {rows}x{cols} where {spec.name} expects {name!r} {want[0]}x{want[1]}")
        nbytes = rows * cols * 8
        if pos + nbytes > len(blob):
            raise TruncatedFileError(f"{path}: record {name} needs {nbytes} bytes, {len(blob) - pos} left")
        params[name][...] = np.frombuffer(blob, "<f8", rows * cols, pos).reshape(shape)
        pos += nbytes
    return params, step
