"""Binary tensor and weight-file formats.

Tensor dump ("MKST"): magic bytes, u8 dtype code (0 = float32, 1 = float64),
four u32 dims, then raw little-endian scalars. Tensors of rank < 4 are padded
with leading 1 dims.

Weight file ("MKSW"): magic, u32 version, u32 entry count, then per entry
u16 name length, name bytes (utf-8), u8 dtype code, four u32 dims, raw data.
Both formats round-trip bit-identically.
"""

from __future__ import annotations

import struct

import numpy as np

TENSOR_MAGIC = b"MKST"
WEIGHTS_MAGIC = b"MKSW"
WEIGHTS_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.float64:
        return 1
    raise ValueError(f"unsupported dtype {arr.dtype}")


def _pad_shape(shape) -> tuple:
    if len(shape) > 4:
        raise ValueError(f"rank {len(shape)} > 4 not supported")
    return (1,) * (4 - len(shape)) + tuple(shape)


def _encode_tensor(arr: np.ndarray) -> bytes:
    code = _dtype_code(arr)
    dims = _pad_shape(arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()
    return struct.pack("<B4I", code, *dims) + payload


def _decode_tensor(buf: memoryview, off: int):
    code, d0, d1, d2, d3 = struct.unpack_from("<B4I", buf, off)
    off += struct.calcsize("<B4I")
    dt = _DTYPE_CODES[code]
    n = d0 * d1 * d2 * d3
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(d0, d1, d2, d3)
    return arr.copy(), off + n * dt.itemsize


def dump_tensor(path, arr: np.ndarray):
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC + _encode_tensor(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = memoryview(f.read())
    if buf[:4] != TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor dump (bad magic)")
    arr, _ = _decode_tensor(buf, 4)
    return arr


def save_weights(path, tensors: dict):
    """tensors: name -> array, written in sorted-name order."""
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<II", WEIGHTS_VERSION, len(tensors)))
        for name in sorted(tensors):
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(_encode_tensor(tensors[name]))


def load_weights(path) -> dict:
    with open(path, "rb") as f:
        buf = memoryview(f.read())
    if buf[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weight file version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = bytes(buf[off:off + nlen]).decode("utf-8")
        off += nlen
        out[name], off = _decode_tensor(buf, off)
    return out


def load_into(module, path):
    """Load a weight file into a module's named tensors, matching by name."""
    from .backbone import named_tensors

    targets = named_tensors(module)
    loaded = load_weights(path)
    missing = set(targets) - set(loaded)
    orphans = set(loaded) - set(targets)
    if missing or orphans:
        raise ValueError(
            f"{path}: weight names do not match model "
            f"(missing {sorted(missing)[:3]}, orphans {sorted(orphans)[:3]})")
    for name, arr in loaded.items():
        tgt = targets[name]
        if arr.size != tgt.size:
            raise ValueError(f"{path}: size mismatch for {name}")
        tgt[...] = arr.reshape(tgt.shape).astype(tgt.dtype)
