"""Binary tensor container (CKPT1) plus the JSON sidecar for run metadata.

Layout: magic "CKPT1", u32 little-endian tensor count, then per tensor a u16
name length, UTF-8 name, u8 dtype code (0 = f64, 1 = f32), u8 rank, u32 dims,
and raw little-endian data. Tensors are written in sorted name order so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CKPT1"
_DTYPES = {0: "<f8", 1: "<f4"}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


class CheckpointError(ValueError):
    """Corrupt or inconsistent checkpoint file."""


def save_tensors(path: str, named: dict[str, np.ndarray]) -> None:
    names = sorted(named)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.asarray(named[name])
            if not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)  # 0-d stays 0-d: it is already contiguous
            if arr.dtype not in _CODES:
                raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            code = _CODES[arr.dtype]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(_DTYPES[code], copy=False).tobytes())


def load_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a CKPT1 container")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        width = 8 if code == 0 else 4
        arr = np.frombuffer(blob, dtype=_DTYPES[code], count=n, offset=off).reshape(dims).copy()
        off += n * width
        if name in out:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def save_meta(path: str, meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_meta(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
