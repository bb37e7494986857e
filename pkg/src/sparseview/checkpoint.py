"""Flat binary checkpoint container.

Layout (all integers little-endian uint32):
    magic b"SVCK" | version | count
    then per entry:
    name_len | name utf-8 bytes | rank | dims... | float32 LE values

Round-trips bit-exactly: values are stored as raw little-endian float32.
"""

import struct

import numpy as np

from .errors import DataError

MAGIC = b"SVCK"
VERSION = 1


def save_checkpoint(path, state):
    """state: dict name -> float32 ndarray (other dtypes are cast)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(state)))
        for name, arr in state.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint: {e}") from e
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        state[name] = arr.copy()
    if off != len(blob):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return state
