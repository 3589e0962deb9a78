"""Binary checkpoint archive of named tensors.

Layout: magic "RLSD", format version u32, tensor count u32; per tensor a u16
name length, the UTF-8 name, rank u8, dims as u64, then a little-endian
float32 payload. All integers little-endian. Optimizer moments are stored
under "adam.m.<name>" / "adam.v.<name>"; scalar metadata rides along as tiny
tensors, with exact 64-bit values split into uint16 chunks so the float32
payload loses nothing.
"""

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"RLSD"
VERSION = 1


def encode_u64(value: int) -> np.ndarray:
    """Exact uint64 as four uint16 chunks in a float32-safe array."""
    v = int(value) & 0xFFFFFFFFFFFFFFFF
    return np.array([(v >> (16 * i)) & 0xFFFF for i in range(4)], dtype=np.float64)


def decode_u64(arr) -> int:
    chunks = [int(round(float(c))) for c in np.asarray(arr).reshape(-1)]
    if len(chunks) != 4 or any(not (0 <= c <= 0xFFFF) for c in chunks):
        raise CheckpointError("malformed packed integer")
    return sum(c << (16 * i) for i, c in enumerate(chunks))


def encode_f64(value: float) -> np.ndarray:
    return encode_u64(struct.unpack("<Q", struct.pack("<d", float(value)))[0])


def decode_f64(arr) -> float:
    return struct.unpack("<d", struct.pack("<Q", decode_u64(arr)))[0]


def save_checkpoint(path, tensors: dict) -> None:
    """Write named float arrays; payloads are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name!r}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> dict:
    """Read back named tensors as float64 arrays (float32-rounded values)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (count,) = struct.unpack_from("<I", data, 8)
    offset = 12
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + nlen].decode("utf-8")
        offset += nlen
        (rank,) = struct.unpack_from("<B", data, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}Q", data, offset) if rank else ()
        offset += 8 * rank
        n_items = int(np.prod(dims)) if rank else 1
        payload = np.frombuffer(data, dtype="<f4", count=n_items, offset=offset)
        offset += 4 * n_items
        tensors[name] = payload.astype(np.float64).reshape(dims)
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return tensors
