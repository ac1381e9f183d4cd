"""Binary parameter checkpoints.

Layout (little-endian): magic ``VGCL``, u16 version, u32 count, then per
parameter u16 name length, UTF-8 name, u8 rank, u32 per dimension and the
f64 payload in row-major order.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VGCL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_array(buf, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_exact(buf, n: int, what: str) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError(f"truncated data while reading {what}")
    return raw


def read_array(buf) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", read_exact(buf, 2, "name length"))
    name = read_exact(buf, n, "name").decode("utf-8")
    (rank,) = struct.unpack("<B", read_exact(buf, 1, f"rank of {name}"))
    dims = struct.unpack(f"<{rank}I", read_exact(buf, 4 * rank, f"dims of {name}"))
    count = int(np.prod(dims)) if rank else 1
    payload = read_exact(buf, 8 * count, f"payload of {name}")
    return name, np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def dumps(params: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(params)))
    for name, p in params.items():
        write_array(buf, name, np.asarray(getattr(p, "data", p)))
    return buf.getvalue()


def loads(raw: bytes) -> dict[str, np.ndarray]:
    buf = io.BytesIO(raw)
    if read_exact(buf, 4, "magic") != MAGIC:
        raise CheckpointError("not a parameter checkpoint (bad magic)")
    version, count = struct.unpack("<HI", read_exact(buf, 6, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr = read_array(buf)
        if name in out:
            raise CheckpointError(f"duplicate parameter {name!r}")
        out[name] = arr
    if buf.read(1):
        raise CheckpointError("trailing bytes after last parameter")
    return out


def save(path, params: dict) -> None:
    Path(path).write_bytes(dumps(params))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def assign(params: dict, values: dict[str, np.ndarray], strict: bool = True) -> list[str]:
    """Copy ``values`` into matching parameters; returns the names assigned."""
    done = []
    for name, arr in values.items():
        if name not in params:
            if strict:
                raise CheckpointError(f"unexpected parameter {name!r}")
            continue
        p = params[name]
        if p.data.shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: expected {p.data.shape}, got {arr.shape}")
        p.data[...] = arr
        done.append(name)
    return done
