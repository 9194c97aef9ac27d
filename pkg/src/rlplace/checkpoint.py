"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"RLPL"  u32 version  u64 iteration  u64 optimizer_step
    u32 len + utf-8 config hash
    u32 len + utf-8 optimizer kind
    f64 lr, beta1, beta2, eps
    u32 block count, then per block:
        u32 len + utf-8 name, u32 ndim, u64 * ndim shape, f64 * size data

Blocks are the parameters followed by optimizer moments prefixed ``adam.m/``
and ``adam.v/``.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from rlplace.agent import Optimizer, Params

MAGIC = b"RLPL"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: Params
    optimizer: Optimizer
    iteration: int
    config_hash: str


def _put_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _get_str(buf) -> str:
    (n,) = struct.unpack("<I", _read(buf, 4))
    return _read(buf, n).decode("utf-8")


def _read(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def dumps(ck: Checkpoint) -> bytes:
    buf = io.BytesIO()
    opt = ck.optimizer
    buf.write(MAGIC)
    buf.write(struct.pack("<IQQ", VERSION, ck.iteration, opt.step_count))
    _put_str(buf, ck.config_hash)
    _put_str(buf, opt.kind)
    buf.write(struct.pack("<4d", opt.lr, opt.beta1, opt.beta2, opt.eps))
    blocks = [(k, ck.params[k]) for k in sorted(ck.params)]
    blocks += [(f"adam.m/{k}", opt.m[k]) for k in sorted(opt.m)]
    blocks += [(f"adam.v/{k}", opt.v[k]) for k in sorted(opt.v)]
    buf.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        _put_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if _read(buf, 4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, iteration, step = struct.unpack("<IQQ", _read(buf, 20))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    chash = _get_str(buf)
    kind = _get_str(buf)
    lr, b1, b2, eps = struct.unpack("<4d", _read(buf, 32))
    (count,) = struct.unpack("<I", _read(buf, 4))
    params, m, v = {}, {}, {}
    for _ in range(count):
        name = _get_str(buf)
        (ndim,) = struct.unpack("<I", _read(buf, 4))
        shape = struct.unpack(f"<{ndim}Q", _read(buf, 8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(_read(buf, 8 * size), dtype="<f8").reshape(shape).astype(float)
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            params[name] = arr
    if buf.read(1):
        raise CheckpointError("trailing bytes after last block")
    opt = Optimizer(lr, b1, b2, eps, kind, step, m, v)
    return Checkpoint(params, opt, iteration, chash)


def save(path: str | os.PathLike, ck: Checkpoint) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(ck))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())
