"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      4 bytes  b"GRCK"
    version    uint32   (currently 1)
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON (config text, schemas, step count,
               quantizer scalars and the quantizer state tag)
    n_records  uint32
    records    n_records times:
        name_len  uint16, name  (UTF-8)
        ndim      uint8,  dims  (ndim x uint64)
        data      prod(dims) x float64, row-major

Record names: ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>`` for every
trainable tensor, and ``rvq/<level>/vectors``, ``rvq/<level>/ema_count`` for
each codebook (levels numbered from 1).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .core import Param, ParamStore
from .rvq import Codebook, RvqState

MAGIC = b"GRCK"
VERSION = 1
RVQ_TAG = "rvq-ema-v1"


class CheckpointError(ValueError):
    pass


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, params: ParamStore, rvq: Optional[RvqState], meta: dict) -> None:
    meta = dict(meta)
    meta["step_count"] = params.step_count
    records = []
    for name, p in params.entries.items():
        records.append(_record(f"param/{name}", p.value))
        records.append(_record(f"adam_m/{name}", p.adam_m))
        records.append(_record(f"adam_v/{name}", p.adam_v))
    if rvq is not None and rvq.initialized:
        meta["rvq"] = {
            "tag": RVQ_TAG,
            "levels": rvq.levels,
            "K": [cb.size for cb in rvq.codebooks],
            "dim": rvq.dim,
            "decay": rvq.decay,
            "expire_threshold": rvq.expire_threshold,
            "smoothing_eps": rvq.codebooks[0].smoothing_eps,
        }
        for cb in rvq.codebooks:
            records.append(_record(f"rvq/{cb.level}/vectors", cb.vectors))
            records.append(_record(f"rvq/{cb.level}/ema_count", cb.ema_count))
    else:
        meta["rvq"] = None
    mb = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob = [MAGIC, struct.pack("<II", VERSION, len(mb)), mb, struct.pack("<I", len(records))]
    Path(path).write_bytes(b"".join(blob + records))


def load_checkpoint(path) -> Tuple[ParamStore, Optional[RvqState], dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(buf[off:off + mlen].decode("utf-8"))
    off += mlen
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nl].decode("utf-8")
        off += nl
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")

    params = ParamStore(step_count=int(meta.get("step_count", 0)))
    for key, arr in tensors.items():
        if key.startswith("param/"):
            name = key[len("param/"):]
            params.entries[name] = Param(arr, None, tensors[f"adam_m/{name}"], tensors[f"adam_v/{name}"])

    rvq = None
    info = meta.get("rvq")
    if info:
        if info.get("tag") != RVQ_TAG:
            raise CheckpointError(f"{path}: unknown quantizer state tag {info.get('tag')!r}")
        rvq = RvqState(decay=info["decay"], expire_threshold=info["expire_threshold"], initialized=True)
        for level in range(1, info["levels"] + 1):
            rvq.codebooks.append(Codebook(level, tensors[f"rvq/{level}/vectors"],
                                          tensors[f"rvq/{level}/ema_count"], info["smoothing_eps"]))
    return params, rvq, meta
