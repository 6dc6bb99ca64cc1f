"""Binary checkpoint format.

Layout (little-endian): ``b"LVNT"``, u16 version, u32 length + UTF-8 JSON of
the model config, u32 tensor count, then per tensor a u16 name length, the
name bytes and one raw tensor record.
"""

from __future__ import annotations

import io
import json
import os
import struct
from collections import OrderedDict
from pathlib import Path

from .model import ModelConfig, ParamStore
from .tensor import read_record, write_record

MAGIC = b"LVNT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: ParamStore) -> bytes:
    buf = io.BytesIO()
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_record(buf, t)
    return buf.getvalue()


def loads(blob: bytes) -> ParamStore:
    fh = io.BytesIO(blob)
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a LaverNet checkpoint (bad magic)")
    (version,) = struct.unpack("<H", fh.read(2))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        (n,) = struct.unpack("<I", fh.read(4))
        config = ModelConfig.from_dict(json.loads(fh.read(n).decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = OrderedDict()
        for _ in range(count):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode("utf-8")
            t = read_record(fh)
            t.requires_grad = True
            tensors[name] = t
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return ParamStore(config, tensors)


def save_checkpoint(path: str | Path, params: ParamStore) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(params))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> ParamStore:
    return loads(Path(path).read_bytes())
