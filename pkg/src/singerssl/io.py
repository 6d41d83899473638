"""Binary checkpoint and embedding-file formats.

Checkpoint (little-endian)::

    b"SSLCKPT\\0" | u32 version | u32 n | n bytes of JSON {config, epoch, metrics}
    u32 tensor count, then per tensor:
    u16 name length | name (utf-8) | u8 ndim | u32 * ndim shape | float32 data

Target-network tensors are stored under ``target/<name>``.

Embedding file::

    b"SSLEMB\\0\\0" | u32 version | u32 dim | u32 rows | u8 has_labels
    rows * dim float32

with a JSON sidecar ``<file>.index.json`` holding the run config and one
``{clip_id, segment, singer_id}`` record per row.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .metrics import EmbeddingTable

CKPT_MAGIC = b"SSLCKPT\x00"
EMB_MAGIC = b"SSLEMB\x00\x00"
VERSION = 1
_EMB_HEADER = struct.Struct("<8sIIIB")


class FormatError(ValueError):
    pass


def write_checkpoint(path, ckpt) -> None:
    tensors = dict(ckpt.params)
    if ckpt.target is not None:
        tensors.update({f"target/{k}": v for k, v in ckpt.target.items()})
    meta = json.dumps({"config": ckpt.config, "epoch": ckpt.epoch, "metrics": ckpt.metrics},
                      sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    from .train import Checkpoint

    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(data[off : off + n])
    off += n
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params, target = {}, {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        arr = arr.astype(np.float32)  # native, writable
        if name.startswith("target/"):
            target[name[len("target/"):]] = arr
        else:
            params[name] = arr
    return Checkpoint(params, meta["config"], meta["epoch"], meta["metrics"], target or None)


def index_path(path) -> Path:
    return Path(str(path) + ".index.json")


def write_embeddings(path, table: EmbeddingTable, config: dict | None = None) -> None:
    vecs = np.ascontiguousarray(table.vectors, dtype="<f4")
    rows, dim = vecs.shape if vecs.ndim == 2 else (0, 0)
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMB_MAGIC, VERSION, dim, rows, int(table.has_labels)))
        fh.write(vecs.tobytes())
    index = {
        "config": config or {},
        "rows": [{"clip_id": c, "segment": s, "singer_id": g}
                 for c, s, g in zip(table.clip_ids, table.segment_index, table.singer_ids)],
    }
    index_path(path).write_text(json.dumps(index, sort_keys=True, indent=1))


def read_embeddings(path) -> tuple[EmbeddingTable, dict]:
    data = Path(path).read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, rows, labelled = _EMB_HEADER.unpack_from(data, 0)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: not an embedding file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported embedding version {version}")
    payload = len(data) - _EMB_HEADER.size
    if payload != rows * dim * 4:
        raise FormatError(f"{path}: payload {payload} bytes, header says {rows}x{dim} float32")
    vecs = np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size).reshape(rows, dim).astype(np.float32)
    index = json.loads(index_path(path).read_text())
    recs = index["rows"]
    if len(recs) != rows:
        raise FormatError(f"{path}: index has {len(recs)} rows, header says {rows}")
    singers = [r.get("singer_id") for r in recs] if labelled else [None] * rows
    table = EmbeddingTable(vecs, [r["clip_id"] for r in recs], [r["segment"] for r in recs], singers)
    return table, index.get("config", {})


def export_csv(path, table: EmbeddingTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "segment", "singer_id", *[f"e{i}" for i in range(table.vectors.shape[1])]])
        for i in range(len(table)):
            w.writerow([table.clip_ids[i], table.segment_index[i], table.singer_ids[i] or "",
                        *(repr(float(x)) for x in table.vectors[i])])
