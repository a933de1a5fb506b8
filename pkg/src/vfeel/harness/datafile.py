"""VFSD dataset files: a fixed little-endian header followed by labelled samples.

Layout::

    magic "VFSD" | version u16 | K u16 | H u16 | W u16 | classes u16 | count u32
    count x ( label u8 | K*H*W float32, row-major )

A dataset is stored as two such files, one per split.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..motion import Dataset

MAGIC = b"VFSD"
VERSION = 1
HEADER = struct.Struct("<4sHHHHHI")


class DatasetFormatError(ValueError):
    pass


def encode_samples(x, y, classes: int = 5) -> bytes:
    x = np.asarray(x, dtype="<f4")
    y = np.asarray(y)
    if x.ndim != 4 or len(x) != len(y):
        raise DatasetFormatError("samples must be (N, K, H, W) with one label each")
    if len(y) and (y.min() < 0 or y.max() >= classes):
        raise DatasetFormatError(f"labels must lie in [0, {classes})")
    n, k, h, w = x.shape
    rec = np.zeros(n, dtype=[("label", "u1"), ("data", "<f4", (k * h * w,))])
    rec["label"] = y
    rec["data"] = x.reshape(n, -1)
    return HEADER.pack(MAGIC, VERSION, k, h, w, classes, n) + rec.tobytes()


def decode_samples(buf: bytes):
    """``(x, y, classes)`` from a complete file image."""
    if len(buf) < HEADER.size:
        raise DatasetFormatError("file shorter than its header")
    magic, version, k, h, w, classes, n = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DatasetFormatError("bad magic; not a VFSD file")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    dt = np.dtype([("label", "u1"), ("data", "<f4", (k * h * w,))])
    if len(buf) - HEADER.size != n * dt.itemsize:
        raise DatasetFormatError(
            f"payload is {len(buf) - HEADER.size} bytes; header promises {n * dt.itemsize}")
    rec = np.frombuffer(buf, dtype=dt, offset=HEADER.size, count=n)
    y = rec["label"].copy()
    if n and y.max() >= classes:
        raise DatasetFormatError("label out of range")
    x = rec["data"].astype(np.float32).reshape(n, k, h, w)
    return x, y, classes


def split_paths(base) -> tuple[Path, Path]:
    base = Path(base)
    return base.with_name(base.name + ".train.vfsd"), base.with_name(base.name + ".test.vfsd")


def write_dataset(ds: Dataset, base, classes: int = 5):
    """Write both splits; returns the two paths."""
    tr, te = split_paths(base)
    tr.parent.mkdir(parents=True, exist_ok=True)
    tr.write_bytes(encode_samples(ds.train_x, ds.train_y, classes))
    te.write_bytes(encode_samples(ds.test_x, ds.test_y, classes))
    return tr, te


def read_dataset(base) -> Dataset:
    tr, te = split_paths(base)
    for p in (tr, te):
        if not p.is_file():
            raise FileNotFoundError(f"dataset file {p} not found")
    xtr, ytr, _ = decode_samples(tr.read_bytes())
    xte, yte, _ = decode_samples(te.read_bytes())
    if xtr.shape[1:] != xte.shape[1:] and len(xte):
        raise DatasetFormatError("train and test files disagree on sample shape")
    if not len(xte):
        xte = np.zeros((0,) + xtr.shape[1:], np.float32)
    return Dataset(xtr, ytr, xte, yte)


def digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()
