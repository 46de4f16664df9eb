"""Dataset ingestion (CSV, MNIST IDX) and the Gaussian-blob desk benchmarks."""

from __future__ import annotations

import csv
import gzip
import os
import struct
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


def load_csv_dataset(path, label_column="label", delimiter=",", header=True):
    """Read a numeric CSV; returns ``(x, y)`` with row order preserved.

    ``label_column`` is a header name, or an integer column index (negative
    counts from the right).  Without a header it must be an index.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if not rows:
        raise FormatError(f"{path}: empty file")
    first_line = 1
    if header:
        names, rows = rows[0], rows[1:]
        first_line = 2
        if isinstance(label_column, str):
            if label_column not in names:
                raise FormatError(f"{path}: missing label column {label_column!r}")
            label_idx = names.index(label_column)
        else:
            label_idx = int(label_column)
        width = len(names)
    else:
        if isinstance(label_column, str):
            raise FormatError("label_column must be an index when the file has no header")
        label_idx = int(label_column)
        width = len(rows[0]) if rows else 0
    if label_idx < 0:
        label_idx += width
    if not 0 <= label_idx < width:
        raise FormatError(f"{path}: label column index out of range")

    xs, ys = [], []
    for lineno, row in enumerate(rows, start=first_line):
        if not row:
            continue
        if len(row) != width:
            raise FormatError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: non-numeric cell ({exc})") from None
        label = values.pop(label_idx)
        if label != int(label):
            raise FormatError(f"{path}: line {lineno}: label {label} is not integral")
        xs.append(values)
        ys.append(int(label))
    x = np.array(xs, dtype=np.float64).reshape(len(xs), width - 1)
    return x, np.array(ys, dtype=np.int64)


def save_csv_dataset(path, x, y, label_column="label"):
    x = np.asarray(x, dtype=np.float64)
    with atomic_write(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(x.shape[1])] + [label_column])
        for row, label in zip(x, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def _read_idx(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf, expected_magic):
    if len(buf) < 8:
        raise FormatError("truncated IDX header")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError("truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, buf[4:header])
    size = int(np.prod(dims))
    if len(buf) - header < size:
        raise FormatError(f"truncated IDX payload: need {size} bytes, have {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx_images(images_path, labels_path):
    """MNIST-style IDX pair -> flattened features in [0, 1] and labels."""
    images = parse_idx(_read_idx(images_path), IDX_IMAGES_MAGIC)
    labels = parse_idx(_read_idx(labels_path), IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    with atomic_write(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def gen_benchmark(seed, n_classes=10, per_class=600, q=64, separation=6.0):
    """Gaussian blobs with identity noise and seeded class means.

    ``separation`` is the expected distance between two class means in
    units of the noise standard deviation.  Each class contributes
    ``per_class`` points; 5 of every 6 go to train, the rest to test.
    """
    if min(n_classes, per_class, q) < 1:
        raise ValueError("counts must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    means = rng.normal(size=(n_classes, q)) * separation / np.sqrt(2.0 * q)
    x = np.empty((n_classes * per_class, q))
    y = np.repeat(np.arange(n_classes), per_class)
    for c in range(n_classes):
        x[c * per_class:(c + 1) * per_class] = means[c] + rng.normal(size=(per_class, q))
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    n_train = len(y) * 5 // 6
    return (x[:n_train], y[:n_train]), (x[n_train:], y[n_train:])


def gen_image_benchmark(seed, n_classes=4, per_class=300, side=8, channels=1):
    """Small image-shaped blobs: each class is a random prototype image in
    [0, 1] plus pixel noise, clipped to [0, 1].  Features are flattened
    ``H*W*C`` in row-major (H, W, C) order."""
    rng = np.random.Generator(np.random.PCG64(seed))
    q = side * side * channels
    protos = rng.uniform(size=(n_classes, q))
    y = np.repeat(np.arange(n_classes), per_class)
    x = np.clip(protos[y] + 0.25 * rng.normal(size=(len(y), q)), 0.0, 1.0)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    n_train = len(y) * 5 // 6
    return (x[:n_train], y[:n_train]), (x[n_train:], y[n_train:])


class atomic_write:
    """Write to a temp file next to ``path`` and rename on success."""

    def __init__(self, path, mode="w", **kwargs):
        self.path = Path(path)
        self.tmp = self.path.with_name(f".{self.path.name}.tmp{os.getpid()}")
        self.mode = mode
        self.kwargs = kwargs

    def __enter__(self):
        self.fh = open(self.tmp, self.mode, **self.kwargs)
        return self.fh

    def __exit__(self, exc_type, exc, tb):
        self.fh.close()
        if exc_type is None:
            os.replace(self.tmp, self.path)
        else:
            try:
                os.unlink(self.tmp)
            except OSError:
                pass
        return False
