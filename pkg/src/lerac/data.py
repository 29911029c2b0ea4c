"""Desk-scale datasets, file loaders and deterministic batching."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetEmptyError, FormatError, ValidationError

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Dataset:
    """Samples with integer labels; ``splits`` tags every sample."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    splits: np.ndarray = None
    stats: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        m = len(self.inputs)
        if m == 0:
            raise DatasetEmptyError("dataset has no samples")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (m,):
            raise ValidationError(f"{m} inputs but labels have shape {labels.shape}")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ValidationError(f"labels must lie in [0, {self.class_count})")
        splits = self.splits
        if splits is None:
            splits = np.full(m, "train")
        splits = np.asarray(splits, dtype="<U10")
        if splits.shape != (m,) or not np.isin(splits, SPLITS).all():
            raise ValidationError(f"split tags must be one of {SPLITS} for every sample")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "splits", splits)

    def __len__(self):
        return len(self.inputs)

    def split(self, name: str) -> "Dataset":
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        mask = self.splits == name
        if not mask.any():
            raise DatasetEmptyError(f"split {name!r} is empty")
        return Dataset(self.inputs[mask], self.labels[mask], self.class_count,
                       self.splits[mask], self.stats)

    def split_sizes(self) -> dict:
        return {s: int((self.splits == s).sum()) for s in SPLITS}

    def with_validation(self, fraction: float = 0.1, seed: int = 0) -> "Dataset":
        """Move a seeded ``fraction`` of the train split to validation.

        Leaves the dataset unchanged when it already has validation samples.
        """
        if (self.splits == "validation").any():
            return self
        train_idx = np.flatnonzero(self.splits == "train")
        count = int(round(fraction * len(train_idx)))
        if count < 1 or count >= len(train_idx):
            raise ValidationError(f"validation fraction {fraction} leaves an empty split")
        rng = np.random.default_rng(seed)
        chosen = train_idx[rng.permutation(len(train_idx))[:count]]
        splits = self.splits.copy()
        splits[chosen] = "validation"
        return Dataset(self.inputs, self.labels, self.class_count, splits, self.stats)


def concat(parts, tags) -> Dataset:
    """Join datasets, retagging each one wholesale with the matching split."""
    classes = max(p.class_count for p in parts)
    inputs = np.concatenate([p.inputs for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    splits = np.concatenate([np.full(len(p), t) for p, t in zip(parts, tags)])
    return Dataset(inputs, labels, classes, splits)


def synth_dataset(kind: str, classes: int, per_class: int, noise: float = 0.1,
                  seed: int = 0, shape=None, dtype="float32",
                  test_per_class: int = 0) -> Dataset:
    """Generate ``classes * per_class`` train samples (plus optional test ones).

    ``spirals`` are interleaved 2-d arms. ``blobs`` are isotropic Gaussian
    clusters with standard deviation ``noise``; ``shape`` (e.g. ``(1, 12, 12)``)
    reshapes each blob sample into an image, otherwise samples are 2-d.
    Test samples come from the same arms / cluster means as the train ones.
    """
    if classes < 2 or per_class < 1 or test_per_class < 0:
        raise ValidationError("need classes >= 2, per_class >= 1, test_per_class >= 0")
    if noise < 0:
        raise ValidationError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.repeat(np.arange(classes), per_class),
                             np.repeat(np.arange(classes), test_per_class)])
    splits = np.repeat(["train", "test"], [classes * per_class, classes * test_per_class])
    if kind == "spirals":
        if shape is not None:
            raise ValidationError("spirals are 2-d only")
        t = rng.uniform(0.05, 1.0, size=labels.size)
        angle = 2 * np.pi * labels / classes + 1.75 * np.pi * t
        angle = angle + noise * rng.standard_normal(labels.size)
        x = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
    elif kind == "blobs":
        dims = 2 if shape is None else int(np.prod(shape))
        if shape is None:
            phase = 2 * np.pi * np.arange(classes) / classes
            means = 4.0 * np.stack([np.cos(phase), np.sin(phase)], axis=1)
        else:
            means = rng.standard_normal((classes, dims))
        x = means[labels] + noise * rng.standard_normal((labels.size, dims))
        if shape is not None:
            x = x.reshape((labels.size, *shape))
    else:
        raise ValidationError(f"unknown synthetic dataset kind {kind!r}")
    return Dataset(x.astype(dtype), labels, classes, splits)


IDX_UBYTE = 0x08


def _read_idx(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise FormatError("file too short for an IDX magic number", len(buf))
    zero, dtype_code, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0:
        raise FormatError("IDX magic must start with two zero bytes", 0)
    if dtype_code != IDX_UBYTE:
        raise FormatError(f"unsupported IDX element type 0x{dtype_code:02x}", 2)
    if ndim < 1:
        raise FormatError("IDX file declares zero dimensions", 3)
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise FormatError("IDX dimension header truncated", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - header_end
    if payload != expected:
        raise FormatError(f"IDX payload has {payload} bytes, header implies {expected}",
                          header_end)
    return np.frombuffer(buf, dtype=np.uint8, offset=header_end).reshape(dims)


def write_idx(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, IDX_UBYTE, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_idx(images_path, labels_path, class_count: int | None = None,
             dtype="float32") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1].

    3-d image files (N, H, W) gain a channel axis: (N, 1, H, W).
    """
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1:
        raise FormatError(f"label file must be 1-d, got {labels.ndim} dims", 3)
    if images.shape[0] != labels.shape[0]:
        raise ValidationError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DatasetEmptyError("IDX file holds no samples")
    if images.ndim == 3:
        images = images[:, None]
    classes = int(labels.max()) + 1 if class_count is None else class_count
    return Dataset(images.astype(dtype) / 255, labels.astype(np.int64), classes)


def save_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write inputs in [0, 1] back as unsigned bytes (inverse of ``load_idx``)."""
    pixels = np.rint(np.asarray(ds.inputs, dtype=np.float64) * 255)
    if pixels.ndim == 4 and pixels.shape[1] == 1:
        pixels = pixels[:, 0]
    write_idx(images_path, pixels)
    write_idx(labels_path, ds.labels)


def load_csv(path, label_column: str = "label", class_count: int | None = None,
             dtype="float32") -> Dataset:
    """Headered CSV: every column except ``label_column`` is a numeric feature."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [r for r in reader if r]
    if not header or not rows:
        raise DatasetEmptyError(f"{path} holds no samples")
    if label_column not in header:
        raise ValidationError(f"label column {label_column!r} not in header {header}")
    li = header.index(label_column)
    feats, labels = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise FormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            label = int(row[li])
            feats.append([float(v) for i, v in enumerate(row) if i != li])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        labels.append(label)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise ValidationError("labels must be non-negative")
    classes = int(labels.max()) + 1 if class_count is None else class_count
    if labels.max() >= classes:
        raise ValidationError(f"label {labels.max()} out of range for {classes} classes")
    return Dataset(np.asarray(feats, dtype=dtype), labels, classes)


def _channel_axes(x):
    # per-channel for images, per-feature for flat inputs
    return (0,) + tuple(range(2, x.ndim))


def normalize(ds: Dataset, stats=None) -> Dataset:
    """Standardize per channel with ``stats=(mean, std)`` or train-split stats."""
    x = ds.inputs
    axes = _channel_axes(x)
    if stats is None:
        train = x[ds.splits == "train"]
        if len(train) == 0:
            raise DatasetEmptyError("cannot compute statistics without train samples")
        t64 = train.astype(np.float64)
        mean = t64.mean(axis=axes)
        std = t64.std(axis=axes)
    else:
        mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    if np.any(std <= 0):
        raise ValidationError("per-channel std must be > 0")
    shape = (1, -1) + (1,) * (x.ndim - 2)
    out = (x.astype(np.float64) - mean.reshape(shape)) / std.reshape(shape)
    return Dataset(out.astype(x.dtype), ds.labels, ds.class_count, ds.splits, (mean, std))


@dataclass
class BatchStream:
    """Shuffled mini-batches whose order depends only on (seed, epoch)."""

    source: Dataset
    batch_size: int
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")

    def permutation(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, epoch])
        return rng.permutation(len(self.source))

    def batches(self, epoch: int):
        """Yield ``(inputs, labels)``; the last partial batch is kept."""
        order = self.permutation(epoch)
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            yield self.source.inputs[idx], self.source.labels[idx]
