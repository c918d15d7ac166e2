"""Datasets: IDX ingestion, normalization, subsampling, synthetic blobs, batching."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .augment import Batch, one_hot

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Conventional MNIST statistics; only used when the caller asks for them.
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081


class IDXFormatError(ValueError):
    """Wrong magic number in an IDX file."""


class IDXLengthError(ValueError):
    """IDX payload shorter (or longer) than its header declares."""


class IDXConsistencyError(ValueError):
    """Image and label files disagree on the sample count."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # [N, C, H, W] images or [N, D] vectors, float64
    labels: np.ndarray  # int64 class ids
    num_classes: int
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None
    provenance: str = ""

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def take(self, indices) -> Dataset:
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, inputs=self.inputs[indices], labels=self.labels[indices])


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 2
    dims: int = 3
    samples_per_class: int = 100
    mean_scale: float = 3.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.dims < 2:
            raise ValueError("dims must be >= 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx_bytes(path, expected_magic: int, kind: str) -> tuple[tuple[int, ...], bytes]:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise IDXLengthError(f"{path}: file too short for an IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise IDXFormatError(f"{path}: bad {kind} magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IDXLengthError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    payload = raw[header_len:]
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise IDXLengthError(f"{path}: expected {expected} data bytes, found {len(payload)}")
    return dims, payload


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into a ``[N, 1, H, W]`` dataset in [0, 1]."""
    dims, pixels = _read_idx_bytes(images_path, IMAGE_MAGIC, "image")
    (count,), label_bytes = _read_idx_bytes(labels_path, LABEL_MAGIC, "label")
    if count != dims[0]:
        raise IDXConsistencyError(f"{dims[0]} images but {count} labels")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(dims[0], 1, dims[1], dims[2])
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes,
                   provenance=f"idx:{Path(images_path).name}")


def write_idx(ds: Dataset, images_path, labels_path):
    """Write a ``[N, 1, H, W]`` dataset with pixel values in [0, 1] as IDX bytes."""
    if ds.inputs.ndim != 4 or ds.inputs.shape[1] != 1:
        raise ValueError(f"write_idx expects [N, 1, H, W] inputs, got {ds.inputs.shape}")
    n, _, h, w = ds.inputs.shape
    pixels = np.rint(ds.inputs * 255.0).clip(0, 255).astype(np.uint8)
    for path, payload in (
        (images_path, struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + pixels.tobytes()),
        (labels_path, struct.pack(">II", LABEL_MAGIC, n) + ds.labels.astype(np.uint8).tobytes()),
    ):
        path = Path(path)
        if path.suffix == ".gz":
            # mtime=0 keeps the gzip stream reproducible.
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
                f.write(payload)
        else:
            path.write_bytes(payload)


def _channel_stats(ds: Dataset, values) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    channels = ds.inputs.shape[1] if ds.inputs.ndim == 4 else 1
    if arr.size == 1:
        arr = np.repeat(arr, channels)
    if arr.size != channels:
        raise ValueError(f"expected {channels} per-channel values, got {arr.size}")
    return arr


def _per_channel(ds: Dataset, arr: np.ndarray) -> np.ndarray:
    return arr.reshape(1, -1, 1, 1) if ds.inputs.ndim == 4 else arr.reshape(())


def normalize(ds: Dataset, mean, std) -> Dataset:
    mean = _channel_stats(ds, mean)
    std = _channel_stats(ds, std)
    if np.any(std <= 0):
        raise ValueError("std must be positive")
    inputs = (ds.inputs - _per_channel(ds, mean)) / _per_channel(ds, std)
    return replace(ds, inputs=inputs, mean=tuple(mean.tolist()), std=tuple(std.tolist()))


def denormalize(ds: Dataset) -> Dataset:
    if ds.mean is None:
        return ds
    mean = np.asarray(ds.mean)
    std = np.asarray(ds.std)
    inputs = ds.inputs * _per_channel(ds, std) + _per_channel(ds, mean)
    return replace(ds, inputs=inputs, mean=None, std=None)


def valid_range(ds: Dataset, lo: float = 0.0, hi: float = 1.0) -> tuple[float, float]:
    """Bounds of raw pixel interval ``[lo, hi]`` after the dataset's normalization.

    With per-channel statistics the widest interval across channels is returned.
    """
    if ds.mean is None:
        return lo, hi
    mean = np.asarray(ds.mean)
    std = np.asarray(ds.std)
    return float(((lo - mean) / std).min()), float(((hi - mean) / std).max())


def stratified_split(ds: Dataset, n: int, seed: int) -> tuple[Dataset, Dataset]:
    """Draw ``n`` samples without replacement, keeping class proportions within one sample.

    Returns ``(chosen, rest)``; both are in seeded random order.
    """
    if n > len(ds) or n < 0:
        raise ValueError(f"cannot draw {n} samples from a dataset of {len(ds)}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.labels, return_counts=True)
    exact = counts * n / len(ds) if len(ds) else counts * 0.0
    quota = np.floor(exact).astype(np.int64)
    # Largest remainder; ties go to the lower class id.
    short = n - quota.sum()
    order = np.lexsort((classes, -(exact - quota)))
    quota[order[:short]] += 1

    chosen = []
    for cls, q in zip(classes, quota):
        members = np.flatnonzero(ds.labels == cls)
        chosen.append(rng.choice(members, size=q, replace=False))
    chosen = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    chosen = rng.permutation(chosen)
    mask = np.ones(len(ds), dtype=bool)
    mask[chosen] = False
    rest = rng.permutation(np.flatnonzero(mask))
    return ds.take(chosen), ds.take(rest)


def subsample(ds: Dataset, n: int, seed: int) -> Dataset:
    return stratified_split(ds, n, seed)[0]


def batches(ds: Dataset, size: int, shuffle_seed: int | None = None) -> Iterator[Batch]:
    """Yield one-hot batches of ``size`` samples; the final partial batch is kept."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.arange(len(ds))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(ds))
    for start in range(0, len(ds), size):
        idx = order[start:start + size]
        yield Batch(ds.inputs[idx], one_hot(ds.labels[idx], ds.num_classes), ds.num_classes)


def synthetic_blobs(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.mean_scale, size=(spec.classes, spec.dims))
    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    noise = rng.normal(0.0, 1.0, size=(len(labels), spec.dims))
    inputs = centers[labels] + spec.noise_std * noise
    return Dataset(inputs, labels.astype(np.int64), spec.classes, provenance=f"synthetic:{spec}")


def export_scatter(ds: Dataset, weakened: Dataset, dims: Sequence[int], path):
    """Write original and weakened coordinates on three chosen feature axes as CSV.

    Rows are ``x,y,z,label,kind``; the weakened block follows the original block
    in the same sample order.
    """
    dims = [int(d) for d in dims]
    width = int(np.prod(ds.sample_shape))
    flat = ds.inputs.reshape(len(ds), width)
    weak = weakened.inputs.reshape(len(weakened), width)
    if len(dims) != 3 or len(set(dims)) != 3 or any(d < 0 or d >= width for d in dims):
        raise ValueError(f"need 3 distinct feature indices in [0, {width}), got {dims}")
    if len(weakened) != len(ds):
        raise ValueError("original and weakened datasets differ in length")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "z", "label", "kind"])
        for kind, rows in (("original", flat), ("weakened", weak)):
            for row, label in zip(rows, ds.labels):
                writer.writerow([repr(float(row[d])) for d in dims] + [int(label), kind])
