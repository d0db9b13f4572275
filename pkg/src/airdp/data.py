"""Datasets, device partitions and file I/O (IDX for MNIST, CSV for the
synthetic regression set)."""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, PreconditionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Covariates ``U`` (one sample per row) and labels ``v``.

    Labels are real for regression and integer class indices for
    classification.
    """

    U: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2:
            raise DimensionError("U must be a matrix")
        if self.U.shape[0] != self.v.shape[0]:
            raise DimensionError(f"{self.U.shape[0]} rows but {self.v.shape[0]} labels")
        if self.U.shape[0] < 1:
            raise DimensionError("dataset must hold at least one sample")
        self.U.setflags(write=False)
        self.v.setflags(write=False)

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def n(self) -> int:
        return self.U.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.U[idx].copy(), self.v[idx].copy())


@dataclass(frozen=True)
class Partition:
    """Disjoint index sets, one per device, covering the whole dataset."""

    shards: tuple[np.ndarray, ...]
    n_total: int = field(default=-1)

    def __post_init__(self):
        total = sum(len(s) for s in self.shards)
        if self.n_total == -1:
            object.__setattr__(self, "n_total", total)
        if total != self.n_total:
            raise PreconditionError("shard sizes do not sum to the dataset size")
        merged = np.concatenate(self.shards) if self.shards else np.array([], int)
        if len(np.unique(merged)) != total or (total and (merged.min() < 0 or merged.max() >= total)):
            raise PreconditionError("shards must be disjoint and cover 0..n-1")
        for s in self.shards:
            s.setflags(write=False)

    @property
    def K(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.shards])


def generate_synthetic(n: int, d: int = 10, noise_std: float = 0.2, rng=None) -> Dataset:
    """Gaussian covariates with labels ``v = u[1] + 3 u[4] + noise_std * z``.

    Indices are 0-based; they are the 2nd and 5th covariates.
    """
    if d < 5:
        raise DimensionError("synthetic labels use covariate 5, so d >= 5")
    if rng is None:
        rng = np.random.default_rng()
    U = rng.standard_normal((n, d))
    z = rng.standard_normal(n)
    v = U[:, 1] + 3.0 * U[:, 4] + noise_std * z
    return Dataset(U, v)


def _split_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + 1 if i < extra else base for i in range(k)]


def _from_sizes(sizes) -> Partition:
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = tuple(np.arange(bounds[i], bounds[i + 1]) for i in range(len(sizes)))
    return Partition(shards, int(bounds[-1]))


def partition_uniform(dataset: Dataset | int, K: int) -> Partition:
    """Contiguous shards whose sizes differ by at most one (larger first)."""
    n = dataset if isinstance(dataset, int) else dataset.n
    if K < 1 or K > n:
        raise PreconditionError(f"cannot split {n} samples over {K} devices")
    return _from_sizes(_split_sizes(n, K))


def partition_skewed(dataset: Dataset | int, K: int, max_fraction: float) -> Partition:
    """Device 0 holds ``ceil(max_fraction * n)`` samples; the rest share evenly."""
    n = dataset if isinstance(dataset, int) else dataset.n
    if K < 1 or K > n:
        raise PreconditionError(f"cannot split {n} samples over {K} devices")
    if K == 1:
        return _from_sizes([n])
    # tolerate float round-off in max_fraction * n
    big = math.ceil(max_fraction * n - 1e-9)
    if not 1.0 / K - 1e-12 <= max_fraction < 1.0 or big > n - (K - 1):
        raise PreconditionError(f"max_fraction {max_fraction} infeasible for n={n}, K={K}")
    big = max(big, math.ceil(n / K))
    return _from_sizes([big] + _split_sizes(n - big, K - 1))


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    found, = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Read an IDX image/label pair into a classification dataset.

    Pixels are scaled to [0, 1], each image is flattened and a trailing
    bias entry of 1.0 is appended. ``limit`` keeps the first samples in
    file order.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    n = images.shape[0]
    U = np.empty((n, images[0].size + 1))
    U[:, :-1] = images.reshape(n, -1) / 255.0
    U[:, -1] = 1.0
    return Dataset(U, labels.astype(np.int64))


def write_idx(path, array) -> None:
    """Write a uint8 array in IDX format (3-d images or 1-d labels)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"u{j + 1}" for j in range(dataset.d)] + ["v"])
        for u, v in zip(dataset.U, dataset.v):
            writer.writerow([repr(float(x)) for x in u] + [repr(float(v))])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: missing header row")
        rows = [list(map(float, r)) for r in reader if r]
    if not rows:
        raise FormatError(f"{path}: no samples")
    arr = np.array(rows)
    if arr.shape[1] != len(header):
        raise FormatError(f"{path}: header has {len(header)} columns, rows have {arr.shape[1]}")
    return Dataset(arr[:, :-1].copy(), arr[:, -1].copy())
