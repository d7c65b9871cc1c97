"""MNIST loading from IDX files and IID sharding across workers.

IDX layout (big-endian)::

    images: 0x00000803, N, 28, 28, then N*784 unsigned bytes
    labels: 0x00000801, N, then N unsigned bytes in [0, 9]

Files may be gzip-compressed; compression is detected from the 0x1f8b prefix
rather than the filename.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
IMAGE_ROWS = IMAGE_COLS = 28
N_CLASSES = 10
DATA_DIR_ENV = "FEDCOLLAB_DATA_DIR"

_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class MnistDataset:
    images: np.ndarray  # (N, 784) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 9]

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, indices) -> "MnistDataset":
        indices = np.asarray(indices, dtype=np.intp)
        return MnistDataset(self.images[indices], self.labels[indices])


@dataclass(frozen=True)
class Shard:
    worker_id: int
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def maybe_decompress(raw: bytes) -> bytes:
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _read_header(raw: bytes, magic: int, n_dims: int) -> tuple[int, ...]:
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise FormatError(f"IDX header truncated: {len(raw)} bytes")
    found, *dims = struct.unpack(f">I{n_dims}I", raw[:header_len])
    if found != magic:
        raise FormatError(f"bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(dims)


def _payload(raw: bytes, offset: int, size: int) -> np.ndarray:
    if len(raw) - offset != size:
        raise FormatError(f"IDX payload holds {len(raw) - offset} bytes, header promises {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=offset)


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Return an ``(N, 784)`` uint8 array of raw pixel values."""
    n, rows, cols = _read_header(raw, IMAGES_MAGIC, 3)
    if (rows, cols) != (IMAGE_ROWS, IMAGE_COLS):
        raise FormatError(f"expected 28x28 images, header says {rows}x{cols}")
    pixels = rows * cols
    return _payload(raw, 16, n * pixels).reshape(n, pixels).copy()


def parse_idx_labels(raw: bytes) -> np.ndarray:
    (n,) = _read_header(raw, LABELS_MAGIC, 1)
    labels = _payload(raw, 8, n)
    if n and labels.max() >= N_CLASSES:
        raise FormatError(f"label byte {labels.max()} is not a digit class")
    return labels.astype(np.int64)


def normalize(raw_images: np.ndarray, labels: np.ndarray) -> MnistDataset:
    return MnistDataset(np.asarray(raw_images, dtype=np.float64) / 255.0, np.asarray(labels, dtype=np.int64))


def resolve_data_dir(data_dir: str | os.PathLike | None) -> Path:
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    if data_dir is None:
        raise InputError(f"no data directory given and ${DATA_DIR_ENV} is unset")
    return Path(data_dir)


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (data_dir / name).is_file():
            return data_dir / name
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_split(data_dir: str | os.PathLike, split: str = "train") -> MnistDataset:
    images_name, labels_name = _SPLIT_FILES[split]
    data_dir = Path(data_dir)
    images = parse_idx_images(maybe_decompress(_find(data_dir, images_name).read_bytes()))
    labels = parse_idx_labels(maybe_decompress(_find(data_dir, labels_name).read_bytes()))
    return normalize(images, labels)


def limit_dataset(dataset: MnistDataset, limit: int | None, seed: int) -> MnistDataset:
    """First ``limit`` examples of a seeded shuffle; the full set when ``limit`` is None."""
    if limit is None or limit >= len(dataset):
        return dataset
    if limit < 1:
        raise InputError(f"limit must be positive, got {limit}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(order[:limit]))


def partition_iid(n_examples: int | MnistDataset, k: int, seed: int) -> list[Shard]:
    """Deal a seeded permutation of ``range(N)`` round-robin into ``k`` shards."""
    n = n_examples if isinstance(n_examples, int) else len(n_examples)
    if k < 1:
        raise InputError(f"need at least one shard, got k={k}")
    if k > n:
        raise InputError(f"cannot split {n} examples across {k} workers")
    perm = np.random.default_rng(seed).permutation(n)
    return [Shard(i, perm[i::k]) for i in range(k)]
