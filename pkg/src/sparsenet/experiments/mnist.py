"""IDX-format MNIST reader."""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
DATA_DIR_ENV = "SPARSENET_DATA_DIR"

_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


@dataclass
class MnistDataset:
    images: np.ndarray  # (N, 28, 28) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 10)
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("image and label counts differ")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "MnistDataset":
        return MnistDataset(self.images[idx], self.labels[idx], split or self.split)

    def as_input(self) -> np.ndarray:
        """NCHW float32 view for the networks."""
        return self.images[:, None, :, :]


def _read(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _header(raw: bytes, magic: int, ndim: int, path) -> tuple[int, ...]:
    size = 4 * (1 + ndim)
    if len(raw) < size:
        raise IdxFormatError(f"{path}: truncated header")
    fields = np.frombuffer(raw[:size], dtype=">u4")
    if fields[0] != magic:
        raise IdxFormatError(f"{path}: bad magic {fields[0]}, expected {magic}")
    return tuple(int(v) for v in fields[1:])


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    raw = _read(path)
    n, rows, cols = _header(raw, IMAGE_MAGIC, 3, path)
    body = raw[16:]
    if len(body) != n * rows * cols:
        raise IdxFormatError(f"{path}: header says {n}x{rows}x{cols} bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path, classes: int = 10) -> np.ndarray:
    path = Path(path)
    raw = _read(path)
    (n,) = _header(raw, LABEL_MAGIC, 1, path)
    body = raw[8:]
    if len(body) != n:
        raise IdxFormatError(f"{path}: header says {n} labels, found {len(body)}")
    labels = np.frombuffer(body, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= classes:
        raise IdxFormatError(f"{path}: label {labels.max()} outside [0, {classes})")
    return labels


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    header = np.array([IMAGE_MAGIC, *images.shape], dtype=">u4").tobytes()
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    header = np.array([LABEL_MAGIC, len(labels)], dtype=">u4").tobytes()
    Path(path).write_bytes(header + labels.tobytes())


def _locate(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"{stem} not found in {data_dir}")


def default_data_dir() -> Path | None:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def load_mnist(data_dir=None, split: str = "train") -> MnistDataset:
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    if data_dir is None:
        raise FileNotFoundError(f"no data directory given and {DATA_DIR_ENV} is unset")
    img_name, lbl_name = _FILES[split]
    images = read_idx_images(_locate(data_dir, img_name))
    labels = read_idx_labels(_locate(data_dir, lbl_name))
    if len(images) != len(labels):
        raise IdxFormatError(f"{split}: {len(images)} images but {len(labels)} labels")
    return MnistDataset((images / np.float32(255.0)).astype(np.float32), labels, split)


def split_validation(train: MnistDataset, size: int, rng: np.random.Generator):
    """Hold out ``size`` randomly chosen training samples for validation."""
    perm = rng.permutation(len(train))
    return train.subset(np.sort(perm[size:]), "train"), train.subset(np.sort(perm[:size]), "validation")
