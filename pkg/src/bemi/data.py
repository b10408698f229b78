"""Dataset loading (IDX, CSV), per-class sampling and image downsampling."""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from bemi.errors import CapacityError, FormatError, InvalidArgument

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with one class id per row."""

    features: np.ndarray
    labels: np.ndarray
    name: str = ""
    digest: str = ""

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise InvalidArgument("features and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def indices_of(self, cls) -> np.ndarray:
        return np.flatnonzero(self.labels == cls)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.name, self.digest)


# IDX ---------------------------------------------------------------------------


def _read_bytes(doc) -> bytes:
    if isinstance(doc, (bytes, bytearray)):
        data = bytes(doc)
    else:
        data = Path(doc).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data: bytes, magic: int, what: str) -> np.ndarray:
    if len(data) < 8:
        raise FormatError(f"{what}: truncated header at offset {len(data)}")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise FormatError(f"{what}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    ndim = found & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{what}: truncated dimension header at offset {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = math.prod(dims)
    if len(data) < header + size:
        raise FormatError(f"{what}: truncated payload at offset {len(data)}, expected {header + size} bytes")
    if len(data) > header + size:
        raise FormatError(f"{what}: {len(data) - header - size} surplus bytes at offset {header + size}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(image_doc, label_doc, n_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair (raw or gzip-compressed) into a flat-pixel dataset."""
    img_bytes, lab_bytes = _read_bytes(image_doc), _read_bytes(label_doc)
    images = _parse_idx(img_bytes, IDX_IMAGES_MAGIC, "images")
    labels = _parse_idx(lab_bytes, IDX_LABELS_MAGIC, "labels")
    if len(images) != len(labels):
        raise FormatError(f"count mismatch: {len(images)} images at offset 4 vs {len(labels)} labels at offset 4")
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} out of range at offset {8 + bad[0]}")
    digest = hashlib.sha256(img_bytes + lab_bytes).hexdigest()
    return Dataset(images.reshape(len(images), -1).astype(np.int64), labels.astype(np.int64), "idx", digest)


def write_idx(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    """Encode ``(n, rows, cols)`` uint8 images and labels as IDX documents."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(f">{images.ndim}I", *images.shape) + images.tobytes()
    lab = struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", len(labels)) + labels.tobytes()
    return img, lab


def _find(data_dir: Path, stem: str) -> Path:
    for candidate in (data_dir / stem, data_dir / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist_dir(data_dir, split: str = "train") -> Dataset:
    """Load MNIST-layout IDX files (also Fashion-MNIST) from a directory."""
    data_dir = Path(data_dir)
    img, lab = MNIST_FILES[split]
    ds = load_idx(_find(data_dir, img), _find(data_dir, lab))
    return Dataset(ds.features, ds.labels, f"{data_dir.name}/{split}", ds.digest)


# CSV -----------------------------------------------------------------------------


@dataclass
class CsvSplit:
    train: Dataset
    test: Dataset
    dropped_rows: int = 0
    digest: str = ""


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv_heart(document, test_fraction: float = 0.2, seed: int = 0, n_features: int = 13) -> CsvSplit:
    """Read a 13-feature + label CSV and split it deterministically.

    Rows with missing cells (empty or ``?``) are dropped before splitting.
    Labels greater than zero are mapped to class 1 (disease present).
    """
    if not 0 < test_fraction < 1:
        raise InvalidArgument(f"test fraction must lie in (0, 1), got {test_fraction}")
    text = document if isinstance(document, str) and "\n" in document else Path(document).read_text()
    digest = hashlib.sha256(text.encode()).hexdigest()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0] if c.strip() not in ("", "?")):
        rows = rows[1:]
    feats, labels, dropped = [], [], 0
    for rownum, row in enumerate(rows, start=1):
        cells = [c.strip() for c in row]
        if len(cells) != n_features + 1:
            raise FormatError(f"row {rownum}: expected {n_features + 1} columns, got {len(cells)}")
        if any(c in ("", "?") for c in cells):
            dropped += 1
            continue
        values = []
        for col, cell in enumerate(cells, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise FormatError(f"row {rownum}, column {col}: non-numeric cell {cell!r}") from None
        feats.append(values[:-1])
        labels.append(1 if values[-1] > 0 else 0)
    if dropped:
        log.info("dropped %d rows with missing values", dropped)
    X = np.array(feats, dtype=np.float64).reshape(-1, n_features)
    y = np.array(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])
    return CsvSplit(
        Dataset(X[train_idx], y[train_idx], "heart/train", digest),
        Dataset(X[test_idx], y[test_idx], "heart/test", digest),
        dropped,
        digest,
    )


# sampling ----------------------------------------------------------------------------


def sample_per_class(
    dataset: Dataset,
    classes: Sequence,
    r: int,
    seed,
    exclusion: frozenset = frozenset(),
) -> tuple[dict, frozenset]:
    """Draw ``r`` unseen indices per class, uniformly without replacement.

    Returns the per-class index arrays and the exclusion set extended by the
    drawn indices.
    """
    if r < 0:
        raise InvalidArgument("r must be nonnegative")
    rng = np.random.default_rng(seed)
    drawn = {}
    taken = set(exclusion)
    for cls in classes:
        pool = np.array([i for i in dataset.indices_of(cls) if i not in taken], dtype=np.int64)
        if len(pool) < r:
            raise CapacityError(f"class {cls}: only {len(pool)} unseen samples, need {r}")
        pick = np.sort(rng.choice(pool, size=r, replace=False)) if r else np.array([], dtype=np.int64)
        drawn[cls] = pick
        taken.update(int(i) for i in pick)
    return drawn, frozenset(taken)


def build_test_set(dataset: Dataset, classes: Sequence, per_class: int, exclusion: frozenset = frozenset(), seed=None):
    """Balanced test indices: ``per_class`` per class, disjoint from ``exclusion``.

    Without a seed the lowest eligible indices are taken, so every
    experiment tests on the same points.
    """
    out = {}
    for cls in classes:
        pool = np.array([i for i in dataset.indices_of(cls) if i not in exclusion], dtype=np.int64)
        if len(pool) < per_class:
            raise CapacityError(f"class {cls}: only {len(pool)} samples left for testing, need {per_class}")
        if seed is None:
            out[cls] = pool[:per_class]
        else:
            out[cls] = np.sort(np.random.default_rng(seed).choice(pool, size=per_class, replace=False))
    return out


# downsampling --------------------------------------------------------------------------


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean pooling with round-half-up; pads edges symmetrically when needed."""
    if factor < 1:
        raise InvalidArgument(f"downsample factor must be >= 1, got {factor}")
    img = np.asarray(image)
    if img.ndim != 2:
        raise InvalidArgument("downsample expects a 2-D image")
    if factor == 1:
        return img.copy()
    pads = []
    for n in img.shape:
        extra = (-n) % factor
        pads.append((extra // 2, extra - extra // 2))
    if any(p != (0, 0) for p in pads):
        img = np.pad(img, pads, mode="symmetric")
    h, w = img.shape[0] // factor, img.shape[1] // factor
    blocks = img.reshape(h, factor, w, factor).astype(np.int64)
    sums = blocks.sum(axis=(1, 3))
    area = factor * factor
    # round-half-up of sums / area in exact integer arithmetic
    return (2 * sums + area) // (2 * area)


def downsample_dataset(ds: Dataset, factor: int, side: int = 28) -> Dataset:
    if factor == 1:
        return ds
    feats = np.stack([downsample(row.reshape(side, side), factor).ravel() for row in ds.features])
    return Dataset(feats, ds.labels, f"{ds.name}/ds{factor}", ds.digest)


# synthetic -------------------------------------------------------------------------------


def synthetic_dataset(n_classes: int, per_class: int, n_features: int, seed=0, spread: int = 3) -> Dataset:
    """Integer-valued Gaussian blobs, one per class, for tests and demos."""
    rng = np.random.default_rng(seed)
    centers = rng.integers(-6, 7, size=(n_classes, n_features))
    feats, labels = [], []
    for cls in range(n_classes):
        pts = centers[cls] + np.rint(rng.normal(0, spread / 2, size=(per_class, n_features))).astype(np.int64)
        feats.append(pts)
        labels += [cls] * per_class
    return Dataset(np.vstack(feats).astype(np.int64), np.array(labels), "synthetic")
