"""
Dataset ingestion and preprocessing.

Images are reduced by average pooling to out_side x out_side grayscale cells
and mapped linearly from [0, 255] to [0, pi] for angle encoding.

File formats (all integers little-endian):

QDS-binary (raw images)
    b"QDS1", u32 n_samples, height, width, channels, n_classes, then per
    sample: u8 label, height*width*channels u8 pixels, u8 split tag.

Prepared features
    b"QDF1", u32 n_samples, n_features, n_classes, source_side, meta_len,
    meta_len bytes of UTF-8 JSON metadata, then per sample: u8 label,
    u8 split tag, n_features float32.

Split tags: 0 train, 1 test, 2 validation.
"""

import csv
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from circuit_model import FeatureVector
from errors import DatasetLoadError, ValidationError

logger = logging.getLogger(__name__)

SPLIT_TRAIN = 0
SPLIT_TEST = 1
SPLIT_VALIDATION = 2

QDS_MAGIC = b"QDS1"
PREPARED_MAGIC = b"QDF1"
_QDS_HEADER = struct.Struct("<5I")
_PREPARED_HEADER = struct.Struct("<5I")


class DatasetFormat(str, Enum):
    QDS = "qds"
    CSV = "csv"


@dataclass
class RawDataset:
    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    splits: Optional[np.ndarray] = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        if self.images.ndim == 3:
            self.images = self.images[..., np.newaxis]
        if self.images.ndim != 4:
            raise ValidationError(f"Images must be (n, height, width[, channels]), got shape {self.images.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.splits is None:
            self.splits = np.full(len(self.labels), SPLIT_TRAIN, dtype=np.uint8)
        self.splits = np.asarray(self.splits, dtype=np.uint8).reshape(-1)
        if not len(self.images) == len(self.labels) == len(self.splits):
            raise ValidationError("images, labels and split tags must have equal length")
        _check_labels(self.labels, self.n_classes)

    @property
    def n_samples(self) -> int:
        return len(self.labels)


@dataclass
class PreparedDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    splits: Optional[np.ndarray] = None
    source_side: int = 0
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.splits is None:
            self.splits = np.full(len(self.labels), SPLIT_TRAIN, dtype=np.uint8)
        self.splits = np.asarray(self.splits, dtype=np.uint8).reshape(-1)
        if not len(self.features) == len(self.labels) == len(self.splits):
            raise ValidationError("features, labels and split tags must have equal length")
        if np.any(self.features < 0.0) or np.any(self.features > math.pi) or not np.all(np.isfinite(self.features)):
            raise ValidationError("Prepared features must lie within [0, pi]")
        _check_labels(self.labels, self.n_classes)

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "PreparedDataset":
        """Rows at ``indices``, metadata copied"""
        indices = np.asarray(indices, dtype=np.int64)
        return PreparedDataset(self.features[indices], self.labels[indices], self.n_classes,
                               self.splits[indices], self.source_side, dict(self.metadata))

    def split(self, tag: int) -> "PreparedDataset":
        """Rows tagged with split ``tag``"""
        return self.subset(np.flatnonzero(self.splits == tag))

    def class_counts(self) -> List[int]:
        """Sample count per class"""
        return np.bincount(self.labels, minlength=self.n_classes).tolist()


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if n_classes < 1:
        raise ValidationError(f"n_classes must be positive, got {n_classes}")
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"Labels must lie in [0, {n_classes}), got range "
                              f"[{labels.min()}, {labels.max()}]")


def load(path: str, fmt="qds", n_classes: Optional[int] = None) -> RawDataset:
    """Load a raw dataset in QDS or CSV form"""
    fmt = DatasetFormat(fmt)
    if fmt is DatasetFormat.QDS:
        with open(path, "rb") as f:
            return parse_qds(f.read(), source=path)
    return load_csv(path, n_classes=n_classes)


def parse_qds(data: bytes, source: str = "<qds>") -> RawDataset:
    """Decode QDS bytes into a raw dataset"""
    if len(data) < len(QDS_MAGIC) + _QDS_HEADER.size:
        raise DatasetLoadError(f"{source}: truncated header ({len(data)} bytes)")
    if data[:4] != QDS_MAGIC:
        raise DatasetLoadError(f"{source}: bad magic {data[:4]!r}, expected {QDS_MAGIC!r}")
    n_samples, height, width, channels, n_classes = _QDS_HEADER.unpack_from(data, 4)
    pixels = height * width * channels
    record = np.dtype([("label", "u1"), ("pixels", "u1", (pixels,)), ("split", "u1")])
    offset = 4 + _QDS_HEADER.size
    expected = offset + n_samples * record.itemsize
    if len(data) != expected:
        raise DatasetLoadError(f"{source}: expected {expected} bytes for {n_samples} samples, got {len(data)}")
    body = np.frombuffer(data, dtype=record, count=n_samples, offset=offset)
    labels = body["label"].astype(np.int64)
    if n_samples and labels.max() >= n_classes:
        raise DatasetLoadError(f"{source}: label {labels.max()} >= n_classes {n_classes}")
    splits = body["split"]
    if n_samples and splits.max() > SPLIT_VALIDATION:
        raise DatasetLoadError(f"{source}: unknown split tag {splits.max()}")
    images = body["pixels"].reshape(n_samples, height, width, channels)
    logger.info(f"Loaded {n_samples} samples ({height}x{width}x{channels}, {n_classes} classes) from {source}")
    return RawDataset(images.copy(), labels, n_classes, splits.copy())


def save_qds(dataset: RawDataset, path: str) -> None:
    """Write a raw dataset as QDS"""
    n, height, width, channels = dataset.images.shape
    record = np.dtype([("label", "u1"), ("pixels", "u1", (height * width * channels,)), ("split", "u1")])
    body = np.zeros(n, dtype=record)
    body["label"] = dataset.labels
    body["pixels"] = dataset.images.reshape(n, -1)
    body["split"] = dataset.splits
    with open(path, "wb") as f:
        f.write(QDS_MAGIC)
        f.write(_QDS_HEADER.pack(n, height, width, channels, dataset.n_classes))
        f.write(body.tobytes())
    logger.info(f"Wrote {n} samples to {path}")


def load_csv(path: str, n_classes: Optional[int] = None) -> RawDataset:
    """Rows of square grayscale pixels followed by the label; a header row is optional"""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                numbers = [float(cell) for cell in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise DatasetLoadError(f"{path}: line {lineno}: non-numeric value")
            for cell, number in zip(row, numbers):
                if not math.isfinite(number) or not number.is_integer():
                    raise DatasetLoadError(f"{path}: line {lineno}: {cell.strip()!r} is not an integer")
            rows.append((lineno, [int(number) for number in numbers]))
    if not rows:
        raise DatasetLoadError(f"{path}: no samples")

    width = len(rows[0][1])
    side = math.isqrt(width - 1)
    if side * side != width - 1:
        raise DatasetLoadError(f"{path}: {width - 1} pixels per row is not a square image")
    for lineno, values in rows:
        if len(values) != width:
            raise DatasetLoadError(f"{path}: line {lineno}: expected {width} columns, got {len(values)}")

    table = np.array([values for _, values in rows], dtype=np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    if pixels.min() < 0 or pixels.max() > 255:
        raise DatasetLoadError(f"{path}: pixel values must lie in [0, 255]")
    if labels.min() < 0:
        raise DatasetLoadError(f"{path}: negative label")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    elif labels.max() >= n_classes:
        raise DatasetLoadError(f"{path}: label {labels.max()} >= n_classes {n_classes}")
    logger.info(f"Loaded {len(labels)} samples ({side}x{side}) from {path}")
    return RawDataset(pixels.reshape(-1, side, side, 1).astype(np.uint8), labels, n_classes)


def save_prepared(dataset: PreparedDataset, path: str, metadata: Optional[Dict[str, object]] = None) -> None:
    """Write a prepared dataset with its JSON metadata block"""
    meta = dict(dataset.metadata)
    meta.update(metadata or {})
    meta["source_side"] = dataset.source_side
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    record = np.dtype([("label", "u1"), ("split", "u1"), ("features", "<f4", (dataset.n_features,))])
    body = np.zeros(dataset.n_samples, dtype=record)
    body["label"] = dataset.labels
    body["split"] = dataset.splits
    body["features"] = dataset.features
    with open(path, "wb") as f:
        f.write(PREPARED_MAGIC)
        f.write(_PREPARED_HEADER.pack(dataset.n_samples, dataset.n_features, dataset.n_classes,
                                      dataset.source_side, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(body.tobytes())
    logger.info(f"Wrote {dataset.n_samples} prepared samples ({dataset.n_features} features) to {path}")


def load_prepared(path: str) -> PreparedDataset:
    """Read a prepared dataset written by ``save_prepared``"""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 + _PREPARED_HEADER.size:
        raise DatasetLoadError(f"{path}: truncated header")
    if data[:4] != PREPARED_MAGIC:
        raise DatasetLoadError(f"{path}: bad magic {data[:4]!r}, expected {PREPARED_MAGIC!r}")
    n_samples, n_features, n_classes, source_side, meta_len = _PREPARED_HEADER.unpack_from(data, 4)
    offset = 4 + _PREPARED_HEADER.size
    try:
        metadata = json.loads(data[offset:offset + meta_len].decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetLoadError(f"{path}: unreadable metadata block: {e}")
    offset += meta_len
    record = np.dtype([("label", "u1"), ("split", "u1"), ("features", "<f4", (n_features,))])
    expected = offset + n_samples * record.itemsize
    if len(data) != expected:
        raise DatasetLoadError(f"{path}: expected {expected} bytes for {n_samples} samples, got {len(data)}")
    body = np.frombuffer(data, dtype=record, count=n_samples, offset=offset)
    # float32 rounding can push pi just past the bound
    features = np.clip(body["features"].astype(np.float64), 0.0, math.pi)
    try:
        return PreparedDataset(features, body["label"].astype(np.int64), n_classes, body["split"].copy(),
                               source_side, metadata)
    except ValidationError as e:
        raise DatasetLoadError(f"{path}: {e}")


def _window_starts(side: int, out_side: int) -> np.ndarray:
    # first side % out_side windows are one pixel wider
    sizes = np.full(out_side, side // out_side)
    sizes[: side % out_side] += 1
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]), sizes


def average_pool(image: np.ndarray, out_side: int) -> np.ndarray:
    """Channel-mean grayscale, then mean over an out_side x out_side partition of windows"""
    image = np.asarray(image, dtype=np.float64)
    gray = image.mean(axis=2) if image.ndim == 3 else image
    if gray.ndim != 2:
        raise ValidationError(f"Expected a 2-D or 3-D image, got shape {image.shape}")
    height, width = gray.shape
    if out_side < 1 or out_side > min(height, width):
        raise ValidationError(f"out_side {out_side} must lie in [1, {min(height, width)}]")
    row_starts, row_sizes = _window_starts(height, out_side)
    col_starts, col_sizes = _window_starts(width, out_side)
    sums = np.add.reduceat(np.add.reduceat(gray, row_starts, axis=0), col_starts, axis=1)
    return sums / np.outer(row_sizes, col_sizes)


def normalize(pooled: np.ndarray) -> FeatureVector:
    """v -> v / 255 * pi, flattened row-major"""
    values = np.asarray(pooled, dtype=np.float64).reshape(-1) / 255.0 * math.pi
    return FeatureVector(np.clip(values, 0.0, math.pi))


def prepare(raw: RawDataset, out_side: int) -> PreparedDataset:
    """Pool and normalize every image of a raw dataset"""
    features = np.stack([normalize(average_pool(image, out_side)).values for image in raw.images])
    return PreparedDataset(features, raw.labels.copy(), raw.n_classes, raw.splits.copy(),
                           source_side=raw.images.shape[1], metadata={"out_side": out_side})


def stratified_indices(labels: np.ndarray, per_class: int, n_classes: int, seed: int) -> np.ndarray:
    """First ``per_class`` indices of each class under a seeded shuffle, class-major"""
    labels = np.asarray(labels)
    order = np.random.default_rng(seed).permutation(len(labels))
    chosen = []
    for c in range(n_classes):
        members = order[labels[order] == c]
        if len(members) < per_class:
            raise ValidationError(f"Class {c} has {len(members)} samples, {per_class} required")
        chosen.append(members[:per_class])
    return np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)


def holdout_indices(n_samples: int, fraction: float, seed: int):
    """Seeded (kept, held_out) split; at least one sample is held out when n_samples >= 2"""
    order = np.random.default_rng(seed).permutation(n_samples)
    n_out = int(round(n_samples * fraction))
    if n_samples >= 2:
        n_out = min(max(n_out, 1), n_samples - 1)
    else:
        n_out = 0
    return np.sort(order[n_out:]), np.sort(order[:n_out])


def truncate(dataset: PreparedDataset, max_samples: Optional[int], seed: int) -> PreparedDataset:
    """Seeded selection of at most ``max_samples`` samples, original order kept"""
    if max_samples is None or dataset.n_samples <= max_samples:
        return dataset
    keep = np.sort(np.random.default_rng(seed).permutation(dataset.n_samples)[:max_samples])
    return dataset.subset(keep)


SYNTH_KINDS = {
    "two-blob": [(0.28, 0.28), (0.72, 0.72)],
    "four-corner": [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)],
    "ring": [0.12, 0.25, 0.38],
}


def synth_dataset(kind: str, n_per_class: int, side: int, seed: int, test_per_class: int = 0) -> RawDataset:
    """
    Deterministic synthetic images with class-dependent bright structure.

    two-blob / four-corner: a Gaussian blob whose centre depends on the class.
    ring: concentric rings of class-dependent radius (3 classes).
    Samples are class-major; the last ``test_per_class`` of each class are tagged test.
    """
    if kind not in SYNTH_KINDS:
        raise ValidationError(f"Unknown synthetic kind {kind!r}, expected one of {sorted(SYNTH_KINDS)}")
    rng = np.random.default_rng(seed)
    grid = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    layouts = SYNTH_KINDS[kind]

    images, labels, splits = [], [], []
    for label, layout in enumerate(layouts):
        for i in range(n_per_class + test_per_class):
            jitter = rng.normal(0.0, 0.03, size=2)
            if kind == "ring":
                radius = np.hypot(yy - 0.5 - jitter[0], xx - 0.5 - jitter[1])
                signal = np.exp(-((radius - layout) ** 2) / (2 * 0.05 ** 2))
            else:
                cy, cx = layout[0] + jitter[0], layout[1] + jitter[1]
                signal = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.15 ** 2))
            image = 30.0 + 200.0 * signal + rng.normal(0.0, 10.0, size=(side, side))
            images.append(np.clip(np.rint(image), 0, 255).astype(np.uint8))
            labels.append(label)
            splits.append(SPLIT_TRAIN if i < n_per_class else SPLIT_TEST)
    return RawDataset(np.stack(images)[..., np.newaxis], np.array(labels), len(layouts), np.array(splits))
