"""Dataset ingestion: delimited text, IDX binary, synthetic generators.

All loaders and generators are pure functions of (bytes, seed, config).
Splitting computes normalization statistics on the training part only and
applies them to both parts; the record kept on the dataset is enough to
invert the transform exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

REGRESSION = "regression"
CLASSIFICATION = "classification"


class DataFormatError(ValueError):
    """Input file does not parse under the declared schema."""


@dataclass(frozen=True, eq=False)
class NormalizationRecord:
    """Per-column shifts/scales applied to a dataset (train statistics)."""

    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: np.ndarray | None = None
    target_scale: np.ndarray | None = None


@dataclass(eq=False)
class Dataset:
    features: np.ndarray  # (n, n_features)
    targets: np.ndarray  # (n, n_outputs) floats, or (n,) integer labels
    task: str = REGRESSION
    normalization: NormalizationRecord | None = None

    def __post_init__(self):
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task '{self.task}'")
        if np.isnan(self.features).any():
            raise DataFormatError("features contain NaN after ingestion")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.features[idx], self.targets[idx], self.task, self.normalization
        )


@dataclass(frozen=True)
class DelimitedSchema:
    """How to read a delimited text file. delimiter=None splits on any
    whitespace. Negative target column indices count from the end."""

    delimiter: str | None = None
    has_header: bool = False
    target_columns: tuple = (-1,)
    task: str = REGRESSION


def load_delimited(path, schema: DelimitedSchema = DelimitedSchema()) -> Dataset:
    rows = []
    width = None
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if schema.has_header and lines:
        lines = lines[1:]
    row_number = 0
    for line in lines:
        if not line.strip():
            continue
        row_number += 1
        cells = line.split(schema.delimiter) if schema.delimiter else line.split()
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise DataFormatError(
                f"{path}: row {row_number}: expected {width} columns, got {len(cells)}"
            )
        parsed = []
        for cell in cells:
            try:
                parsed.append(float(cell))
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {row_number}: non-numeric cell {cell!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    target_idx = sorted({c % table.shape[1] for c in schema.target_columns})
    feature_idx = [c for c in range(table.shape[1]) if c not in target_idx]
    features = table[:, feature_idx]
    targets = table[:, target_idx]
    if schema.task == CLASSIFICATION:
        flat = targets[:, 0]
        if not np.allclose(flat, np.round(flat)):
            raise DataFormatError(f"{path}: classification targets must be integers")
        return Dataset(features, flat.astype(np.int64), CLASSIFICATION)
    return Dataset(features, targets, REGRESSION)


def _read_be32(fh, path, what):
    raw = fh.read(4)
    if len(raw) != 4:
        raise DataFormatError(f"{path}: truncated while reading {what}")
    return struct.unpack(">i", raw)[0]


def load_idx(images_path, labels_path, limit=None) -> Dataset:
    """Read the big-endian IDX image/label container pair.

    Pixels are scaled to [0, 1]; labels stay integer. ``limit`` keeps at
    most that many leading examples (0 gives an empty dataset).
    """
    with open(images_path, "rb") as fh:
        magic = _read_be32(fh, images_path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic {magic:#010x}, "
                f"expected {IDX_IMAGE_MAGIC:#010x}"
            )
        count = _read_be32(fh, images_path, "count")
        n_rows = _read_be32(fh, images_path, "rows")
        n_cols = _read_be32(fh, images_path, "cols")
        raw = fh.read()
    if len(raw) < count * n_rows * n_cols:
        raise DataFormatError(f"{images_path}: pixel data shorter than declared")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * n_rows * n_cols)

    with open(labels_path, "rb") as fh:
        magic = _read_be32(fh, labels_path, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic {magic:#010x}, "
                f"expected {IDX_LABEL_MAGIC:#010x}"
            )
        label_count = _read_be32(fh, labels_path, "count")
        label_raw = fh.read()
    if label_count != count:
        raise DataFormatError(
            f"{labels_path}: {label_count} labels but {images_path} has "
            f"{count} images"
        )
    if len(label_raw) < label_count:
        raise DataFormatError(f"{labels_path}: label data shorter than declared")
    labels = np.frombuffer(label_raw, dtype=np.uint8, count=label_count)

    if limit is not None:
        count = min(count, int(limit))
    features = (
        pixels[: count * n_rows * n_cols]
        .reshape(count, n_rows * n_cols)
        .astype(float)
        / 255.0
    )
    return Dataset(features, labels[:count].astype(np.int64), CLASSIFICATION)


def save_idx(images, labels, images_path, labels_path) -> None:
    """Write a uint8 image stack (n, rows, cols) and labels as IDX files."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or images.ndim != 3:
        raise ValueError("images must be a uint8 array of shape (n, rows, cols)")
    if labels.shape != (images.shape[0],):
        raise ValueError("labels must match the number of images")
    n, r, c = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, r, c))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, n))
        fh.write(labels.astype(np.uint8).tobytes())


def make_synthetic_regression(
    seed, n, n_features, noise_sigma, weights=None, function=None
) -> Dataset:
    """Standard-normal features; targets from a linear map (or a supplied
    function of the feature matrix) plus Gaussian noise."""
    if n < 1 or n_features < 1:
        raise ValueError("need n >= 1 and n_features >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, n_features))
    if function is not None:
        signal = np.asarray(function(x), dtype=float)
    else:
        w = (
            rng.standard_normal(n_features)
            if weights is None
            else np.asarray(weights, dtype=float)
        )
        signal = x @ w
    if signal.ndim == 1:
        signal = signal[:, None]
    noise = noise_sigma * rng.standard_normal(signal.shape)
    return Dataset(x, signal + noise, REGRESSION)


def split(dataset: Dataset, fraction, seed, standardize=None):
    """Seeded disjoint/exhaustive split; train statistics normalize both.

    ``standardize`` defaults to True for regression (features and targets)
    and False for classification.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = dataset.n
    n_train = int(round(n * fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"degenerate split: {n_train}/{n - n_train} of {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    train = dataset.subset(perm[:n_train])
    test = dataset.subset(perm[n_train:])
    if standardize is None:
        standardize = dataset.task == REGRESSION
    if not standardize:
        return train, test

    def stats(arr):
        mean = arr.mean(axis=0)
        scale = arr.std(axis=0)
        scale[scale == 0] = 1.0
        return mean, scale

    f_mean, f_scale = stats(train.features)
    if dataset.task == REGRESSION:
        t_mean, t_scale = stats(train.targets)
    else:
        t_mean = t_scale = None
    record = NormalizationRecord(f_mean, f_scale, t_mean, t_scale)

    def apply(part):
        feats = (part.features - f_mean) / f_scale
        targs = part.targets
        if t_mean is not None:
            targs = (targs - t_mean) / t_scale
        return Dataset(feats, targs, part.task, record)

    return apply(train), apply(test)


def denormalize(dataset: Dataset) -> Dataset:
    """Invert the recorded normalization, recovering original units."""
    rec = dataset.normalization
    if rec is None:
        return dataset
    feats = dataset.features * rec.feature_scale + rec.feature_mean
    targs = dataset.targets
    if rec.target_mean is not None:
        targs = targs * rec.target_scale + rec.target_mean
    return Dataset(feats, targs, dataset.task, None)
