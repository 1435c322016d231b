"""Feature-file ingestion for pre-extracted representations.

Two on-disk formats:

* CSV with header ``f0,...,f{d-1},label`` and one sample per row.
* Binary: magic bytes ``SDFT``, then two little-endian uint32 (row count,
  column count), then row-major little-endian float32 features.  Labels live
  in a sibling CSV named ``<stem>.labels.csv`` with a single ``label``
  column.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError

MAGIC = b"SDFT"


def labels_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.csv")


def save_features_csv(path, features, labels) -> None:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"f{j}" for j in range(features.shape[1])] + ["label"])
        for row, label in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_features_csv(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or header[-1] != "label" or header[0] != "f0":
                raise InvalidInputError(f"{path}: expected header f0,...,label")
            rows = list(reader)
        if not rows:
            raise InvalidInputError(f"{path}: no samples")
        features = np.array([[float(v) for v in row[:-1]] for row in rows])
        labels = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"{path}: not a feature CSV ({exc})") from exc
    if features.ndim != 2 or features.shape[1] != len(header) - 1:
        raise InvalidInputError(f"{path}: ragged rows")
    return features, labels


def save_features_binary(path, features, labels) -> None:
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2:
        raise InvalidInputError("features must be a 2-d array")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<II", features.shape[0], features.shape[1]))
        handle.write(features.astype("<f4").tobytes(order="C"))
    with open(labels_path(path), "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label"])
        for label in labels:
            writer.writerow([int(label)])


def load_features_binary(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}")
        n_rows, n_cols = struct.unpack("<II", handle.read(8))
        payload = handle.read(4 * n_rows * n_cols)
    if len(payload) != 4 * n_rows * n_cols:
        raise InvalidInputError(f"{path}: truncated payload")
    features = np.frombuffer(payload, dtype="<f4").reshape(n_rows, n_cols)
    with open(labels_path(path), newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["label"]:
            raise InvalidInputError(f"{labels_path(path)}: expected a label column")
        labels = np.array([int(row[0]) for row in reader], dtype=np.int64)
    if labels.size != n_rows:
        raise InvalidInputError(f"{path}: label count does not match rows")
    return features.astype(np.float64), labels


def load_features(path) -> tuple[np.ndarray, np.ndarray]:
    """Load either format, sniffing the binary magic first."""
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == MAGIC:
        return load_features_binary(path)
    return load_features_csv(path)
