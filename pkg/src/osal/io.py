"""Readers and writers for feature, label, config and metrics files."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureSet, RoundMetrics

FEATURE_MAGIC = b"E2FM"
LABEL_HEADER = ("sample_id", "true_class", "split")
METRICS_HEADER = ("round", "test_acc", "query_precision", "u_hat", "pool_size", "calibrated_precision")
SPLITS = ("pool", "test")


class FileFormatError(ValueError):
    """A data or config file does not match its schema."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def write_features(path, matrix) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    n, d = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(matrix.tobytes(order="C"))


def read_features(path) -> FeatureSet:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FileFormatError(path, f"bad magic {data[:4]!r}, expected magic \"E2FM\"")
    if len(data) < 12:
        raise FileFormatError(path, "truncated header")
    n, d = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * n * d
    if len(data) != expected:
        raise FileFormatError(path, f"expected {expected} bytes for {n}x{d} floats, found {len(data)}")
    matrix = np.frombuffer(data, dtype="<f4", offset=12).reshape(n, d).astype(np.float64)
    try:
        return FeatureSet.from_matrix(matrix)
    except ValueError as exc:
        raise FileFormatError(path, str(exc)) from None


@dataclass(frozen=True)
class LabelTable:
    sample_ids: np.ndarray
    true_classes: np.ndarray
    splits: np.ndarray  # str array, "pool" or "test"


def write_labels(path, sample_ids, true_classes, splits) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for sid, cls, split in zip(sample_ids, true_classes, splits):
            writer.writerow((int(sid), int(cls), split))


def read_labels(path) -> LabelTable:
    path = Path(path)
    ids, classes, splits = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABEL_HEADER:
            raise FileFormatError(path, f"header must be {','.join(LABEL_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FileFormatError(path, f"line {lineno}: expected 3 fields")
            try:
                ids.append(int(row[0]))
                classes.append(int(row[1]))
            except ValueError:
                raise FileFormatError(path, f"line {lineno}: sample_id and true_class must be integers") from None
            split = row[2].strip()
            if split not in SPLITS:
                raise FileFormatError(path, f"line {lineno}: field split must be one of {SPLITS}")
            splits.append(split)
    table = LabelTable(np.array(ids, dtype=np.int64), np.array(classes, dtype=np.int64), np.array(splits))
    if np.unique(table.sample_ids).size != table.sample_ids.size:
        raise FileFormatError(path, "duplicate sample_id")
    return table


def align_labels(features: FeatureSet, labels: LabelTable, path="labels") -> LabelTable:
    """Reorder a label table to match the feature rows."""
    if labels.sample_ids.size != features.n_samples:
        raise FileFormatError(path, f"{labels.sample_ids.size} labels for {features.n_samples} feature rows")
    order = np.argsort(labels.sample_ids)
    sorted_ids = labels.sample_ids[order]
    pos = np.searchsorted(sorted_ids, features.sample_ids)
    pos = np.clip(pos, 0, sorted_ids.size - 1)
    if not np.array_equal(sorted_ids[pos], features.sample_ids):
        raise FileFormatError(path, "sample_id values do not match feature rows")
    idx = order[pos]
    return LabelTable(labels.sample_ids[idx], labels.true_classes[idx], labels.splits[idx])


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics(path, rows: list[RoundMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in rows:
            writer.writerow(
                (m.round, _fmt(m.test_accuracy), _fmt(m.observed_precision), m.u_hat, m.pool_size,
                 _fmt(m.calibrated_precision))
            )


def read_metrics(path) -> list[RoundMetrics]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise FileFormatError(path, f"header must be {','.join(METRICS_HEADER)}")
        return [
            RoundMetrics(int(r[0]), float(r[1]), float(r[2]), int(r[3]), int(r[4]), float(r[5]))
            for r in reader
            if r
        ]


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(path, f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(data, dict):
        raise FileFormatError(path, "top-level value must be an object")
    return data
