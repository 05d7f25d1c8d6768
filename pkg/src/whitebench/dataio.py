"""Dataset file formats: CSV (one row per sample) and the wbds binary format.

wbds layout (all integers little-endian): magic "WBDS", u16 version = 1,
u32 d, u32 n, then d*n float64 little-endian, column-major. The label
companion uses magic "WBLB" with the same layout (k, n instead of d, n) and
lives next to the dataset file with extension ".wblb". Ingested matrices are
oriented rows=features, samples as columns.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .datatypes import Dataset, LabelSet
from .errors import ParseError, ValidationError

FORMATS = ("csv", "wbds")
_WBDS_MAGIC = b"WBDS"
_WBLB_MAGIC = b"WBLB"
_VERSION = 1


def _float_repr(x: float) -> str:
    return repr(float(x))


# -- csv ---------------------------------------------------------------------

def export_csv(path, X: Dataset, labels: LabelSet | None = None):
    """One row per sample: feature columns f0..f{d-1} plus optional label column.

    One-hot labels are stored as their class index; real-valued labels as
    y0..y{k-1} columns.
    """
    path = Path(path)
    d = X.feature_dim
    header = [f"f{i}" for i in range(d)]
    label_cols = 0
    if labels is not None:
        if labels.encoding == "one_hot":
            header.append("label")
        else:
            label_cols = labels.output_dim
            header.extend(f"y{i}" for i in range(label_cols))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        classes = labels.class_indices() if labels is not None and labels.encoding == "one_hot" else None
        for j in range(X.sample_count):
            row = [_float_repr(v) for v in X.values[:, j]]
            if classes is not None:
                row.append(str(int(classes[j])))
            elif label_cols:
                row.extend(_float_repr(v) for v in labels.targets[:, j])
            writer.writerow(row)


def ingest_csv(path, split_tag: str = "combined"):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        feature_idx = [i for i, name in enumerate(header) if name.startswith("f")]
        label_idx = header.index("label") if "label" in header else None
        y_idx = [i for i, name in enumerate(header) if name.startswith("y")]
        if not feature_idx:
            raise ParseError(f"{path}: header has no feature columns (f0, f1, ...)")
        columns, class_ids, y_rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                values = [float(row[i]) for i in feature_idx]
                if label_idx is not None:
                    class_ids.append(int(row[label_idx]))
                if y_idx:
                    y_rows.append([float(row[i]) for i in y_idx])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise ParseError(f"{path}: line {lineno} contains non-finite values")
            columns.append(values)
    if not columns:
        raise ParseError(f"{path}: no data rows")
    X = Dataset(np.array(columns, dtype=np.float64).T, split_tag=split_tag)
    labels = None
    if label_idx is not None:
        ids = np.array(class_ids)
        k = int(ids.max()) + 1 if ids.size else 0
        onehot = np.zeros((max(k, 1), ids.size))
        onehot[ids, np.arange(ids.size)] = 1.0
        labels = LabelSet(onehot, encoding="one_hot")
    elif y_rows:
        labels = LabelSet(np.array(y_rows, dtype=np.float64).T, encoding="real_valued")
    return X, labels


# -- wbds --------------------------------------------------------------------

def _write_block(path, magic: bytes, matrix: np.ndarray):
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes(order="F"))


def _read_block(path, magic: bytes) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 14:
        raise ParseError(f"{path}: truncated header ({len(data)} bytes)")
    if data[:4] != magic:
        raise ParseError(
            f"{path}: bad magic {data[:4]!r} at offset 0, expected {magic!r} "
            "(unsupported format)"
        )
    (version,) = struct.unpack_from("<H", data, 4)
    if version != _VERSION:
        raise ParseError(f"{path}: unsupported version {version} at offset 4")
    rows, cols = struct.unpack_from("<II", data, 6)
    expected = 14 + 8 * rows * cols
    if len(data) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=14)
    return flat.reshape((rows, cols), order="F").astype(np.float64)


def label_companion_path(path) -> Path:
    return Path(path).with_suffix(".wblb")


def export_wbds(path, X: Dataset, labels: LabelSet | None = None):
    _write_block(path, _WBDS_MAGIC, X.values)
    if labels is not None:
        _write_block(label_companion_path(path), _WBLB_MAGIC, labels.targets)


def ingest_wbds(path, split_tag: str = "combined"):
    X = Dataset(_read_block(path, _WBDS_MAGIC), split_tag=split_tag)
    labels = None
    companion = label_companion_path(path)
    if companion.exists():
        targets = _read_block(companion, _WBLB_MAGIC)
        if targets.shape[1] != X.sample_count:
            raise ParseError(f"{companion}: {targets.shape[1]} label columns for {X.sample_count} samples")
        one_hot = bool(
            np.all(np.sum(targets == 1.0, axis=0) == 1)
            and np.all(np.sum(targets == 0.0, axis=0) == targets.shape[0] - 1)
        )
        labels = LabelSet(targets, encoding="one_hot" if one_hot else "real_valued")
    return X, labels


def ingest(path, fmt: str, split_tag: str = "combined"):
    """Load a dataset (+ labels when present) from csv or wbds."""
    if fmt not in FORMATS:
        raise ValidationError(f"unsupported format {fmt!r}; supported: {FORMATS}")
    if not Path(path).exists():
        raise ParseError(f"{path}: no such file")
    return ingest_csv(path, split_tag) if fmt == "csv" else ingest_wbds(path, split_tag)


def export(path, fmt: str, X: Dataset, labels: LabelSet | None = None):
    if fmt not in FORMATS:
        raise ValidationError(f"unsupported format {fmt!r}; supported: {FORMATS}")
    export_csv(path, X, labels) if fmt == "csv" else export_wbds(path, X, labels)


# -- plain numeric matrices (CLI outputs) -------------------------------------

def write_matrix_csv(path, A: np.ndarray):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(A):
            writer.writerow([_float_repr(v) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise ParseError(f"{path}: empty matrix file")
    return np.array(rows, dtype=np.float64)
