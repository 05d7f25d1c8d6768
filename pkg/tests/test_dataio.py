from pathlib import Path

import numpy as np
import pytest

from whitebench import Dataset, LabelSet
from whitebench.dataio import (
    export,
    export_csv,
    export_wbds,
    ingest,
    ingest_csv,
    ingest_wbds,
    label_companion_path,
    read_matrix_csv,
    write_matrix_csv,
)
from whitebench.errors import ParseError, ValidationError

FIXTURE = Path(__file__).parent / "data" / "two_samples.csv"


def test_golden_two_sample_csv_fixture():
    X, labels = ingest(FIXTURE, "csv")
    assert np.array_equal(X.values, [[1.5, -2.0], [0.25, 4.0], [3.0, 0.0]])
    assert labels.encoding == "one_hot"
    assert np.array_equal(labels.class_indices(), [0, 2])


def test_csv_round_trip(tmp_path, rng):
    X = Dataset(rng.standard_normal((4, 7)), split_tag="train")
    idx = rng.integers(0, 3, size=7)
    onehot = np.zeros((3, 7))
    onehot[idx, np.arange(7)] = 1.0
    labels = LabelSet(onehot, encoding="one_hot")
    path = tmp_path / "data.csv"
    export_csv(path, X, labels)
    X2, labels2 = ingest_csv(path)
    assert np.array_equal(X.values, X2.values)
    assert np.array_equal(labels.targets, labels2.targets)


def test_csv_real_valued_labels_round_trip(tmp_path, rng):
    X = Dataset(rng.standard_normal((2, 5)))
    labels = LabelSet(rng.standard_normal((3, 5)), encoding="real_valued")
    path = tmp_path / "real.csv"
    export_csv(path, X, labels)
    _, labels2 = ingest_csv(path)
    assert labels2.encoding == "real_valued"
    assert np.array_equal(labels.targets, labels2.targets)


def test_csv_ragged_row_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,f1\n1.0,2.0\n3.0\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 3"):
        ingest_csv(path)


def test_csv_nonfinite_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0\ninf\n", encoding="utf-8")
    with pytest.raises(ParseError, match="line 2"):
        ingest_csv(path)


def test_wbds_round_trip_bit_identical(tmp_path, rng):
    X = Dataset(rng.standard_normal((5, 9)), split_tag="train")
    idx = rng.integers(0, 4, size=9)
    onehot = np.zeros((4, 9))
    onehot[idx, np.arange(9)] = 1.0
    labels = LabelSet(onehot, encoding="one_hot")
    path = tmp_path / "data.wbds"
    export_wbds(path, X, labels)
    X2, labels2 = ingest_wbds(path)
    assert X.values.tobytes() == X2.values.tobytes()
    assert labels2.encoding == "one_hot"
    assert labels.targets.tobytes() == labels2.targets.tobytes()
    # re-exporting reproduces the exact same bytes
    path2 = tmp_path / "again.wbds"
    export_wbds(path2, X2, labels2)
    assert path.read_bytes() == path2.read_bytes()
    assert label_companion_path(path).read_bytes() == label_companion_path(path2).read_bytes()


def test_wbds_real_labels_inferred(tmp_path, rng):
    X = Dataset(rng.standard_normal((3, 6)))
    labels = LabelSet(rng.standard_normal((2, 6)), encoding="real_valued")
    path = tmp_path / "real.wbds"
    export_wbds(path, X, labels)
    _, labels2 = ingest_wbds(path)
    assert labels2.encoding == "real_valued"


def test_foreign_format_rejected(tmp_path):
    path = tmp_path / "export.bin"
    path.write_bytes(b"CIFARFEATDUMP\x00\x00\x00 not a supported container")
    with pytest.raises(ParseError, match="magic"):
        ingest(path, "wbds")
    with pytest.raises(ValidationError, match="unsupported format"):
        ingest(path, "cifar-features")


def test_wbds_truncation_error(tmp_path, rng):
    X = Dataset(rng.standard_normal((3, 4)))
    path = tmp_path / "x.wbds"
    export_wbds(path, X)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ParseError, match="bytes"):
        ingest_wbds(path)


def test_missing_file_error():
    with pytest.raises(ParseError, match="no such file"):
        ingest("/nonexistent/path.wbds", "wbds")


def test_matrix_csv_round_trip(tmp_path, rng):
    A = rng.standard_normal((4, 6))
    path = tmp_path / "m.csv"
    write_matrix_csv(path, A)
    assert np.array_equal(read_matrix_csv(path), A)
