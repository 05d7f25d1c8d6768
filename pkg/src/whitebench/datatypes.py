"""Core matrix-valued types and second-moment operations.

Data is stored samples-as-columns: a dataset is a d x n matrix whose columns
are samples. Second moments are unnormalized, F = X X^T (feature-feature) and
K = X^T X (sample-sample Gram matrix), so F and K share their nonzero
eigenvalues. All numerics are 64-bit.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrumError, ShapeError, ValidationError

SPLIT_TAGS = ("train", "validation", "test", "combined")
LABEL_ENCODINGS = ("one_hot", "real_valued")

#: relative singular-value cutoff for input-rank estimation
RANK_CUTOFF_RATIO = 1e-5
#: relative singular-value cutoff for pseudoinverses
PINV_CUTOFF_RATIO = 1e-10
#: eigenvalues below this fraction of the largest are treated as exact nulls
NULL_MODE_RATIO = 1e-12


def _as_matrix(values, what="values") -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValidationError(f"{what} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite entries")
    return arr


def _freeze(obj, name, arr):
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True)
class Dataset:
    """A d x n matrix of samples-as-columns plus a split tag.

    Immutable after construction; the backing array is marked read-only.
    """

    values: np.ndarray
    split_tag: str = "combined"

    def __post_init__(self):
        arr = _as_matrix(self.values, "Dataset.values")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("Dataset needs at least one feature and one sample")
        if self.split_tag not in SPLIT_TAGS:
            raise ValidationError(f"unknown split_tag {self.split_tag!r}")
        _freeze(self, "values", arr)

    @property
    def feature_dim(self) -> int:
        return self.values.shape[0]

    @property
    def sample_count(self) -> int:
        return self.values.shape[1]

    def fingerprint(self) -> str:
        """Short content hash used as a dataset identifier in audit metadata."""
        h = hashlib.sha256(self.values.tobytes())
        h.update(self.split_tag.encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class LabelSet:
    """Targets for a paired Dataset: k rows (outputs/classes) x n columns."""

    targets: np.ndarray
    encoding: str = "real_valued"

    def __post_init__(self):
        arr = _as_matrix(self.targets, "LabelSet.targets")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("LabelSet needs at least one output and one sample")
        if self.encoding not in LABEL_ENCODINGS:
            raise ValidationError(f"unknown encoding {self.encoding!r}")
        if self.encoding == "one_hot":
            ones = np.sum(arr == 1.0, axis=0)
            zeros = np.sum(arr == 0.0, axis=0)
            if not np.all((ones == 1) & (zeros == arr.shape[0] - 1)):
                raise ValidationError("one_hot columns must have a single 1 and zeros elsewhere")
        _freeze(self, "targets", arr)

    @property
    def output_dim(self) -> int:
        return self.targets.shape[0]

    @property
    def sample_count(self) -> int:
        return self.targets.shape[1]

    def class_indices(self) -> np.ndarray:
        """Class index per column; ties broken toward the lowest index."""
        return np.argmax(self.targets, axis=0)


def check_paired(X: Dataset, Y: LabelSet):
    if X.sample_count != Y.sample_count:
        raise ShapeError(
            f"dataset has {X.sample_count} samples but labels have {Y.sample_count}"
        )


@dataclass(frozen=True)
class SecondMoments:
    """F = X X^T and K = X^T X for one dataset, explicitly symmetrized.

    PSD and shared-spectrum contracts are verified by the property suite, not
    re-checked on every construction (they would cost a full eigendecomposition).
    """

    F: np.ndarray
    K: np.ndarray
    computed_from: str

    def __post_init__(self):
        F = _as_matrix(self.F, "SecondMoments.F")
        K = _as_matrix(self.K, "SecondMoments.K")
        for name, A in (("F", F), ("K", K)):
            if A.shape[0] != A.shape[1]:
                raise ShapeError(f"{name} must be square")
            if np.max(np.abs(A - A.T), initial=0.0) > 1e-10:
                raise ValidationError(f"{name} is not symmetric within 1e-10")
        _freeze(self, "F", F)
        _freeze(self, "K", K)


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition with eigenvalues sorted descending.

    eigenvectors[:, i] pairs with eigenvalues[i]; columns are orthonormal.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.array(self.eigenvalues, dtype=np.float64)
        vecs = _as_matrix(self.eigenvectors, "Spectrum.eigenvectors")
        if vals.ndim != 1 or vecs.shape[1] != vals.shape[0]:
            raise ShapeError("eigenvector columns must pair with eigenvalues")
        if np.any(np.diff(vals) > 0):
            raise ValidationError("eigenvalues must be sorted descending")
        vals.flags.writeable = False
        object.__setattr__(self, "eigenvalues", vals)
        _freeze(self, "eigenvectors", vecs)


def symmetrize(A: np.ndarray) -> np.ndarray:
    """(A + A^T)/2; exact bitwise symmetry since IEEE addition commutes."""
    return (A + A.T) / 2.0


def compute_F(X: Dataset) -> np.ndarray:
    """Feature-feature second moment X X^T (d x d), no 1/n normalization."""
    return symmetrize(X.values @ X.values.T)


def compute_K(X: Dataset) -> np.ndarray:
    """Sample-sample second moment X^T X (n x n), the Gram matrix of X."""
    return symmetrize(X.values.T @ X.values)


def compute_mixed_K(X_a: Dataset, X_b: Dataset) -> np.ndarray:
    """Mixed Gram block X_a^T X_b (n_a x n_b)."""
    if X_a.feature_dim != X_b.feature_dim:
        raise ShapeError(
            f"feature dims differ: {X_a.feature_dim} vs {X_b.feature_dim}"
        )
    return X_a.values.T @ X_b.values


def second_moments(X: Dataset) -> SecondMoments:
    return SecondMoments(F=compute_F(X), K=compute_K(X), computed_from=X.fingerprint())


def eigh(A: np.ndarray) -> Spectrum:
    """Symmetric eigendecomposition with descending eigenvalues.

    Rejects non-symmetric (beyond 1e-10 absolute) or non-finite input.
    """
    A = _as_matrix(A, "eigh input")
    if A.shape[0] != A.shape[1]:
        raise ShapeError("eigh needs a square matrix")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10:
        raise ValidationError("eigh input is not symmetric within 1e-10 absolute")
    vals, vecs = np.linalg.eigh(symmetrize(A))
    order = np.argsort(vals)[::-1]
    return Spectrum(eigenvalues=vals[order], eigenvectors=vecs[:, order])


def pseudoinverse(A: np.ndarray, rel_tol: float = PINV_CUTOFF_RATIO) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below rel_tol * sigma_max are zeroed."""
    if rel_tol <= 0:
        raise ValidationError("rel_tol must be positive")
    A = _as_matrix(A, "pseudoinverse input")
    return np.linalg.pinv(A, rcond=rel_tol)


def estimate_input_rank(X: Dataset, cutoff_ratio: float = RANK_CUTOFF_RATIO) -> int:
    """Count of singular values of F = X X^T above cutoff_ratio * largest.

    An all-zero dataset has rank 0.
    """
    if not 0.0 < cutoff_ratio < 1.0:
        raise ValidationError("cutoff_ratio must lie in (0, 1)")
    sing = np.linalg.svd(compute_F(X), compute_uv=False, hermitian=True)
    if sing.size == 0 or sing[0] <= 0.0:
        return 0
    return int(np.count_nonzero(sing > cutoff_ratio * sing[0]))


def require_nontrivial_spectrum(singular_values: np.ndarray, what: str):
    if singular_values.size == 0 or float(singular_values[0]) <= 0.0:
        raise DegenerateSpectrumError(f"{what} has an identically zero spectrum")


def hstack_datasets(*datasets: Dataset, split_tag: str = "combined") -> Dataset:
    """Concatenate datasets along the sample axis into a single split."""
    dims = {X.feature_dim for X in datasets}
    if len(dims) != 1:
        raise ShapeError(f"feature dims differ across datasets: {sorted(dims)}")
    return Dataset(np.hstack([X.values for X in datasets]), split_tag=split_tag)
