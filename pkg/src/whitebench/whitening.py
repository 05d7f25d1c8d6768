"""PCA and ZCA whitening with jitter / manual rank-control policies.

A whitening transform M maps the eigenspectrum of F = X X^T to ones and
zeros, the multiplicity of ones equal to rank(F). PCA uses M = S^{-1/2} V^T
from the SVD of the fitted F = U S V^T; ZCA rotates back, M = U S^{-1/2} V^T.
Under manual rank control the trailing (below-rank) entries of S^{-1/2} are
set to 1; under the jitter policy a small epsilon is added to the diagonal of
S before inverting, which keeps M invertible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datatypes import (
    Dataset,
    RANK_CUTOFF_RATIO,
    compute_F,
    require_nontrivial_spectrum,
    symmetrize,
)
from .errors import ShapeError, ValidationError

WHITENING_MODES = ("pca", "zca")
FIT_SCOPES = ("train_only", "full", "distribution")
RANK_POLICIES = ("jitter", "manual")


@dataclass(frozen=True)
class RankPolicy:
    """How near-zero singular values of the fitted F are handled.

    kind "jitter": add epsilon to every diagonal entry of S before inverting;
    epsilon=None means 1e-8 * mean(diag S), tied to the spectrum scale.
    kind "manual": singular values below rank_cutoff_ratio * largest are
    replaced by exact unit scaling (their S^{-1/2} entries set to 1).
    """

    kind: str = "manual"
    epsilon: float | None = None
    rank_cutoff_ratio: float = RANK_CUTOFF_RATIO

    def __post_init__(self):
        if self.kind not in RANK_POLICIES:
            raise ValidationError(f"unknown rank policy {self.kind!r}")
        if self.kind == "jitter" and self.epsilon is not None and self.epsilon <= 0:
            raise ValidationError("jitter epsilon must be positive")


@dataclass(frozen=True)
class Whitener:
    """A fitted linear whitening transform.

    Immutable; `mean` is None unless the transform was fitted with centering,
    in which case apply() subtracts it before multiplying by M.
    """

    M: np.ndarray
    mode: str
    fit_scope: str
    rank_policy: RankPolicy
    fit_dataset_id: str
    fit_rank: int
    mean: np.ndarray | None = None

    @property
    def feature_dim(self) -> int:
        return self.M.shape[1]


@dataclass(frozen=True)
class WhitenessReport:
    """Classification of the eigenvalues of F-hat against {0, 1}."""

    eigenvalues: np.ndarray
    ones_count: int
    zeros_count: int
    tolerance: float
    passed: bool


def fit_whitener(
    X_fit: Dataset,
    mode: str = "pca",
    rank_policy: RankPolicy | None = None,
    fit_scope: str = "train_only",
    center: bool = False,
    fit_dataset_id: str | None = None,
) -> Whitener:
    """Fit a whitening transform on X_fit.

    The scope tag is audit metadata: the fit math is identical whichever data
    the caller passes. Centering is off by default; when on, the fit-set row
    means are stored and subtracted by apply().
    """
    if mode not in WHITENING_MODES:
        raise ValidationError(f"unknown whitening mode {mode!r}")
    if fit_scope not in FIT_SCOPES:
        raise ValidationError(f"unknown fit scope {fit_scope!r}")
    policy = rank_policy or RankPolicy()

    mean = None
    values = X_fit.values
    if center:
        mean = values.mean(axis=1, keepdims=True)
        values = values - mean
        F = symmetrize(values @ values.T)
    else:
        F = compute_F(X_fit)

    U, S, Vt = np.linalg.svd(F, hermitian=True)
    require_nontrivial_spectrum(S, "fitted second moment")
    rank = int(np.count_nonzero(S > policy.rank_cutoff_ratio * S[0]))

    if policy.kind == "jitter":
        eps = policy.epsilon if policy.epsilon is not None else 1e-8 * float(np.mean(S))
        inv_sqrt = 1.0 / np.sqrt(S + eps)
    else:
        inv_sqrt = np.ones_like(S)
        inv_sqrt[:rank] = 1.0 / np.sqrt(S[:rank])

    if mode == "pca":
        M = inv_sqrt[:, None] * Vt
    else:
        M = (U * inv_sqrt[None, :]) @ Vt

    return Whitener(
        M=M,
        mode=mode,
        fit_scope=fit_scope,
        rank_policy=policy,
        fit_dataset_id=fit_dataset_id or X_fit.fingerprint(),
        fit_rank=rank,
        mean=mean,
    )


def apply_whitener(W: Whitener, X: Dataset) -> Dataset:
    """Transform X by the fitted M (same transform for every split)."""
    if X.feature_dim != W.feature_dim:
        raise ShapeError(
            f"whitener fitted on {W.feature_dim} features, data has {X.feature_dim}"
        )
    values = X.values if W.mean is None else X.values - W.mean
    return Dataset(W.M @ values, split_tag=X.split_tag)


def verify_whitened(X_hat: Dataset, tol: float = 1e-6) -> WhitenessReport:
    """Check that every eigenvalue of F-hat is within tol of 0 or of 1."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    eigenvalues = np.linalg.eigvalsh(compute_F(X_hat))[::-1]
    ones = np.abs(eigenvalues - 1.0) <= tol
    zeros = np.abs(eigenvalues) <= tol
    passed = bool(np.all(ones | zeros))
    return WhitenessReport(
        eigenvalues=eigenvalues,
        ones_count=int(np.count_nonzero(ones)),
        zeros_count=int(np.count_nonzero(zeros & ~ones)),
        tolerance=tol,
        passed=passed,
    )
