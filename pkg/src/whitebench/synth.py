"""Synthetic dataset generation with a controlled covariance spectrum.

Columns are zero-mean Gaussians whose covariance eigenvalues follow a power
law lambda_j ~ j^{-alpha} (alpha = 0 is isotropic) in a seeded random basis.
Labels come from a fixed random linear teacher acting on the top ceil(d/4)
covariance modes plus Gaussian noise; classification targets one-hot-ify the
teacher output by argmax. Everything is deterministic per seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datatypes import Dataset, LabelSet
from .errors import ValidationError

SPECTRA = ("power_law", "flat", "custom")
TEACHERS = ("linear", "none")


@dataclass(frozen=True)
class SyntheticSpec:
    d: int
    n_train: int
    n_val: int = 0
    n_test: int = 0
    spectrum: str = "power_law"
    alpha: float = 2.0
    custom_eigenvalues: tuple | None = None
    teacher: str = "linear"
    teacher_seed: int | None = None
    label_noise: float = 0.0
    classes: int = 10
    encoding: str = "one_hot"
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.n_train < 1 or self.n_val < 0 or self.n_test < 0:
            raise ValidationError("counts must be positive (val/test may be zero)")
        if self.spectrum not in SPECTRA:
            raise ValidationError(f"unknown spectrum {self.spectrum!r}")
        if self.spectrum == "custom" and (
            self.custom_eigenvalues is None or len(self.custom_eigenvalues) != self.d
        ):
            raise ValidationError("custom spectrum needs d eigenvalues")
        if self.teacher not in TEACHERS:
            raise ValidationError(f"unknown teacher {self.teacher!r}")
        if self.alpha < 0 or self.label_noise < 0 or self.classes < 1:
            raise ValidationError("alpha, label_noise, classes must be nonnegative/positive")

    def eigenvalues(self) -> np.ndarray:
        if self.spectrum == "flat":
            return np.ones(self.d)
        if self.spectrum == "custom":
            return np.asarray(self.custom_eigenvalues, dtype=np.float64)
        return np.arange(1, self.d + 1, dtype=np.float64) ** (-self.alpha)


@dataclass(frozen=True)
class SyntheticData:
    train: Dataset
    val: Dataset | None
    test: Dataset | None
    y_train: LabelSet | None
    y_val: LabelSet | None
    y_test: LabelSet | None
    basis: np.ndarray
    teacher_matrix: np.ndarray | None

    def splits(self):
        out = {"train": (self.train, self.y_train)}
        if self.val is not None:
            out["validation"] = (self.val, self.y_val)
        if self.test is not None:
            out["test"] = (self.test, self.y_test)
        return out


def _orthogonal_basis(d: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))[None, :]


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    """Draw train/val/test splits plus labels from one seeded generator.

    Draw order (basis, teacher, then per-split samples and noise) is fixed, so
    identical specs produce identical data. The teacher matrix depends only
    on teacher_seed (default: seed), letting sweeps vary the data draw while
    holding the task fixed.
    """
    rng = np.random.default_rng(spec.seed)
    basis = _orthogonal_basis(spec.d, rng)
    scales = np.sqrt(spec.eigenvalues())
    m = math.ceil(spec.d / 4)

    teacher = None
    if spec.teacher == "linear":
        teacher_rng = np.random.default_rng(
            spec.seed if spec.teacher_seed is None else spec.teacher_seed
        )
        teacher = teacher_rng.standard_normal((spec.classes, m))

    def draw(count: int, tag: str):
        if count == 0:
            return None, None
        coords = scales[:, None] * rng.standard_normal((spec.d, count))
        X = Dataset(basis @ coords, split_tag=tag)
        if teacher is None:
            return X, None
        logits = teacher @ coords[:m, :]
        if spec.label_noise > 0:
            logits = logits + spec.label_noise * rng.standard_normal(logits.shape)
        if spec.encoding == "one_hot":
            onehot = np.zeros((spec.classes, count))
            onehot[np.argmax(logits, axis=0), np.arange(count)] = 1.0
            return X, LabelSet(onehot, encoding="one_hot")
        return X, LabelSet(logits, encoding="real_valued")

    train, y_train = draw(spec.n_train, "train")
    val, y_val = draw(spec.n_val, "validation")
    test, y_test = draw(spec.n_test, "test")
    return SyntheticData(
        train=train,
        val=val,
        test=test,
        y_train=y_train,
        y_val=y_val,
        y_test=y_test,
        basis=basis,
        teacher_matrix=teacher,
    )
