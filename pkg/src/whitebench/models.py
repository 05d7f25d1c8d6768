"""Linear models and small MLPs with a dense, bias-free first layer.

The first layer is always Z = W X with no bias, so the first-layer gradient
is exactly (dL/dZ) X^T and training touches the inputs only through Gram
matrices. Losses follow the summed convention (1/2 sum of squares, summed
cross entropy); reported metrics are per-sample averages.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datatypes import Dataset, LabelSet, check_paired
from .errors import ParseError, ShapeError, ValidationError
from .records import TrainRecord

ACTIVATIONS = ("relu", "tanh")
OUTPUT_HEADS = ("linear_mse", "softmax_xent")


def _act(name, Z):
    return np.maximum(Z, 0.0) if name == "relu" else np.tanh(Z)


def _act_deriv(name, Z):
    if name == "relu":
        return (Z > 0.0).astype(np.float64)
    t = np.tanh(Z)
    return 1.0 - t * t


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def accuracy(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Argmax match fraction; ties break toward the lowest class index."""
    return float(np.mean(np.argmax(predictions, axis=0) == np.argmax(targets, axis=0)))


@dataclass
class MLP:
    """Feed-forward net: hidden layers with `activation`, linear output layer.

    weights[l] maps layer_sizes[l] -> layer_sizes[l+1]. biases[0] is always
    None; deeper biases are optional and default off so the update algebra
    stays exact for the equivariance checks.
    """

    weights: list
    biases: list
    activation: str = "relu"
    output_head: str = "linear_mse"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.output_head not in OUTPUT_HEADS:
            raise ValidationError(f"unknown output head {self.output_head!r}")
        if self.biases[0] is not None:
            raise ValidationError("first layer must be bias-free (Z = W X)")
        for W in self.weights:
            if not np.all(np.isfinite(W)):
                raise ValidationError("weights must be finite")

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def trainable(self) -> list:
        """Parameter arrays in a fixed order: weights then active biases."""
        return list(self.weights) + [b for b in self.biases if b is not None]

    def copy(self) -> "MLP":
        return MLP(
            weights=[W.copy() for W in self.weights],
            biases=[None if b is None else b.copy() for b in self.biases],
            activation=self.activation,
            output_head=self.output_head,
        )

    # -- forward / backward -------------------------------------------------

    def forward(self, X: np.ndarray):
        """Predictions (logits for the softmax head) plus backprop cache."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != self.layer_sizes[0]:
            raise ShapeError(
                f"model expects {self.layer_sizes[0]} features, got {X.shape[0]}"
            )
        A = X
        pre = []
        inputs = []
        for l, W in enumerate(self.weights):
            inputs.append(A)
            Z = W @ A
            if self.biases[l] is not None:
                Z = Z + self.biases[l][:, None]
            pre.append(Z)
            A = _act(self.activation, Z) if l < self.depth - 1 else Z
        return A, {"pre": pre, "inputs": inputs, "X": X}

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def loss_value(self, predictions: np.ndarray, targets: np.ndarray) -> float:
        if self.output_head == "linear_mse":
            diff = predictions - targets
            return 0.5 * float(np.sum(diff * diff))
        shifted = predictions - predictions.max(axis=0, keepdims=True)
        lse = np.log(np.sum(np.exp(shifted), axis=0)) + predictions.max(axis=0)
        return float(np.sum(lse * targets.sum(axis=0)) - np.sum(targets * predictions))

    def loss_grad(self, predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
        if self.output_head == "linear_mse":
            return predictions - targets
        p = softmax_columns(predictions)
        return p * targets.sum(axis=0, keepdims=True) - targets

    def output_hessian_apply(
        self, predictions: np.ndarray, U: np.ndarray, targets: np.ndarray
    ) -> np.ndarray:
        """Apply the per-sample loss Hessian (in prediction space) to U."""
        if self.output_head == "linear_mse":
            return U
        p = softmax_columns(predictions)
        scale = targets.sum(axis=0, keepdims=True)
        return scale * (p * U - p * np.sum(p * U, axis=0, keepdims=True))

    def grads_from(self, cache: dict, dPred: np.ndarray):
        """Backpropagate an output cotangent; returns grads aligned with trainable().

        The aux dict carries dL/dZ of the first layer so the activation
        recursion Z' = Z - eta (dL/dZ) K can be checked directly.
        """
        dZ = dPred
        weight_grads = [None] * self.depth
        bias_grads = [None] * self.depth
        for l in range(self.depth - 1, -1, -1):
            weight_grads[l] = dZ @ cache["inputs"][l].T
            if self.biases[l] is not None:
                bias_grads[l] = dZ.sum(axis=1)
            if l > 0:
                dA = self.weights[l].T @ dZ
                dZ = dA * _act_deriv(self.activation, cache["pre"][l - 1])
        grads = weight_grads + [g for g in bias_grads if g is not None]
        return grads, {"dZ_first": dZ}

    def loss_and_grads(self, X: np.ndarray, Y: np.ndarray):
        """(loss, grads, aux) with aux = predictions, cache, first-layer dL/dZ."""
        predictions, cache = self.forward(X)
        loss = self.loss_value(predictions, Y)
        grads, pieces = self.grads_from(cache, self.loss_grad(predictions, Y))
        aux = {"predictions": predictions, "cache": cache, **pieces}
        return loss, grads, aux

    def loss_on(self, X: np.ndarray, Y: np.ndarray) -> float:
        return self.loss_value(self.predict(X), Y)

    def jvp(self, cache: dict, tangents: list) -> np.ndarray:
        """Forward-mode directional derivative of the predictions.

        tangents aligns with trainable(); returns J v in prediction space.
        """
        weight_t = tangents[: self.depth]
        bias_t = iter(tangents[self.depth :])
        dA = np.zeros_like(cache["X"])
        dPred = None
        for l in range(self.depth):
            dZ = weight_t[l] @ cache["inputs"][l] + self.weights[l] @ dA
            if self.biases[l] is not None:
                dZ = dZ + next(bias_t)[:, None]
            if l < self.depth - 1:
                dA = dZ * _act_deriv(self.activation, cache["pre"][l])
            else:
                dPred = dZ
        return dPred


def init_isotropic(
    layer_sizes: list,
    variance: float = 1e-4,
    seed: int = 0,
    activation: str = "relu",
    output_head: str = "linear_mse",
    deeper_biases: bool = False,
) -> MLP:
    """Elementwise Gaussian(0, variance) weights, layer by layer, per seed.

    The first-layer row distribution is isotropic (invariant under right
    rotations). variance = 0 gives all-zero weights.
    """
    if variance < 0:
        raise ValidationError("variance must be nonnegative")
    if len(layer_sizes) < 2:
        raise ValidationError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    std = float(np.sqrt(variance))
    weights = [
        std * rng.standard_normal((layer_sizes[l + 1], layer_sizes[l]))
        for l in range(len(layer_sizes) - 1)
    ]
    biases = [None] + [
        np.zeros(layer_sizes[l + 1]) if deeper_biases else None
        for l in range(1, len(weights))
    ]
    return MLP(weights=weights, biases=biases, activation=activation, output_head=output_head)


_CHECKPOINT_MAGIC = b"WBMC"


def save_checkpoint(model: MLP, path, seed: int = 0, config_hash: bytes = b""):
    """Binary checkpoint: magic "WBMC", u16 version=1, u8 activation (0 relu,
    1 tanh), u8 head (0 linear_mse, 1 softmax_xent), u8 layer count L, u8 bias
    flags bitmask, (L+1) u32 layer sizes, u64 seed, u8 hash length + hash
    bytes, then per layer the weights as float64 little-endian (row-major)
    followed by any bias vector. All integers little-endian.
    """
    sizes = model.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", 1))
        fh.write(struct.pack("<BB", ACTIVATIONS.index(model.activation), OUTPUT_HEADS.index(model.output_head)))
        bias_mask = sum(1 << l for l, b in enumerate(model.biases) if b is not None)
        fh.write(struct.pack("<BB", model.depth, bias_mask))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack("<Q", seed))
        fh.write(struct.pack("<B", len(config_hash)) + config_hash)
        for l, W in enumerate(model.weights):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            if model.biases[l] is not None:
                fh.write(np.ascontiguousarray(model.biases[l], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (MLP, seed, config_hash); rejects foreign or truncated files."""
    data = Path(path).read_bytes()
    if data[:4] != _CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r} at offset 0")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != 1:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    act_idx, head_idx, depth, bias_mask = struct.unpack_from("<BBBB", data, 6)
    offset = 10
    sizes = struct.unpack_from(f"<{depth + 1}I", data, offset)
    offset += 4 * (depth + 1)
    (seed,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    (hash_len,) = struct.unpack_from("<B", data, offset)
    offset += 1
    config_hash = data[offset : offset + hash_len]
    offset += hash_len
    weights, biases = [], []
    for l in range(depth):
        count = sizes[l + 1] * sizes[l]
        if offset + 8 * count > len(data):
            raise ParseError(f"{path}: truncated at offset {offset}")
        weights.append(
            np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            .reshape(sizes[l + 1], sizes[l]).astype(np.float64)
        )
        offset += 8 * count
        if bias_mask & (1 << l):
            biases.append(
                np.frombuffer(data, dtype="<f8", count=sizes[l + 1], offset=offset).astype(np.float64)
            )
            offset += 8 * sizes[l + 1]
        else:
            biases.append(None)
    model = MLP(
        weights=weights, biases=biases,
        activation=ACTIVATIONS[act_idx], output_head=OUTPUT_HEADS[head_idx],
    )
    return model, seed, config_hash


@dataclass
class BatchSchedule:
    """Deterministic minibatch order derived from the run seed."""

    n: int
    batch_size: int | None
    seed: int

    def epochs(self):
        rng = np.random.default_rng(self.seed)
        size = self.n if self.batch_size in (None, 0) else min(self.batch_size, self.n)
        while True:
            order = np.arange(self.n) if size == self.n else rng.permutation(self.n)
            for start in range(0, self.n, size):
                yield order[start : start + size]


def train_to_cutoff(
    model: MLP,
    X_train: Dataset,
    Y_train: LabelSet,
    cfg,
    optimizer: str = "sgd",
    cutoff: float = 0.999,
    step_cap: int = 10000,
    seed: int = 0,
    X_val: Dataset | None = None,
    Y_val: LabelSet | None = None,
    X_test: Dataset | None = None,
    Y_test: LabelSet | None = None,
    record_every: int = 1,
    metadata: dict | None = None,
) -> TrainRecord:
    """Train until full-train accuracy >= cutoff or the step cap fires.

    Mutates `model` in place. Batch order is generated from `seed` and
    recorded in the metadata, so two runs with the same seed see identical
    batches. Metrics are per-sample averages; the terminal step is always
    recorded.
    """
    from . import optimizers as opt  # local import: optimizers is model-agnostic

    if not 0.0 < cutoff <= 1.0:
        raise ValidationError("cutoff must lie in (0, 1]")
    check_paired(X_train, Y_train)
    if Y_train.encoding != "one_hot":
        raise ValidationError("accuracy cutoff training needs one_hot labels")

    n = X_train.sample_count
    batch_size = cfg.batch_size if cfg.batch_size not in (None, 0) else n
    schedule = BatchSchedule(n=n, batch_size=batch_size, seed=seed).epochs()
    full_batch = batch_size >= n

    record = TrainRecord(
        metadata={
            "seed": seed,
            "optimizer": optimizer,
            "dataset_size": n,
            "batch_size": batch_size,
            "cutoff": cutoff,
            **(metadata or {}),
        }
    )

    def evaluate(step, train_pred=None):
        pred = model.predict(X_train.values) if train_pred is None else train_pred
        metrics = {
            "train_loss": model.loss_value(pred, Y_train.targets) / n,
            "train_accuracy": accuracy(pred, Y_train.targets),
        }
        if X_val is not None and Y_val is not None:
            metrics["val_loss"] = model.loss_on(X_val.values, Y_val.targets) / X_val.sample_count
        if X_test is not None and Y_test is not None:
            tp = model.predict(X_test.values)
            metrics["test_loss"] = model.loss_value(tp, Y_test.targets) / X_test.sample_count
            metrics["test_error"] = 1.0 - accuracy(tp, Y_test.targets)
        record.append(step, **metrics)
        return metrics

    metrics = evaluate(0)
    step = 0
    reason = "cutoff" if metrics["train_accuracy"] >= cutoff else ""
    while not reason:
        batch = next(schedule)
        Xb = X_train.values[:, batch]
        Yb = Y_train.targets[:, batch]
        if optimizer == "sgd":
            result = opt.sgd_step(model, Xb, Yb, cfg)
        elif optimizer == "gn":
            result = opt.regularized_gn_step(model, Xb, Yb, cfg)
        else:
            raise ValidationError(f"unknown optimizer {optimizer!r}")
        step += 1
        train_pred = result.diagnostics.get("predictions_after") if full_batch else None
        must_record = step % record_every == 0 or step >= step_cap
        if full_batch or must_record:
            metrics = evaluate(step, train_pred)
            if metrics["train_accuracy"] >= cutoff:
                reason = "cutoff"
        if not reason and step >= step_cap:
            reason = "cap"
    if step not in record.steps:
        metrics = evaluate(step)
    record.terminal_step = step
    record.stopping_reason = reason
    record.metadata["steps_to_cutoff"] = step if reason == "cutoff" else None
    record.metadata["epochs_to_cutoff"] = (
        step * batch_size / n if reason == "cutoff" else None
    )
    return record.validate()
