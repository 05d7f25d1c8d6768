"""Trajectory records shared by the flow solver and the training loops."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_METRICS = ("train_loss", "train_accuracy", "val_loss", "test_loss", "test_error")


@dataclass
class TrainRecord:
    """Per-step (or per-time) metric trajectory plus terminal summary.

    `steps` is strictly increasing: integer step indices for discrete
    training, times for gradient flow. Metric lists align with `steps`;
    absent metrics stay None. Terminal metrics always correspond to a
    recorded entry.
    """

    steps: list = field(default_factory=list)
    train_loss: list | None = None
    train_accuracy: list | None = None
    val_loss: list | None = None
    test_loss: list | None = None
    test_error: list | None = None
    terminal_step: float | int | None = None
    stopping_reason: str = ""
    metadata: dict = field(default_factory=dict)

    def validate(self):
        if np.any(np.diff(np.asarray(self.steps, dtype=float)) <= 0):
            raise ValidationError("record steps must be strictly increasing")
        for name in _METRICS:
            series = getattr(self, name)
            if series is not None and len(series) != len(self.steps):
                raise ValidationError(f"{name} length does not match steps")
        if self.terminal_step is not None and self.terminal_step not in self.steps:
            raise ValidationError("terminal step was never recorded")
        return self

    def append(self, step, **metrics):
        """Insert an entry at its sorted position (replacing a duplicate step)."""
        unknown = set(metrics) - set(_METRICS)
        if unknown:
            raise ValidationError(f"unknown metrics: {sorted(unknown)}")
        idx = bisect.bisect_left(self.steps, step)
        replace = idx < len(self.steps) and self.steps[idx] == step
        n_before = len(self.steps)
        if not replace:
            self.steps.insert(idx, step)
        for name in _METRICS:
            series = getattr(self, name)
            if series is None and name not in metrics:
                continue
            if series is None:
                series = [None] * n_before
                setattr(self, name, series)
            if not replace:
                series.insert(idx, None)
            if name in metrics:
                series[idx] = metrics[name]

    def at(self, step) -> dict:
        idx = self.steps.index(step)
        out = {"step": step}
        for name in _METRICS:
            series = getattr(self, name)
            if series is not None:
                out[name] = series[idx]
        return out
