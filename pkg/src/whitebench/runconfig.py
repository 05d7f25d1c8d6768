"""Flat `key = value` run configuration files with [section] headers.

Unknown sections or keys are errors (typos in sweep definitions should not
pass silently). Lists are space- or comma-separated.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .whitening import RankPolicy


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _split(text: str) -> list:
    return text.replace(",", " ").split()


def _int_list(text: str) -> list:
    return [int(v) for v in _split(text)]


def _float_list(text: str) -> list:
    return [float(v) for v in _split(text)]


def _str_list(text: str) -> list:
    return _split(text)


def _batch(text: str):
    return None if text.strip() == "full" else int(text)


_SCHEMA = {
    "experiment": {
        "id": str,
        "master_seed": int,
        "seeds": _int_list,
        "output_dir": str,
        "size_convention": str,
    },
    "data": {
        "source": str,
        "d": int,
        "n_train": int,
        "n_val": int,
        "n_test": int,
        "spectrum": str,
        "alpha": float,
        "eigenvalues": _float_list,
        "teacher": str,
        "teacher_seed": int,
        "label_noise": float,
        "classes": int,
        "encoding": str,
        "normalize": _bool,
        "format": str,
        "train": str,
        "val": str,
        "test": str,
    },
    "whitening": {
        "modes": _str_list,
        "transform": str,
        "rank_policy": str,
        "jitter_epsilon": float,
        "center": _bool,
        "distribution_n": int,
    },
    "model": {
        "hidden": _int_list,
        "activation": str,
        "head": str,
        "init_variance": float,
        "biases": _bool,
    },
    "optimizer": {
        "name": str,
        "eta": float,
        "batch_size": _batch,
        "reg_lambda": float,
        "kernel_epsilon": float,
        "cg_tol": float,
        "cutoff": float,
        "step_cap": int,
        "record_every": int,
        "line_search": _bool,
        "initial_step": float,
    },
    "flow": {
        "precondition": str,
        "grid_points": int,
        "t_min": float,
        "t_max": float,
        "init_variance": float,
    },
    "sweep": {
        "sizes": _int_list,
        "trainer": str,
    },
    "plot": {
        "x": str,
        "y": str,
        "group": str,
        "logx": _bool,
        "logy": _bool,
        "title": str,
    },
}

WHITENING_ARMS = ("none", "train", "full", "distribution")


@dataclass
class RunConfig:
    """Parsed configuration; sections become plain dicts with typed values."""

    experiment: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    whitening: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    plot: dict = field(default_factory=dict)

    @property
    def experiment_id(self) -> str:
        return self.experiment.get("id", "experiment")

    @property
    def master_seed(self) -> int:
        return self.experiment.get("master_seed", 0)

    @property
    def seeds(self) -> list:
        return self.experiment.get("seeds", [0])

    @property
    def whitening_modes(self) -> list:
        modes = self.whitening.get("modes", ["none"])
        for m in modes:
            if m not in WHITENING_ARMS:
                raise ConfigError(f"unknown whitening mode {m!r}; expected one of {WHITENING_ARMS}")
        return modes

    def rank_policy(self) -> RankPolicy:
        kind = self.whitening.get("rank_policy", "manual")
        eps = self.whitening.get("jitter_epsilon")
        return RankPolicy(kind=kind, epsilon=eps)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _SCHEMA[section]
        out = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[key] = schema[key](raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{path}: bad value for {key!r} in [{section}]: {exc}") from None
        setattr(cfg, section, out)
    return cfg
