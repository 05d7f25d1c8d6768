#!/usr/bin/env python3
"""Training-speed experiments on one synthetic family.

Part 1: full-batch GD on whitened vs unwhitened copies of the data at equal
learning rate, reporting steps to a fixed training-accuracy cutoff.
Part 2: regularized Gauss-Newton with preconditioner ((1-lambda) B + lambda I)^{-1}
across a lambda grid, reporting steps to the best validation loss
(lambda = 1 is plain gradient descent).
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from whitebench import (
    Dataset,
    LineSearchConfig,
    OptimizerConfig,
    apply_whitener,
    fit_whitener,
    init_isotropic,
    regularized_gn_step,
    train_to_cutoff,
)
from whitebench.plotting import PlotSpec, emit_plot
from whitebench.synth import SyntheticSpec, synthesize
from whitebench.whitening import RankPolicy


def make_data(size, seed, d, n_val=64):
    spec = SyntheticSpec(
        d=d, n_train=size, n_val=n_val, alpha=2.0, label_noise=0.1, classes=10,
        encoding="one_hot", seed=seed * 31 + size, teacher_seed=seed,
    )
    data = synthesize(spec)
    scale = np.sqrt(float(np.linalg.eigvalsh(data.train.values @ data.train.values.T)[-1]))
    train = Dataset(data.train.values / scale, split_tag="train")
    val = Dataset(data.val.values / scale, split_tag="validation")
    return data, train, val


def steps_to_cutoff_rows(sizes, seeds, d, eta, cap):
    rows = []
    for size in sizes:
        for seed in seeds:
            data, train, _ = make_data(size, seed, d)
            cfg = OptimizerConfig(eta=eta)
            raw = init_isotropic([d, 32, 10], variance=1e-2, seed=seed)
            white = raw.copy()
            rec_raw = train_to_cutoff(raw, train, data.y_train, cfg, step_cap=cap, seed=seed)
            W = fit_whitener(train, mode="pca", rank_policy=RankPolicy("manual"))
            rec_white = train_to_cutoff(
                white, apply_whitener(W, train), data.y_train, cfg, step_cap=cap, seed=seed
            )
            for mode, rec in (("none", rec_raw), ("train", rec_white)):
                rows.append({
                    "experiment_id": "steps_to_cutoff", "seed": seed, "dataset_size": size,
                    "whitening_mode": mode, "optimizer": "sgd",
                    "steps_to_cutoff": rec.metadata["steps_to_cutoff"],
                    "stopping_reason": rec.stopping_reason,
                })
    return rows


def lambda_sweep_rows(lams, sizes, seeds, d, steps):
    rows = []
    for lam in lams:
        for size in sizes:
            for seed in seeds:
                data, train, val = make_data(size, seed, d)
                model = init_isotropic([d, 10], variance=0.0, seed=seed)
                cfg = OptimizerConfig(
                    eta=1.0, reg_lambda=lam, cg_tol=1e-6, cg_max_iter=3000,
                    line_search=LineSearchConfig(initial_step=1.0),
                )
                best, best_step = np.inf, 0
                for step in range(1, steps + 1):
                    regularized_gn_step(model, train.values, data.y_train.targets, cfg)
                    v = model.loss_on(val.values, data.y_val.targets) / val.sample_count
                    if v < best:
                        best, best_step = v, step
                rows.append({
                    "experiment_id": "lambda_sweep", "seed": seed, "dataset_size": size,
                    "reg_lambda": lam, "steps_to_best_validation": best_step,
                    "best_val_loss": best,
                })
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--outdir", default="results/speedup")
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    parser.add_argument("--n-seeds", type=int, default=10)
    parser.add_argument("--eta", type=float, default=0.1)
    parser.add_argument("--step-cap", type=int, default=8000)
    parser.add_argument("--lambdas", type=float, nargs="+",
                        default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    parser.add_argument("--gn-steps", type=int, default=120)
    args = parser.parse_args(argv)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    seeds = range(args.n_seeds)

    cutoff_rows = steps_to_cutoff_rows(args.sizes, seeds, args.d, args.eta, args.step_cap)
    cutoff_csv = outdir / "steps_to_cutoff.csv"
    write_csv(cutoff_csv, cutoff_rows)
    emit_plot(
        cutoff_csv,
        PlotSpec(x="dataset_size", y="steps_to_cutoff", group="whitening_mode",
                 logx=True, logy=True, title="steps to training-accuracy cutoff"),
        outdir / "steps_to_cutoff.svg",
    )

    sweep_rows = lambda_sweep_rows(args.lambdas, args.sizes, seeds, args.d, args.gn_steps)
    sweep_csv = outdir / "lambda_sweep.csv"
    write_csv(sweep_csv, sweep_rows)
    emit_plot(
        sweep_csv,
        PlotSpec(x="reg_lambda", y="steps_to_best_validation", group="dataset_size",
                 title="steps to best validation vs regularization"),
        outdir / "lambda_sweep.svg",
    )
    print(f"wrote {cutoff_csv} and {sweep_csv}; plots in {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
