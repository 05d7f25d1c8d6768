"""Command-line interface.

Subcommands: whiten, second-moments, train-linear, train-mlp, sweep,
compress, reconstruct-k, rank, verify, plot. The WHITEBENCH_SEED environment
variable overrides the configured master seed; all paths are relative to the
working directory.
"""
from __future__ import annotations

import argparse
import struct
import sys
from pathlib import Path

import numpy as np

from . import dataio, plotting, runner, verify
from .datatypes import Dataset, compute_F, compute_K, compute_mixed_K, estimate_input_rank
from .errors import ValidationError, WhitebenchError
from .info_checks import CompressedDataset, compress_whitened, reconstruct_K
from .plotting import PlotSpec
from .runconfig import parse_config
from .whitening import RankPolicy, apply_whitener, fit_whitener

_SCOPE_BY_FLAG = {"train": "train_only", "full": "full", "distribution": "distribution"}


def _format_of(path) -> str:
    return "wbds" if str(path).endswith(".wbds") else "csv"


def _cmd_whiten(args):
    fmt = _format_of(args.input)
    X, labels = dataio.ingest(args.input, fmt)
    fit_X = X
    if args.fit_input:
        fit_X, _ = dataio.ingest(args.fit_input, _format_of(args.fit_input))
    policy = RankPolicy(kind="jitter" if args.rank_policy == "jitter" else "manual")
    whitener = fit_whitener(
        fit_X, mode=args.mode, rank_policy=policy,
        fit_scope=_SCOPE_BY_FLAG[args.scope], center=args.center,
    )
    out = apply_whitener(whitener, X)
    dataio.export(args.output, _format_of(args.output), out, labels)
    print(f"whitened {args.input} -> {args.output} (mode={args.mode}, scope={args.scope}, "
          f"rank={whitener.fit_rank}, fit_id={whitener.fit_dataset_id})")
    return 0


def _cmd_second_moments(args):
    X, _ = dataio.ingest(args.input, _format_of(args.input))
    if args.which == "f":
        M = compute_F(X)
    elif args.which == "k":
        M = compute_K(X)
    else:
        if not args.input2:
            raise ValidationError("--which mixed needs --input2 for the second dataset")
        X2, _ = dataio.ingest(args.input2, _format_of(args.input2))
        M = compute_mixed_K(X, X2)
    dataio.write_matrix_csv(args.output, M)
    print(f"wrote {args.which} block of shape {M.shape} to {args.output}")
    return 0


def _cmd_train_linear(args):
    cfg = parse_config(args.config)
    rows = runner.run_experiment(cfg, trainer="linear")
    out = Path(cfg.experiment.get("output_dir", "results")) / f"{cfg.experiment_id}_linear.csv"
    runner.write_rows_csv(out, rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _cmd_train_mlp(args):
    cfg = parse_config(args.config)
    rows = runner.run_experiment(cfg, trainer="mlp")
    out = Path(cfg.experiment.get("output_dir", "results")) / f"{cfg.experiment_id}_mlp.csv"
    runner.write_rows_csv(out, rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _cmd_sweep(args):
    cfg = parse_config(args.config)
    rows = runner.sweep(cfg, workers=args.workers)
    out = Path(cfg.experiment.get("output_dir", "results")) / f"{cfg.experiment_id}_sweep.csv"
    runner.write_rows_csv(out, rows)
    errors = sum(1 for r in rows if r.stopping_reason == "error")
    print(f"wrote {len(rows)} rows to {out} ({errors} error rows)")
    return 0


_WBCP_MAGIC = b"WBCP"


def _cmd_compress(args):
    X, _ = dataio.ingest(args.input, _format_of(args.input))
    c = compress_whitened(X)
    with open(args.output, "wb") as fh:
        fh.write(_WBCP_MAGIC)
        fh.write(struct.pack("<H", 1))
        fh.write(struct.pack("<II", c.d, c.n))
        has_perm = c.column_permutation is not None
        fh.write(struct.pack("<B", 1 if has_perm else 0))
        if has_perm:
            fh.write(np.asarray(c.column_permutation, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(c.payload, dtype="<f8").tobytes(order="F"))
    print(f"compressed {args.input}: {c.scalar_count} scalars "
          f"(d={c.d}, n={c.n}, permuted={has_perm}) -> {args.output}")
    return 0


def _read_compressed(path) -> CompressedDataset:
    from .errors import ParseError

    data = Path(path).read_bytes()
    if data[:4] != _WBCP_MAGIC:
        raise ParseError(f"{path}: bad magic {data[:4]!r} at offset 0, expected {_WBCP_MAGIC!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != 1:
        raise ParseError(f"{path}: unsupported version {version}")
    d, n = struct.unpack_from("<II", data, 6)
    (has_perm,) = struct.unpack_from("<B", data, 14)
    offset = 15
    perm = None
    if has_perm:
        perm = np.frombuffer(data, dtype="<u4", count=n, offset=offset).astype(int)
        offset += 4 * n
    payload = np.frombuffer(data, dtype="<f8", offset=offset).reshape((d, n - d), order="F")
    return CompressedDataset(payload=payload, d=d, n=n, column_permutation=perm)


def _cmd_reconstruct_k(args):
    c = _read_compressed(args.input)
    K = reconstruct_K(c)
    dataio.write_matrix_csv(args.output, K)
    print(f"reconstructed {K.shape[0]}x{K.shape[1]} Gram matrix -> {args.output}")
    return 0


def _cmd_rank(args):
    X, _ = dataio.ingest(args.input, _format_of(args.input))
    r = estimate_input_rank(X, cutoff_ratio=args.cutoff_ratio)
    print(r)
    return 0


def _cmd_verify(args):
    report = verify.run_suites([args.suite])
    if args.report:
        verify.write_report(report, args.report)
    for name, suite in report["suites"].items():
        for check in suite["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"{status} {name}/{check['check']}: deviation {check['max_deviation']:.3e} "
                  f"(tol {check['tolerance']:.1e})")
    print("all suites passed" if report["passed"] else "FAILURES present")
    return 0 if report["passed"] else 1


def _cmd_plot(args):
    cfg = parse_config(args.spec)
    spec = PlotSpec.from_config(cfg.plot)
    plotting.emit_plot(args.results, spec, args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="whitebench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("whiten", help="fit and apply a whitening transform")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["pca", "zca"], required=True)
    p.add_argument("--scope", choices=["train", "full", "distribution"], default="train")
    p.add_argument("--rank-policy", choices=["jitter", "manual"], default="manual")
    p.add_argument("--output", required=True)
    p.add_argument("--fit-input", help="optional file the transform is fitted on (default: --input)")
    p.add_argument("--center", action="store_true")
    p.set_defaults(fn=_cmd_whiten)

    p = sub.add_parser("second-moments", help="write F, K, or the mixed Gram block")
    p.add_argument("--input", required=True)
    p.add_argument("--which", choices=["f", "k", "mixed"], required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--input2", help="second dataset for --which mixed")
    p.set_defaults(fn=_cmd_second_moments)

    p = sub.add_parser("train-linear", help="closed-form flow training with early stopping")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train_linear)

    p = sub.add_parser("train-mlp", help="iterative training to an accuracy cutoff")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train_mlp)

    p = sub.add_parser("sweep", help="grid of sizes x whitening modes x seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("compress", help="compress fully whitened data to (n-d)*d scalars")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_compress)

    p = sub.add_parser("reconstruct-k", help="rebuild the Gram matrix from compressed data")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_reconstruct_k)

    p = sub.add_parser("rank", help="estimate the input rank of a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--cutoff-ratio", type=float, default=1e-5)
    p.set_defaults(fn=_cmd_rank)

    p = sub.add_parser("verify", help="run the property battery; exit 0 iff all pass")
    p.add_argument("--suite", choices=list(verify.SUITES) + ["all"], default="all")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("plot", help="render an SVG line chart from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except WhitebenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
