"""Command-line pipeline: simulate, train, evaluate, predict, reproduce.

Exit codes are a stable contract: 0 success, 2 usage error, 3 I/O
failure, 4 numerical failure (training divergence, degenerate covariance).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys

import numpy as np

from . import model_io, simulator
from .evaluator import build_report, predict_new_individual
from .numerics import NotPositiveDefinite, seeded_rng
from .simulator import default_truth, load_dataset, load_truth, save_dataset, save_truth, simulate
from .trainer import DivergenceDetected, TrainConfig, train_autoencoder, train_supervised

SEED_ENV_VAR = "DEEPSITAR_SEED"

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _default_seed(value) -> int:
    if value is not None:
        return int(value)
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def _load_truth_arg(spec: str) -> simulator.TruthParams:
    if spec == "default":
        return default_truth()
    try:
        return load_truth(spec)
    except OSError as exc:
        raise CliError(f"cannot read truth config {spec!r}: {exc}", EXIT_IO)


def _parse_times(spec: str) -> np.ndarray:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise CliError(f"bad times spec {spec!r}; use lo:hi:count", EXIT_USAGE)
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(lo, hi, count)
    return np.array([float(v) for v in spec.split(",")])


def _parse_dims(spec: str) -> list[int]:
    dims = [int(v) for v in spec.split(",")]
    if len(dims) < 2 or dims[-1] != 3:
        raise CliError(f"bad dims {spec!r}; need at least input,3 ending in 3", EXIT_USAGE)
    return dims


def cmd_simulate(args) -> int:
    truth = _load_truth_arg(args.truth)
    rng = seeded_rng(_default_seed(args.seed))
    try:
        ds = simulate(args.n, truth, args.split, rng, n_points=args.n_points)
    except NotPositiveDefinite as exc:
        raise CliError(str(exc), EXIT_NUMERICAL)
    try:
        save_dataset(ds, args.out)
        if args.truth_out:
            save_truth(truth, args.truth_out)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO)
    n_train = int(np.sum(ds.train_mask()))
    print(f"simulated N={ds.n_individuals} individuals, {ds.t.size} visits each")
    print(f"split: {n_train} train / {ds.n_individuals - n_train} validation")
    print(f"wrote {args.out}")
    return 0


def _truth_hash(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def cmd_train(args) -> int:
    try:
        ds = load_dataset(args.data)
    except OSError as exc:
        raise CliError(f"cannot read dataset {args.data!r}: {exc}", EXIT_IO)
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size if args.batch_size > 0 else None,
        lr_half_life=args.lr_half_life if args.lr_half_life > 0 else None,
        seed=_default_seed(args.seed),
        penalty_on=not args.no_penalty,
    )
    dims = _parse_dims(args.dims) if args.dims else None
    try:
        if args.mode == "autoencoder":
            model, history = train_autoencoder(ds, config, n_seg=args.nseg, dims=dims)
        else:
            model, history = train_supervised(ds, config, dims=dims, n_seg=args.nseg)
    except DivergenceDetected as exc:
        raise CliError(f"training diverged: {exc}", EXIT_NUMERICAL)
    except NotPositiveDefinite as exc:
        raise CliError(f"degenerate covariance: {exc}", EXIT_NUMERICAL)
    try:
        model_io.save_model(model, args.out)
        if args.history:
            model_io.save_history(history, args.history)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO)
    final = history.train_loss[-1] if len(history) else float("nan")
    print(f"trained {args.mode} model: {args.epochs} epochs, final train loss {final:.6g}")
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    try:
        model = model_io.load_model(args.model)
        ds = load_dataset(args.data)
        truth = _load_truth_arg(args.truth) if args.truth else None
    except OSError as exc:
        raise CliError(f"cannot read inputs: {exc}", EXIT_IO)
    report = build_report(model, ds, truth)
    try:
        model_io.save_report(report, args.out, ds.n_individuals, model.decoder.basis.n_seg)
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", EXIT_IO)
    for split, summary in report.mse.items():
        print(f"{split}: mean MSE {summary.mean:.6g} (sd {summary.sd:.6g})")
    if report.variance_abs_error is None:
        print("variance recovery: unavailable (no truth provided)")
    print(f"wrote {args.out}")
    return 0


def cmd_predict(args) -> int:
    try:
        model = model_io.load_model(args.model)
        rows = _read_measurement_rows(args.input)
    except OSError as exc:
        raise CliError(f"cannot read inputs: {exc}", EXIT_IO)
    dim = model.encoder.input_dim
    if rows.shape[1] != dim:
        raise CliError(
            f"each input row needs {dim} measurements, got {rows.shape[1]}", EXIT_USAGE
        )
    if args.times:
        times = _parse_times(args.times)
    else:
        basis = model.decoder.basis
        times = np.linspace(basis.domain_lo, basis.domain_hi, dim)
    try:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["row", "a1", "b1", "c1"] + [f"y@{repr(float(tv))}" for tv in times]
            )
            for i, row in enumerate(rows):
                effects, curve = predict_new_individual(model, row, times)
                writer.writerow(
                    [i, repr(effects.a1), repr(effects.b1), repr(effects.c1)]
                    + [repr(float(v)) for v in curve]
                )
    except OSError as exc:
        raise CliError(f"cannot write predictions: {exc}", EXIT_IO)
    print(f"predicted {rows.shape[0]} individuals at {times.size} time points")
    print(f"wrote {args.out}")
    return 0


def _read_measurement_rows(path: str) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.reader(fh):
            if not raw:
                continue
            try:
                rows.append([float(v) for v in raw])
            except ValueError:
                continue  # header or comment line
    if not rows:
        raise CliError(f"no numeric rows in {path!r}", EXIT_USAGE)
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise CliError("input rows have inconsistent lengths", EXIT_USAGE)
    return np.array(rows)


def cmd_reproduce(args) -> int:
    """Chain simulate -> train -> evaluate over a (N, n_seg) grid."""
    os.makedirs(args.out_dir, exist_ok=True)
    truth = default_truth()
    truth_path = os.path.join(args.out_dir, "truth.json")
    save_truth(truth, truth_path)
    summary_rows = []
    seed = _default_seed(args.seed)
    for n in args.n:
        rng = seeded_rng(seed + n)
        ds = simulate(n, truth, 0.8, rng)
        data_path = os.path.join(args.out_dir, f"cohort_n{n}.csv")
        save_dataset(ds, data_path)
        for nseg in args.nseg:
            tag = f"n{n}_seg{nseg}"
            config = TrainConfig(epochs=args.epochs, learning_rate=args.lr, seed=seed)
            try:
                model, history = train_autoencoder(ds, config, n_seg=nseg)
            except DivergenceDetected as exc:
                raise CliError(f"training diverged for {tag}: {exc}", EXIT_NUMERICAL)
            model_io.save_model(model, os.path.join(args.out_dir, f"model_{tag}.json"))
            model_io.save_history(history, os.path.join(args.out_dir, f"history_{tag}.csv"))
            report = build_report(model, ds, truth)
            model_io.save_report(
                report, os.path.join(args.out_dir, f"report_{tag}.json"), n, nseg
            )
            for split in report.mse:
                row = [n, nseg, split, repr(report.mse[split].mean)]
                if report.mse_exact is not None:
                    row.append(repr(report.mse_exact[split].mean))
                summary_rows.append(row)
            print(f"{tag}: train MSE {report.mse['train'].mean:.4f}")
    with open(os.path.join(args.out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "n_seg", "split", "mean_mse", "mean_mse_exact"])
        writer.writerows(summary_rows)
    print(f"wrote {args.out_dir}/summary.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepsitar",
        description="Growth-curve autoencoder: simulate cohorts, train, evaluate, predict.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    p.add_argument("--n", type=int, required=True, help="number of individuals")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--truth", default="default", help='truth config path or "default"')
    p.add_argument("--truth-out", default=None, help="also write the truth config here")
    p.add_argument("--split", type=float, default=0.8, help="training fraction")
    p.add_argument("--n-points", type=int, default=20, help="visits per individual")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--nseg", type=int, default=10, help="spline segments (basis size nseg+3)")
    p.add_argument("--epochs", type=int, default=22000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=16, help="minibatch size; 0 = full batch")
    p.add_argument(
        "--lr-half-life", type=int, default=1200,
        help="halve the learning rate every this many epochs; 0 = constant",
    )
    p.add_argument("--dims", default=None, help="comma-separated layer sizes, e.g. 20,30,30,3")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("autoencoder", "supervised"), default="autoencoder")
    p.add_argument("--no-penalty", action="store_true", help="disable the covariance penalty")
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="write per-epoch loss history here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", default=None, help='truth config path or "default"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict effects and curves for new individuals")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV of measurement rows")
    p.add_argument("--times", default=None, help='comma list or "lo:hi:count" grid')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("reproduce", help="simulate/train/evaluate over an (N, n_seg) grid")
    p.add_argument("--n", type=int, nargs="+", default=[500, 1000])
    p.add_argument("--nseg", type=int, nargs="+", default=[5, 10])
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
