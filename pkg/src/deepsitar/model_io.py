"""Versioned text serialization for trained models, histories, and reports.

Everything is JSON or delimited text so pipeline artifacts are diffable;
floats are written with shortest round-trip repr, which makes save/load
bit-exact and repeated runs byte-identical.
"""
from __future__ import annotations

import csv
import json

import numpy as np

from .decoder import FixedEffects, SitarDecoder
from .encoder import EncoderNet, Layer, Standardizer
from .evaluator import FitReport
from .splines import make_basis
from .trainer import CovarianceEstimate, TrainConfig, TrainedModel, TrainHistory

MODEL_FORMAT_VERSION = 1


def _mat(a: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(a)]


def _vec(a: np.ndarray) -> list:
    return [float(v) for v in np.asarray(a).ravel()]


def save_model(model: TrainedModel, path, truth_hash: str | None = None) -> None:
    basis = model.decoder.basis
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "mode": model.mode,
        "encoder": {
            "dims": model.encoder.dims(),
            "activations": [lay.activation for lay in model.encoder.layers],
            "weights": [_mat(lay.weights) for lay in model.encoder.layers],
            "biases": [_vec(lay.biases) for lay in model.encoder.layers],
        },
        "standardizer": {
            "mean": _vec(model.standardizer.mean),
            "sd": _vec(model.standardizer.sd),
        },
        "decoder": {
            "basis": {
                "domain_lo": basis.domain_lo,
                "domain_hi": basis.domain_hi,
                "n_seg": basis.n_seg,
                "degree": basis.degree,
                "margin": basis.margin,
            },
            "knots": _vec(basis.knots),
            "alpha": _vec(model.decoder.alpha),
            "fixed": {
                "a0": model.decoder.fixed.a0,
                "b0": model.decoder.fixed.b0,
                "c0": model.decoder.fixed.c0,
            },
        },
        "covariance": {
            "lambda": _mat(model.covariance.lam),
            "lambda_inv": _mat(model.covariance.lam_inv),
            "epoch": model.covariance.epoch,
        },
        "config": {
            "epochs": model.config.epochs,
            "learning_rate": model.config.learning_rate,
            "batch_size": model.config.batch_size,
            "jitter": model.config.jitter,
            "gradient_clip": model.config.gradient_clip,
            "penalty_on": model.config.penalty_on,
            "penalty_warmup": model.config.penalty_warmup,
            "lr_half_life": model.config.lr_half_life,
            "seed": model.config.seed,
        },
    }
    if truth_hash is not None:
        payload["truth_hash"] = truth_hash
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {payload.get('format_version')}")
    e = payload["encoder"]
    layers = [
        Layer(
            weights=np.array(w, dtype=float),
            biases=np.array(b, dtype=float),
            activation=act,
        )
        for w, b, act in zip(e["weights"], e["biases"], e["activations"])
    ]
    d = payload["decoder"]
    b = d["basis"]
    basis = make_basis(b["domain_lo"], b["domain_hi"], b["n_seg"], b["degree"], b["margin"])
    if not np.allclose(basis.knots, np.array(d["knots"]), atol=1e-12):
        raise ValueError("stored knots disagree with basis parameters")
    fx = d["fixed"]
    c = payload["covariance"]
    cfg = payload["config"]
    return TrainedModel(
        encoder=EncoderNet(layers=layers),
        standardizer=Standardizer(
            mean=np.array(payload["standardizer"]["mean"], dtype=float),
            sd=np.array(payload["standardizer"]["sd"], dtype=float),
        ),
        decoder=SitarDecoder(
            basis=basis,
            alpha=np.array(d["alpha"], dtype=float),
            fixed=FixedEffects(a0=fx["a0"], b0=fx["b0"], c0=fx["c0"]),
        ),
        covariance=CovarianceEstimate(
            lam=np.array(c["lambda"], dtype=float),
            lam_inv=np.array(c["lambda_inv"], dtype=float),
            epoch=int(c["epoch"]),
        ),
        config=TrainConfig(
            epochs=cfg["epochs"],
            learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"],
            jitter=cfg["jitter"],
            gradient_clip=cfg["gradient_clip"],
            penalty_on=cfg["penalty_on"],
            penalty_warmup=cfg["penalty_warmup"],
            lr_half_life=cfg["lr_half_life"],
            seed=cfg["seed"],
        ),
        mode=payload.get("mode", "autoencoder"),
    )


def save_history(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "train_loss", "train_log_loss", "val_loss", "val_log_loss", "ood_count"]
        )
        for i in range(len(history)):
            writer.writerow([
                int(history.epoch[i]),
                repr(float(history.train_loss[i])),
                repr(float(history.train_log_loss[i])),
                repr(float(history.val_loss[i])),
                repr(float(history.val_log_loss[i])),
                int(history.ood_count[i]),
            ])


def _summary_dict(summary) -> dict:
    return {
        "mean": summary.mean,
        "sd": summary.sd,
        "per_individual": _vec(summary.per_individual),
    }


def report_to_json(report: FitReport) -> dict:
    payload: dict = {
        "format_version": 1,
        "mse": {s: _summary_dict(m) for s, m in report.mse.items()},
        "ood_counts": {s: int(v) for s, v in report.ood_counts.items()},
    }
    if report.mse_exact is not None:
        payload["mse_exact"] = {s: _summary_dict(m) for s, m in report.mse_exact.items()}
    if report.variance_abs_error is not None:
        payload["variance_abs_error"] = _vec(report.variance_abs_error)
    else:
        payload["variance_recovery"] = "unavailable"
    if report.correlations is not None:
        payload["effect_correlation"] = {
            s: {"corr": _vec(c), "degenerate": [bool(v) for v in d]}
            for s, (c, d) in report.correlations.items()
        }
    return payload


def save_report(report: FitReport, path, n_individuals: int, n_seg: int) -> None:
    payload = report_to_json(report)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    # Companion summary table mirroring the report in long format.
    with open(str(path) + ".summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["N", "n_seg", "split", "metric", "value"])
        for s, m in report.mse.items():
            writer.writerow([n_individuals, n_seg, s, "mean_mse", repr(m.mean)])
            writer.writerow([n_individuals, n_seg, s, "sd_mse", repr(m.sd)])
        if report.mse_exact is not None:
            for s, m in report.mse_exact.items():
                writer.writerow([n_individuals, n_seg, s, "mean_mse_exact", repr(m.mean)])
                writer.writerow([n_individuals, n_seg, s, "sd_mse_exact", repr(m.sd)])
        if report.variance_abs_error is not None:
            for name, v in zip(("var_a", "var_b", "var_c"), report.variance_abs_error):
                writer.writerow([n_individuals, n_seg, "train", f"abs_err_{name}", repr(float(v))])
