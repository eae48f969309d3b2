"""Model quality metrics and an independent per-individual oracle fit.

The oracle estimates one individual's effects by penalized nonlinear least
squares against the trained decoder: a coarse grid over (tempo, velocity)
with the size effect solved in closed form, then Gauss-Newton refinement.
It never touches the encoder, so it is a fair reference for encoder
predictions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decoder import RandomEffects, decode_batch
from .encoder import encode
from .simulator import GrowthDataset, TruthParams, exact_curves
from .trainer import CovarianceEstimate, TrainedModel


class EmptySplit(Exception):
    pass


class MissingGroundTruth(Exception):
    pass


@dataclass
class MseSummary:
    mean: float
    sd: float
    per_individual: np.ndarray


def _predict_rows(model: TrainedModel, t: np.ndarray, y_rows: np.ndarray):
    x = model.standardizer.apply(y_rows)
    from .encoder import forward_batch

    effects, _ = forward_batch(model.encoder, x)
    batch = decode_batch(model.decoder, t, effects)
    return effects, batch


def _mse_summary(y_rows: np.ndarray, yhat: np.ndarray) -> MseSummary:
    per = np.mean((y_rows - yhat) ** 2, axis=1)
    sd = float(per.std(ddof=1)) if per.size > 1 else 0.0
    return MseSummary(mean=float(per.mean()), sd=sd, per_individual=per)


def per_individual_mse(model: TrainedModel, dataset: GrowthDataset, split: str = "train") -> MseSummary:
    """Mean squared residual per individual against the observed measurements."""
    mask = dataset.split == split
    if not np.any(mask):
        raise EmptySplit(f"no individuals in split {split!r}")
    y_rows = dataset.y[mask]
    _, batch = _predict_rows(model, dataset.t, y_rows)
    return _mse_summary(y_rows, batch.yhat)


def per_individual_mse_exact(
    model: TrainedModel, dataset: GrowthDataset, truth: TruthParams, split: str = "train"
) -> MseSummary:
    """MSE of fitted curves against the noise-free truth curves.

    This scores how well each individual's underlying curve is recovered,
    independent of the observation noise floor.
    """
    if dataset.true_effects is None:
        raise MissingGroundTruth("exact-curve MSE needs true effects")
    mask = dataset.split == split
    if not np.any(mask):
        raise EmptySplit(f"no individuals in split {split!r}")
    clean = exact_curves(truth, dataset.t, dataset.true_effects[mask])
    _, batch = _predict_rows(model, dataset.t, dataset.y[mask])
    return _mse_summary(clean, batch.yhat)


def variance_recovery(
    model: TrainedModel, dataset: GrowthDataset, truth: TruthParams
) -> np.ndarray:
    """|true - estimated| variance per effect, from the final training covariance."""
    est = np.diag(model.covariance.lam)
    return np.abs(np.diag(truth.lambda_true) - est)


def predict_new_individual(
    model: TrainedModel, y_new: np.ndarray, t_new: np.ndarray
) -> tuple[RandomEffects, np.ndarray]:
    """Effects and fitted curve for an unseen individual; no refitting."""
    u = encode(model.encoder, model.standardizer, y_new)
    batch = decode_batch(model.decoder, np.asarray(t_new, float), u[None, :])
    return RandomEffects.from_array(u), batch.yhat[0]


@dataclass
class OracleFit:
    effects: RandomEffects
    objective: float
    converged: bool


def _oracle_objective(dec, penalty_inv, t, y, u_rows: np.ndarray) -> np.ndarray:
    batch = decode_batch(dec, t, u_rows)
    resid = batch.yhat - y[None, :]
    return np.sum(resid * resid, axis=1) + np.sum((u_rows @ penalty_inv) * u_rows, axis=1)


def oracle_fit_individual(
    t: np.ndarray,
    y: np.ndarray,
    dec,
    cov: CovarianceEstimate,
    grid_steps: int = 25,
    grid_sigmas: float = 3.0,
    max_iter: int = 50,
    penalty_weight: float = 1.0,
) -> OracleFit:
    """Penalized least-squares effects for one individual.

    Coarse grid over (b1, c1) with a1 solved in closed form at each grid
    point, then Gauss-Newton with step halving.  The objective is
    nonconvex in (b1, c1); the grid keeps the refinement out of bad local
    optima.  On failure to converge the best point found is returned with
    converged=False.

    penalty_weight scales the quadratic term; 0 gives plain nonlinear
    least squares (the correct limit for noiseless measurements) while the
    grid range still comes from the covariance as given.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError("times and measurements must align")
    if penalty_weight < 0:
        raise ValueError("penalty_weight must be >= 0")
    pen = penalty_weight * cov.lam_inv
    sig_b = math.sqrt(max(cov.lam[1, 1], 1e-12))
    sig_c = math.sqrt(max(cov.lam[2, 2], 1e-12))
    b_grid = np.linspace(-grid_sigmas * sig_b, grid_sigmas * sig_b, grid_steps)
    c_grid = np.linspace(-grid_sigmas * sig_c, grid_sigmas * sig_c, grid_steps)
    bb, cc = [g.ravel() for g in np.meshgrid(b_grid, c_grid, indexing="ij")]
    # Spline part at the warped times for every (b, c) pair, a1 = 0.
    zeros = np.zeros_like(bb)
    grid_u = np.column_stack([zeros, bb, cc])
    spline_part = decode_batch(dec, t, grid_u).yhat
    # Closed-form a1: quadratic in a1 given the rest of the objective.
    resid0 = y[None, :] - spline_part
    a_best = (resid0.sum(axis=1) - (pen[0, 1] * bb + pen[0, 2] * cc)) / (t.size + pen[0, 0])
    grid_u[:, 0] = a_best
    objs = _oracle_objective(dec, pen, t, y, grid_u)
    u = grid_u[int(np.argmin(objs))].copy()
    best = float(np.min(objs))

    from .decoder import decode_gradients

    converged = False
    for _ in range(max_iter):
        re = RandomEffects.from_array(u)
        grads = decode_gradients(dec, t, re)
        batch = decode_batch(dec, t, u[None, :])
        resid = y - batch.yhat[0]
        jac = np.column_stack([grads.d_a1, grads.d_b1, grads.d_c1])
        rhs = jac.T @ resid - pen @ u
        lhs = jac.T @ jac + pen
        try:
            step = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            break
        improved = False
        scale = 1.0
        for _ in range(20):
            cand = u + scale * step
            obj = float(_oracle_objective(dec, pen, t, y, cand[None, :])[0])
            if obj < best:
                u, best, improved = cand, obj, True
                break
            scale *= 0.5
        if not improved:
            converged = True
            break
        if np.linalg.norm(scale * step) < 1e-10:
            converged = True
            break
    return OracleFit(effects=RandomEffects.from_array(u), objective=best, converged=converged)


def effect_recovery_correlation(
    model: TrainedModel, dataset: GrowthDataset, split: Optional[str] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation per effect between predictions and ground truth.

    Returns (correlations, degenerate_flags); a constant column on either
    side yields correlation 0 with its flag set.
    """
    if dataset.true_effects is None:
        raise MissingGroundTruth("correlation needs true effects")
    mask = np.ones(dataset.n_individuals, bool) if split is None else dataset.split == split
    if not np.any(mask):
        raise EmptySplit(f"no individuals in split {split!r}")
    pred, _ = _predict_rows(model, dataset.t, dataset.y[mask])
    true = dataset.true_effects[mask]
    return _columnwise_pearson(pred, true)


def _columnwise_pearson(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    corr = np.zeros(a.shape[1])
    degenerate = np.zeros(a.shape[1], dtype=bool)
    for k in range(a.shape[1]):
        sa, sb = a[:, k].std(), b[:, k].std()
        if sa == 0.0 or sb == 0.0:
            degenerate[k] = True
        else:
            corr[k] = float(np.corrcoef(a[:, k], b[:, k])[0, 1])
    return corr, degenerate


@dataclass
class FitReport:
    """Per-split MSE summaries plus truth-dependent recovery metrics."""

    mse: dict                      # split -> MseSummary (observed data)
    mse_exact: Optional[dict]      # split -> MseSummary vs noise-free curves
    variance_abs_error: Optional[np.ndarray]
    correlations: Optional[dict]   # split -> (corr, degenerate)
    ood_counts: dict               # split -> int


def build_report(
    model: TrainedModel, dataset: GrowthDataset, truth: Optional[TruthParams] = None
) -> FitReport:
    splits = [s for s in ("train", "validation") if np.any(dataset.split == s)]
    mse = {}
    ood = {}
    for s in splits:
        mse[s] = per_individual_mse(model, dataset, s)
        _, batch = _predict_rows(model, dataset.t, dataset.y[dataset.split == s])
        ood[s] = batch.ood_count
    have_truth = dataset.true_effects is not None
    mse_exact = None
    if have_truth and truth is not None:
        mse_exact = {s: per_individual_mse_exact(model, dataset, truth, s) for s in splits}
    correlations = None
    if have_truth:
        correlations = {s: effect_recovery_correlation(model, dataset, s) for s in splits}
    var_err = variance_recovery(model, dataset, truth) if truth is not None else None
    return FitReport(
        mse=mse, mse_exact=mse_exact, variance_abs_error=var_err,
        correlations=correlations, ood_counts=ood,
    )
