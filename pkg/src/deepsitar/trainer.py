"""Penalized autoencoder training loop and the supervised variant.

Each epoch: forward every training individual through encoder and decoder,
re-estimate the 3x3 covariance of the predicted effects, accumulate the
gradient of mean(reconstruction + quadratic penalty), and take one plain
SGD step (or one per minibatch).  The covariance is held constant inside
the gradient; it is re-estimated from scratch at the next epoch.  The
step size follows a halving schedule and encoder/spline gradients are
clipped as separate groups; both are recorded in TrainConfig.

The penalty is disabled for the first `penalty_warmup` epochs: before any
update the predicted effects are nearly identical across individuals, the
covariance collapses to jitter * I, and the penalty would dwarf the
reconstruction term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import encoder as enc
from .decoder import FixedEffects, RandomEffects, SitarDecoder, decode_batch
from .encoder import EncoderNet, Standardizer
from .numerics import seeded_rng, spd_inverse
from .splines import design_matrix, make_basis


class TooFewIndividuals(Exception):
    pass


class DivergenceDetected(Exception):
    pass


class MissingGroundTruth(Exception):
    pass


@dataclass
class TrainConfig:
    epochs: int = 22000
    learning_rate: float = 3e-3
    batch_size: Optional[int] = 16          # None = full batch
    jitter: float = 1e-6
    gradient_clip: Optional[float] = 10.0
    penalty_on: bool = True
    penalty_warmup: int = 500
    lr_half_life: Optional[int] = 1200      # halve the step every this many epochs
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.jitter <= 0:
            raise ValueError("jitter must be positive")
        if self.lr_half_life is not None and self.lr_half_life < 1:
            raise ValueError("lr_half_life must be >= 1 or None")

    def lr_at(self, epoch: int) -> float:
        if self.lr_half_life is None:
            return self.learning_rate
        return self.learning_rate * 0.5 ** (epoch // self.lr_half_life)


@dataclass
class CovarianceEstimate:
    lam: np.ndarray
    lam_inv: np.ndarray
    epoch: int = 0


@dataclass
class TrainHistory:
    epoch: np.ndarray
    train_loss: np.ndarray
    train_log_loss: np.ndarray
    val_loss: np.ndarray
    val_log_loss: np.ndarray
    ood_count: np.ndarray

    def __len__(self) -> int:
        return self.epoch.size

    @staticmethod
    def from_records(records: list[tuple]) -> "TrainHistory":
        if not records:
            empty = np.array([])
            return TrainHistory(
                np.array([], dtype=int), empty, empty, empty, empty,
                np.array([], dtype=int),
            )
        cols = list(zip(*records))
        return TrainHistory(
            epoch=np.array(cols[0], dtype=int),
            train_loss=np.array(cols[1]),
            train_log_loss=np.array(cols[2]),
            val_loss=np.array(cols[3]),
            val_log_loss=np.array(cols[4]),
            ood_count=np.array(cols[5], dtype=int),
        )


@dataclass
class TrainedModel:
    """Everything needed to predict for a new individual."""

    encoder: EncoderNet
    standardizer: Standardizer
    decoder: SitarDecoder
    covariance: CovarianceEstimate
    config: TrainConfig
    mode: str = "autoencoder"


def estimate_covariance(effects: np.ndarray, jitter: float, epoch: int = 0) -> CovarianceEstimate:
    """Sample covariance (N-1 denominator) of predicted effects, jittered SPD."""
    effects = np.asarray(effects, dtype=float)
    if effects.ndim != 2 or effects.shape[0] < 2:
        raise TooFewIndividuals("need at least 2 individuals for a covariance")
    centered = effects - effects.mean(axis=0)
    lam = centered.T @ centered / (effects.shape[0] - 1)
    lam = (lam + lam.T) / 2.0 + jitter * np.eye(effects.shape[1])
    return CovarianceEstimate(lam=lam, lam_inv=spd_inverse(lam), epoch=epoch)


def penalty(re: RandomEffects, cov: CovarianceEstimate) -> float:
    """Quadratic shrinkage u^T Lam^-1 u; uses raw (uncentered) effects."""
    u = re.as_array()
    return float(u @ cov.lam_inv @ u)


def _log_or_nan(x: float) -> float:
    return math.log(x) if x > 0 else float("nan")


@dataclass
class LossAndGrads:
    loss: float
    encoder_grads: list
    alpha_grad: np.ndarray
    effects: np.ndarray
    ood_count: int


def _forward_effects(model: TrainedModel, y_rows: np.ndarray):
    x = model.standardizer.apply(y_rows)
    return enc.forward_batch(model.encoder, x)


def autoencoder_loss(
    model: TrainedModel,
    t: np.ndarray,
    y_rows: np.ndarray,
    cov: CovarianceEstimate,
    penalty_on: bool = True,
    with_grads: bool = True,
) -> LossAndGrads:
    """Mean over individuals of ||y - yhat||^2 + u^T Lam^-1 u, with gradients
    flowing through the decoder partials and encoder backprop.  The
    covariance is treated as a constant.
    """
    t = np.asarray(t, dtype=float)
    y_rows = np.asarray(y_rows, dtype=float)
    n_ind = y_rows.shape[0]
    effects, caches = _forward_effects(model, y_rows)
    batch = decode_batch(model.decoder, t, effects)
    resid = batch.yhat - y_rows
    loss = float(np.sum(resid * resid)) / n_ind
    if penalty_on:
        loss += float(np.sum((effects @ cov.lam_inv) * effects)) / n_ind
    if not with_grads:
        return LossAndGrads(loss, [], np.zeros_like(model.decoder.alpha), effects, batch.ood_count)
    d_yhat = (2.0 / n_ind) * resid
    upstream = np.empty_like(effects)
    upstream[:, 0] = d_yhat.sum(axis=1)
    upstream[:, 1] = np.sum(d_yhat * (-batch.scale * batch.slope), axis=1)
    upstream[:, 2] = np.sum(d_yhat * (batch.t_minus_b * batch.scale * batch.slope), axis=1)
    if penalty_on:
        upstream += (2.0 / n_ind) * effects @ cov.lam_inv
    alpha_grad = batch.basis_values.T @ d_yhat.ravel()
    encoder_grads = enc.backward_batch(model.encoder, caches, upstream)
    return LossAndGrads(loss, encoder_grads, alpha_grad, effects, batch.ood_count)


def _clip_scale(flat_grad: np.ndarray, clip: Optional[float]) -> float:
    if clip is None:
        return 1.0
    norm = float(np.linalg.norm(flat_grad))
    return clip / norm if norm > clip else 1.0


def _check_balanced(dataset) -> np.ndarray:
    t = np.asarray(dataset.t, dtype=float)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("dataset must carry a shared time vector")
    return t


def _init_decoder(t, y_train, n_seg, degree, margin) -> SitarDecoder:
    # Center the warp at the mean age: velocity deviations then rotate a
    # curve about mid-domain instead of rescaling age from zero, which keeps
    # the three effect directions on comparable gradient scales.
    b0 = float(t.mean())
    basis = make_basis(float(t.min()) - b0, float(t.max()) - b0, n_seg, degree, margin)
    b_mat = design_matrix(basis, t - b0)
    ybar = y_train.mean(axis=0)
    # Light second-difference penalty: margin-region coefficients have no
    # data support, and plain min-norm least squares leaves them at 0 with
    # wild compensation in their neighbors.  The penalty continues the
    # coefficient sequence linearly through the unsupported edges while
    # leaving the data-determined interior essentially untouched.
    d2 = np.diff(np.eye(basis.m), 2, axis=0)
    alpha = np.linalg.solve(b_mat.T @ b_mat + 1e-3 * d2.T @ d2, b_mat.T @ ybar)
    return SitarDecoder(basis=basis, alpha=alpha, fixed=FixedEffects(b0=b0))


def train_autoencoder(
    dataset,
    config: TrainConfig,
    n_seg: int = 10,
    degree: int = 3,
    margin: float = 0.15,
    dims: Optional[list[int]] = None,
) -> tuple[TrainedModel, TrainHistory]:
    """Fit encoder weights and spline coefficients jointly by SGD."""
    t = _check_balanced(dataset)
    y_train = dataset.train_measurements()
    y_val = dataset.val_measurements()
    if y_train.shape[0] < 2:
        raise TooFewIndividuals("training split needs at least 2 individuals")
    if dims is None:
        dims = [t.size, 30, 30, 3]
    rng = seeded_rng(config.seed)
    std = Standardizer.fit(y_train)
    net = enc.init_encoder(dims, rng)
    dec = _init_decoder(t, y_train, n_seg, degree, margin)
    model = TrainedModel(
        encoder=net, standardizer=std, decoder=dec,
        covariance=None, config=config,
    )
    records = []
    for epoch in range(config.epochs):
        effects, _ = _forward_effects(model, y_train)
        cov = estimate_covariance(effects, config.jitter, epoch)
        active = config.penalty_on and epoch >= config.penalty_warmup
        res = autoencoder_loss(model, t, y_train, cov, penalty_on=active)
        if not math.isfinite(res.loss):
            raise DivergenceDetected(
                f"non-finite training loss at epoch {epoch}; lower the learning rate"
            )
        if y_val.shape[0] > 0:
            val = autoencoder_loss(model, t, y_val, cov, penalty_on=active, with_grads=False)
            val_loss, val_ood = val.loss, val.ood_count
        else:
            val_loss, val_ood = float("nan"), 0
        records.append((
            epoch, res.loss, _log_or_nan(res.loss),
            val_loss, _log_or_nan(val_loss), res.ood_count + val_ood,
        ))
        lr = config.lr_at(epoch)
        if config.batch_size is None:
            _sgd_step(model, res, config, lr)
        else:
            order = rng.permutation(y_train.shape[0])
            for start in range(0, order.size, config.batch_size):
                rows = order[start : start + config.batch_size]
                part = autoencoder_loss(model, t, y_train[rows], cov, penalty_on=active)
                if not math.isfinite(part.loss):
                    raise DivergenceDetected(
                        f"non-finite minibatch loss at epoch {epoch}"
                    )
                _sgd_step(model, part, config, lr)
    effects, _ = _forward_effects(model, y_train)
    model.covariance = estimate_covariance(effects, config.jitter, config.epochs)
    return model, TrainHistory.from_records(records)


def _sgd_step(model: TrainedModel, res: LossAndGrads, config: TrainConfig, lr: float) -> None:
    # Clip encoder and spline-coefficient gradients separately: the raw
    # joint gradient is dominated by the encoder's stiff velocity/tempo
    # components and a single global clip starves the spline coefficients.
    flat_enc = enc.flatten_grads(res.encoder_grads)
    enc_scale = _clip_scale(flat_enc, config.gradient_clip) * lr
    alpha_scale = _clip_scale(res.alpha_grad, config.gradient_clip) * lr
    theta = enc.flatten_params(model.encoder)
    enc.set_params(model.encoder, theta - enc_scale * flat_enc)
    model.decoder.alpha = model.decoder.alpha - alpha_scale * res.alpha_grad


def train_supervised(
    dataset,
    config: TrainConfig,
    dims: Optional[list[int]] = None,
    n_seg: int = 10,
    degree: int = 3,
    margin: float = 0.15,
) -> tuple[TrainedModel, TrainHistory]:
    """Train the encoder directly against known simulated effects.

    The decoder is left at its least-squares population-curve
    initialization so the returned model can still predict curves.
    """
    t = _check_balanced(dataset)
    if dataset.true_effects is None:
        raise MissingGroundTruth("supervised training needs true random effects")
    y_train = dataset.train_measurements()
    y_val = dataset.val_measurements()
    u_train = dataset.true_effects[dataset.train_mask()]
    u_val = dataset.true_effects[dataset.val_mask()]
    if y_train.shape[0] < 2:
        raise TooFewIndividuals("training split needs at least 2 individuals")
    if dims is None:
        dims = [t.size, 30, 30, 3]
    rng = seeded_rng(config.seed)
    std = Standardizer.fit(y_train)
    net = enc.init_encoder(dims, rng)
    dec = _init_decoder(t, y_train, n_seg, degree, margin)
    model = TrainedModel(
        encoder=net, standardizer=std, decoder=dec,
        covariance=None, config=config, mode="supervised",
    )

    def split_loss(y_rows, u_rows, cov, active, with_grads):
        n_ind = y_rows.shape[0]
        out, caches = _forward_effects(model, y_rows)
        diff = out - u_rows
        loss = float(np.sum(diff * diff)) / n_ind
        if active:
            loss += float(np.sum((out @ cov.lam_inv) * out)) / n_ind
        if not with_grads:
            return loss, None
        upstream = (2.0 / n_ind) * diff
        if active:
            upstream = upstream + (2.0 / n_ind) * out @ cov.lam_inv
        return loss, enc.backward_batch(model.encoder, caches, upstream)

    records = []
    for epoch in range(config.epochs):
        out, _ = _forward_effects(model, y_train)
        cov = estimate_covariance(out, config.jitter, epoch)
        active = config.penalty_on and epoch >= config.penalty_warmup
        loss, grads = split_loss(y_train, u_train, cov, active, True)
        if not math.isfinite(loss):
            raise DivergenceDetected(f"non-finite training loss at epoch {epoch}")
        if y_val.shape[0] > 0:
            val_loss, _ = split_loss(y_val, u_val, cov, active, False)
        else:
            val_loss = float("nan")
        records.append((
            epoch, loss, _log_or_nan(loss), val_loss, _log_or_nan(val_loss), 0,
        ))
        flat = enc.flatten_grads(grads)
        scale = _clip_scale(flat, config.gradient_clip) * config.lr_at(epoch)
        enc.set_params(model.encoder, enc.flatten_params(model.encoder) - scale * flat)
    out, _ = _forward_effects(model, y_train)
    model.covariance = estimate_covariance(out, config.jitter, config.epochs)
    return model, TrainHistory.from_records(records)
