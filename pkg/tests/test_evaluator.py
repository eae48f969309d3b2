import numpy as np
import pytest

from deepsitar import encoder as enc
from deepsitar.decoder import decode_batch
from deepsitar.evaluator import (
    EmptySplit,
    MissingGroundTruth,
    build_report,
    effect_recovery_correlation,
    oracle_fit_individual,
    per_individual_mse,
    per_individual_mse_exact,
    predict_new_individual,
    variance_recovery,
)
from deepsitar.numerics import seeded_rng, spd_inverse
from deepsitar.simulator import TruthParams, default_truth, exact_curves, simulate
from deepsitar.trainer import CovarianceEstimate, TrainConfig, train_autoencoder


@pytest.fixture(scope="module")
def truth():
    return default_truth()


@pytest.fixture(scope="module")
def dataset(truth):
    return simulate(30, truth, 0.8, seeded_rng(5), n_points=10)


@pytest.fixture(scope="module")
def model(dataset):
    config = TrainConfig(epochs=100, learning_rate=5e-3, seed=0, penalty_warmup=10)
    trained, _ = train_autoencoder(dataset, config, n_seg=4)
    return trained


def true_covariance(truth):
    return CovarianceEstimate(truth.lambda_true, spd_inverse(truth.lambda_true), 0)


def test_per_individual_mse_hand_check(model, dataset):
    summary = per_individual_mse(model, dataset, "train")
    y = dataset.train_measurements()
    x = model.standardizer.apply(y)
    effects, _ = enc.forward_batch(model.encoder, x)
    yhat = decode_batch(model.decoder, dataset.t, effects).yhat
    per = np.mean((y - yhat) ** 2, axis=1)
    assert np.allclose(summary.per_individual, per)
    assert summary.mean == pytest.approx(per.mean())
    assert summary.sd == pytest.approx(per.std(ddof=1))


def test_mse_exact_scores_against_clean_curves(model, dataset, truth):
    observed = per_individual_mse(model, dataset, "train")
    exact = per_individual_mse_exact(model, dataset, truth, "train")
    clean = exact_curves(truth, dataset.t, dataset.true_effects[dataset.train_mask()])
    y = dataset.train_measurements()
    # the two metrics differ exactly by scoring target (observed vs clean)
    assert not np.allclose(observed.per_individual, exact.per_individual)
    x = model.standardizer.apply(y)
    effects, _ = enc.forward_batch(model.encoder, x)
    yhat = decode_batch(model.decoder, dataset.t, effects).yhat
    assert np.allclose(exact.per_individual, np.mean((clean - yhat) ** 2, axis=1))


def test_mse_missing_split_and_truth(model, dataset):
    with pytest.raises(EmptySplit):
        per_individual_mse(model, dataset, "nope")
    stripped = dataset.subset(np.ones(dataset.n_individuals, bool))
    stripped.true_effects = None
    with pytest.raises(MissingGroundTruth):
        per_individual_mse_exact(model, stripped, default_truth(), "train")


def test_variance_recovery_absolute_errors(model, dataset, truth):
    err = variance_recovery(model, dataset, truth)
    expected = np.abs(np.diag(truth.lambda_true) - np.diag(model.covariance.lam))
    assert np.allclose(err, expected)
    assert err.shape == (3,)


def test_predict_new_individual_matches_components(model, dataset):
    y_new = dataset.val_measurements()[0]
    effects, curve = predict_new_individual(model, y_new, dataset.t)
    u = enc.encode(model.encoder, model.standardizer, y_new)
    assert np.array_equal(effects.as_array(), u)
    batch = decode_batch(model.decoder, dataset.t, u[None, :])
    assert np.array_equal(curve, batch.yhat[0])


def test_oracle_recovers_effects_on_noiseless_data(truth):
    # With no observation noise the penalty weight should vanish (it trades
    # off against the residual scale), so fit with penalty_weight=0 and
    # expect near-exact recovery of the true effects.
    quiet = TruthParams(truth.decoder_truth, truth.lambda_true, 0.0)
    ds = simulate(20, quiet, 0.8, seeded_rng(8))
    cov = true_covariance(truth)
    for i in range(20):
        fit = oracle_fit_individual(
            ds.t, ds.y[i], truth.decoder_truth, cov, penalty_weight=0.0
        )
        err = np.abs(fit.effects.as_array() - ds.true_effects[i])
        assert np.all(err < 1e-3)
        assert fit.objective < 1e-6


def test_oracle_objective_is_penalized_least_squares(truth):
    ds = simulate(5, truth, 0.8, seeded_rng(9))
    cov = true_covariance(truth)
    fit = oracle_fit_individual(ds.t, ds.y[0], truth.decoder_truth, cov)
    u = fit.effects.as_array()
    yhat = decode_batch(truth.decoder_truth, ds.t, u[None, :]).yhat[0]
    expected = float(np.sum((ds.y[0] - yhat) ** 2) + u @ cov.lam_inv @ u)
    assert fit.objective == pytest.approx(expected, rel=1e-10)
    # no nearby point does better: the returned fit is a local optimum
    rng = seeded_rng(10)
    for _ in range(50):
        probe = u + rng.standard_normal(3) * np.array([0.05, 0.02, 0.005])
        yp = decode_batch(truth.decoder_truth, ds.t, probe[None, :]).yhat[0]
        obj = float(np.sum((ds.y[0] - yp) ** 2) + probe @ cov.lam_inv @ probe)
        assert obj >= fit.objective - 1e-9


def test_oracle_input_validation(truth):
    cov = true_covariance(truth)
    with pytest.raises(ValueError):
        oracle_fit_individual(np.zeros(3), np.zeros(4), truth.decoder_truth, cov)


def test_effect_correlation_perfect_and_degenerate(model, dataset):
    corr, degen = effect_recovery_correlation(model, dataset, "train")
    assert corr.shape == (3,) and degen.shape == (3,)
    assert np.all(np.abs(corr) <= 1.0)
    stripped = dataset.subset(np.ones(dataset.n_individuals, bool))
    stripped.true_effects = np.zeros((dataset.n_individuals, 3))
    corr0, degen0 = effect_recovery_correlation(model, stripped, "train")
    assert np.all(degen0)
    assert np.all(corr0 == 0.0)


def test_build_report_structure(model, dataset, truth):
    report = build_report(model, dataset, truth)
    assert set(report.mse) == {"train", "validation"}
    assert set(report.mse_exact) == {"train", "validation"}
    assert report.variance_abs_error.shape == (3,)
    assert set(report.correlations) == {"train", "validation"}
    assert set(report.ood_counts) == {"train", "validation"}
    no_truth = build_report(model, dataset, None)
    assert no_truth.mse_exact is None
    assert no_truth.variance_abs_error is None
