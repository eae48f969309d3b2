import numpy as np
import pytest

from deepsitar.numerics import NotPositiveDefinite, seeded_rng
from deepsitar.simulator import (
    GrowthDataset,
    InvalidCount,
    TruthParams,
    default_truth,
    exact_curves,
    load_dataset,
    load_truth,
    make_ages,
    save_dataset,
    save_truth,
    simulate,
)


def test_make_ages_endpoints_and_count():
    t = make_ages(20)
    assert t.size == 20
    assert t[0] == 9.0 and t[-1] == 18.0
    assert np.allclose(np.diff(t), t[1] - t[0])
    with pytest.raises(InvalidCount):
        make_ages(1)


def test_default_truth_is_plausible_growth():
    truth = default_truth()
    t = make_ages(200)
    curve = exact_curves(truth, t, np.zeros((1, 3)))[0]
    assert np.all(np.diff(curve) > 0)  # strictly increasing heights
    assert 130.0 < curve[0] < 138.0
    assert 162.0 < curve[-1] < 172.0
    velocity = np.diff(curve) / np.diff(t)
    peak = np.argmax(velocity)
    assert 12.5 < t[peak] < 14.5          # pubertal spurt timing
    assert 7.0 < velocity[peak] < 10.0    # peak height velocity, cm/yr
    assert velocity[-1] < 2.5             # growth tails off by 18
    # [TRIVIAL] shipped variances
    assert np.allclose(np.diag(truth.lambda_true), [6.25, 0.25, 0.01])
    assert truth.noise_var == 0.4


def test_truth_params_validation():
    truth = default_truth()
    with pytest.raises(NotPositiveDefinite):
        TruthParams(truth.decoder_truth, np.diag([1.0, -1.0, 1.0]), 0.4)
    with pytest.raises(ValueError):
        TruthParams(truth.decoder_truth, truth.lambda_true, -0.1)


def test_simulate_shapes_and_split():
    ds = simulate(40, default_truth(), 0.8, seeded_rng(0))
    assert ds.y.shape == (40, 20)
    assert ds.t.size == 20
    assert ds.true_effects.shape == (40, 3)
    assert int(ds.train_mask().sum()) == 32
    assert int(ds.val_mask().sum()) == 8
    assert ds.train_measurements().shape == (32, 20)


def test_simulate_is_seed_deterministic():
    a = simulate(25, default_truth(), 0.8, seeded_rng(11))
    b = simulate(25, default_truth(), 0.8, seeded_rng(11))
    c = simulate(25, default_truth(), 0.8, seeded_rng(12))
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.true_effects, b.true_effects)
    assert np.array_equal(a.split, b.split)
    assert not np.array_equal(a.y, c.y)


def test_simulated_effect_moments_match_truth():
    truth = default_truth()
    ds = simulate(20000, truth, 0.8, seeded_rng(4))
    emp = np.cov(ds.true_effects.T)
    assert np.allclose(emp, truth.lambda_true, atol=0.15)
    resid = ds.y - exact_curves(truth, ds.t, ds.true_effects)
    assert resid.var() == pytest.approx(truth.noise_var, rel=0.05)
    assert abs(resid.mean()) < 0.01


def test_noiseless_simulation():
    truth = default_truth()
    quiet = TruthParams(truth.decoder_truth, truth.lambda_true, 0.0)
    ds = simulate(5, quiet, 0.5, seeded_rng(2))
    assert np.allclose(ds.y, exact_curves(quiet, ds.t, ds.true_effects))


def test_simulate_argument_validation():
    with pytest.raises(InvalidCount):
        simulate(1, default_truth(), 0.8, seeded_rng(0))
    with pytest.raises(ValueError):
        simulate(10, default_truth(), 1.0, seeded_rng(0))


def test_dataset_round_trip(tmp_path):
    ds = simulate(12, default_truth(), 0.75, seeded_rng(3), n_points=8)
    path = tmp_path / "cohort.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.ids, ds.ids)
    assert np.array_equal(back.t, ds.t)
    assert np.array_equal(back.y, ds.y)  # repr round trip is bit exact
    assert np.array_equal(back.split, ds.split)
    assert np.array_equal(back.true_effects, ds.true_effects)


def test_dataset_round_trip_without_truth(tmp_path):
    ds = simulate(6, default_truth(), 0.5, seeded_rng(5), n_points=4)
    stripped = GrowthDataset(ids=ds.ids, t=ds.t, y=ds.y, split=ds.split)
    path = tmp_path / "cohort.csv"
    save_dataset(stripped, path)
    back = load_dataset(path)
    assert back.true_effects is None
    assert np.array_equal(back.y, ds.y)


def test_load_rejects_unbalanced(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "id,age,y,split\n0,9.0,140.0,train\n0,10.0,141.0,train\n1,9.0,150.0,train\n"
    )
    with pytest.raises(ValueError):
        load_dataset(path)


def test_truth_round_trip(tmp_path):
    truth = default_truth()
    path = tmp_path / "truth.json"
    save_truth(truth, path)
    back = load_truth(path)
    assert np.array_equal(back.lambda_true, truth.lambda_true)
    assert np.array_equal(back.decoder_truth.alpha, truth.decoder_truth.alpha)
    assert back.noise_var == truth.noise_var
    assert np.array_equal(back.decoder_truth.basis.knots, truth.decoder_truth.basis.knots)
    # same seed + reloaded truth reproduces the same cohort exactly
    a = simulate(10, truth, 0.8, seeded_rng(1))
    b = simulate(10, back, 0.8, seeded_rng(1))
    assert np.array_equal(a.y, b.y)


def test_subset_preserves_alignment():
    ds = simulate(10, default_truth(), 0.5, seeded_rng(9))
    sub = ds.subset(ds.train_mask())
    assert sub.n_individuals == int(ds.train_mask().sum())
    assert np.array_equal(sub.y[0], ds.y[ds.train_mask()][0])
