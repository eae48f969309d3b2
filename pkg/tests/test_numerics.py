import numpy as np
import pytest

from deepsitar.numerics import (
    NonFiniteEvaluation,
    NotPositiveDefinite,
    cholesky_spd,
    finite_diff_gradient,
    seeded_rng,
    spd_inverse,
)


def test_cholesky_hand_worked_2x2():
    # [DERIVED] by hand: [[4,2],[2,3]] = L L^T with L = [[2,0],[1,sqrt(2)]].
    m = np.array([[4.0, 2.0], [2.0, 3.0]])
    lower = cholesky_spd(m)
    expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    assert np.allclose(lower, expected, atol=1e-14)


def test_cholesky_reconstructs_random_spd():
    rng = seeded_rng(0)
    for _ in range(20):
        a = rng.standard_normal((3, 3))
        m = a @ a.T + 3 * np.eye(3)
        lower = cholesky_spd(m)
        assert np.allclose(lower @ lower.T, m, atol=1e-10)
        assert np.allclose(np.triu(lower, 1), 0.0)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        cholesky_spd(np.diag([1.0, 0.0]))


def test_cholesky_rejects_bad_input():
    with pytest.raises(ValueError):
        cholesky_spd(np.ones((2, 3)))
    with pytest.raises(ValueError):
        cholesky_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        cholesky_spd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_spd_inverse_hand_worked_2x2():
    # [DERIVED] by hand: inv([[4,2],[2,3]]) = (1/8) [[3,-2],[-2,4]].
    m = np.array([[4.0, 2.0], [2.0, 3.0]])
    expected = np.array([[3.0, -2.0], [-2.0, 4.0]]) / 8.0
    assert np.allclose(spd_inverse(m), expected, atol=1e-14)


def test_spd_inverse_random_spd():
    rng = seeded_rng(1)
    for _ in range(20):
        a = rng.standard_normal((4, 4))
        m = a @ a.T + 4 * np.eye(4)
        inv = spd_inverse(m)
        assert np.allclose(inv @ m, np.eye(4), atol=1e-9)
        assert np.allclose(inv, inv.T)


def test_finite_diff_matches_quadratic_gradient():
    # [DERIVED]: grad of x^T A x / 2 + b.x is (A + A^T) x / 2 + b.
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([-1.0, 0.5])

    def f(x):
        return 0.5 * x @ a @ x + b @ x

    x0 = np.array([0.3, -1.2])
    grad = finite_diff_gradient(f, x0)
    assert np.allclose(grad, a @ x0 + b, atol=1e-7)


def test_finite_diff_rejects_bad_step_and_nan():
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda x: float(x.sum()), np.zeros(2), h=0.0)
    with pytest.raises(NonFiniteEvaluation):
        finite_diff_gradient(lambda x: float("nan"), np.zeros(2))


def test_seeded_rng_reproducible_and_independent():
    a = seeded_rng(7).standard_normal(5)
    b = seeded_rng(7).standard_normal(5)
    c = seeded_rng(8).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
