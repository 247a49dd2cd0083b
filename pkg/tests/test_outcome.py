import numpy as np
import pytest

from stcausal.errors import EstimationError
from stcausal.outcome import (
    OutcomeFit,
    ScadLinear,
    build_features,
    default_lambda_grid,
    fit_arm,
    fit_outcome,
    predict,
    scad_coordinate_descent,
)
from stcausal.propensity import ScadPenalty


def correlated_design(n, q, seed, rho=0.5):
    rng = np.random.default_rng(seed)
    shared = rng.normal(size=(n, 1))
    return np.sqrt(rho) * shared + np.sqrt(1 - rho) * rng.normal(size=(n, q))


def normal_equations(F, y):
    """Independent least-squares oracle with an intercept column."""
    D = np.column_stack([np.ones(F.shape[0]), F])
    return np.linalg.solve(D.T @ D, D.T @ y)


class TestBuildFeatures:
    def test_hard_mode_layout(self):
        F = build_features(np.array([[0.5, -1.0]]), np.array([2]), 4, n_states=3)
        np.testing.assert_array_equal(F, [[0.5, -1.0, 0.0, 1.0, 0.0, 4.0]])

    def test_soft_mode_passthrough(self):
        post = np.full((2, 3), 1.0 / 3.0)
        F = build_features(np.zeros((2, 2)), post, 1)
        np.testing.assert_allclose(F[:, 2:5], 1.0 / 3.0)

    def test_feature_count(self):
        for p, k in [(2, 3), (5, 2), (1, 1)]:
            X = np.zeros((4, p))
            post = np.full((4, k), 1.0 / k)
            assert build_features(X, post, 2).shape[1] == p + k + 1

    def test_missing_latent_rejected(self):
        with pytest.raises(ValueError, match="latent"):
            build_features(np.zeros((2, 2)), None, 1)

    def test_hard_mode_needs_n_states(self):
        with pytest.raises(ValueError, match="n_states"):
            build_features(np.zeros((2, 2)), np.array([1, 2]), 1)

    def test_row_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rows"):
            build_features(np.zeros((3, 2)), np.zeros((2, 3)), 1)


class TestCoordinateDescent:
    def test_unpenalized_matches_normal_equations(self):
        F = correlated_design(200, 8, seed=0)
        rng = np.random.default_rng(1)
        y = 1.5 + F @ rng.normal(size=8) + rng.normal(scale=0.5, size=200)
        intercept, coef, _ = scad_coordinate_descent(F, y, ScadPenalty(0.0))
        oracle = normal_equations(F, y)
        assert abs(intercept - oracle[0]) < 1e-8
        np.testing.assert_allclose(coef, oracle[1:], atol=1e-8)

    def test_zero_response_gives_zeros(self):
        F = correlated_design(50, 4, seed=2)
        intercept, coef, _ = scad_coordinate_descent(F, np.zeros(50), ScadPenalty(0.3))
        assert intercept == 0.0
        assert np.all(coef == 0.0)

    def test_interpolates_noise_free_linear(self):
        F = correlated_design(100, 5, seed=3)
        beta = np.array([2.0, -1.0, 0.5, 0.0, 3.0])
        y = 0.7 + F @ beta
        intercept, coef, _ = scad_coordinate_descent(F, y, ScadPenalty(0.0))
        resid = y - intercept - F @ coef
        assert np.max(np.abs(resid)) < 1e-8

    def test_exact_bitwise_sparsity(self):
        rng = np.random.default_rng(4)
        F = correlated_design(300, 12, seed=4)
        y = 2.0 * F[:, 0] - 2.0 * F[:, 1] + rng.normal(size=300)
        _, coef, _ = scad_coordinate_descent(F, y, ScadPenalty(0.4))
        zeros = coef[np.abs(coef) < 0.2]
        assert zeros.size > 0
        assert all(v.item() == 0.0 for v in zeros)

    def test_constant_column_gets_zero(self):
        F = np.column_stack([np.ones(30), np.random.default_rng(5).normal(size=30)])
        y = np.random.default_rng(6).normal(size=30)
        _, coef, _ = scad_coordinate_descent(F, y, ScadPenalty(0.1))
        assert coef[0] == 0.0

    def test_rank_deficiency_warns_unpenalized(self):
        F = np.random.default_rng(7).normal(size=(5, 10))
        with pytest.warns(UserWarning, match="rank"):
            scad_coordinate_descent(F, np.zeros(5), ScadPenalty(0.0), max_sweeps=10)


class TestFitArm:
    def test_empty_arm_rejected(self):
        F = np.zeros((4, 2))
        with pytest.raises(EstimationError, match="empty"):
            fit_arm(F, np.zeros(4), np.zeros(4, dtype=bool), ScadPenalty(0.1))

    def test_intercept_position(self):
        F = correlated_design(120, 3, seed=8)
        y = 5.0 + F[:, 0]
        coefs = fit_arm(F, y, np.ones(120, dtype=bool), ScadPenalty(0.0))
        assert coefs.shape == (4,)
        assert coefs[0] == pytest.approx(5.0, abs=1e-6)

    def test_outcome_fit_and_predict(self):
        rng = np.random.default_rng(9)
        F = correlated_design(200, 4, seed=9)
        treat = rng.integers(0, 2, size=200)
        y = 1.0 + 2.0 * treat + F[:, 0] + rng.normal(scale=0.1, size=200)
        fit = fit_outcome(F, y, treat, ScadPenalty(0.0), feature_spec="test")
        m1 = predict(fit, F, 1)
        m0 = predict(fit, F, 0)
        assert np.mean(m1 - m0) == pytest.approx(2.0, abs=0.1)

    def test_predict_dimension_mismatch(self):
        fit = OutcomeFit(beta0=np.zeros(3), beta1=np.zeros(3), feature_spec="", lambda2=0.0)
        with pytest.raises(ValueError, match="columns"):
            predict(fit, np.zeros((2, 5)), 0)

    def test_outcome_fit_validation(self):
        with pytest.raises(ValueError, match="equal length"):
            OutcomeFit(beta0=np.zeros(2), beta1=np.zeros(3), feature_spec="", lambda2=0.0)


class TestScadLinearEstimator:
    def test_bic_recovers_support(self):
        rng = np.random.default_rng(9910)  # independent of the design stream
        F = correlated_design(400, 20, seed=10)
        beta = np.zeros(20)
        beta[[0, 3, 7, 11, 15]] = [2.0, -2.0, 2.0, -2.0, 2.0]
        y = F @ beta + rng.normal(scale=0.5, size=400)
        est = ScadLinear(lam="bic").fit(F, y)
        assert set(np.flatnonzero(est.coef_)) == {0, 3, 7, 11, 15}
        np.testing.assert_allclose(est.coef_[[0, 3, 7, 11, 15]], beta[[0, 3, 7, 11, 15]],
                                   atol=0.2)

    def test_nearly_unbiased_on_strong_signal(self):
        # SCAD's defining property: large coefficients are not shrunk
        rng = np.random.default_rng(11)
        F = rng.normal(size=(2000, 6))
        beta = np.array([3.0, -3.0, 0, 0, 0, 0])
        y = F @ beta + rng.normal(size=2000)
        est = ScadLinear(lam=0.2).fit(F, y)
        ols = normal_equations(F, y)
        np.testing.assert_allclose(est.coef_[:2], ols[1:3], atol=5e-3)

    def test_fixed_lambda(self):
        F = correlated_design(100, 3, seed=12)
        y = F[:, 0]
        est = ScadLinear(lam=0.05).fit(F, y)
        assert est.lambda_ == 0.05
        assert est.path_table_ is None
        assert est.predict(F).shape == (100,)

    def test_get_params_roundtrip(self):
        est = ScadLinear(lam=0.1, a=3.0)
        assert est.get_params()["a"] == 3.0

    def test_default_grid_positive_descending(self):
        F = correlated_design(80, 5, seed=13)
        y = np.random.default_rng(13).normal(size=80)
        grid = default_lambda_grid(F, y)
        assert np.all(grid > 0)
        assert np.all(np.diff(grid) < 0)
