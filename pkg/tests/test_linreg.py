import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from tempair.augment import AdditiveGaussian, Identity
from tempair.conjugate import AugmentedScalarSet, GaussianMeanModel, correlated_posterior
from tempair.exceptions import InvalidArgumentError, SingularCovarianceError
from tempair.linreg import (
    AugmentedBayesianRegression,
    AugmentedRegressionSet,
    BlockCovariance,
    LinearAugModel,
    augmentation_block,
    delta_variance_mc,
    error_correlation,
    gls_posterior,
    iid_tempered_linreg_posterior,
    kl_gaussians,
    kl_residual_mismatch,
    linear_error_correlation,
    logistic_latent_sim,
    numeric_kl_temperature,
    optimal_kl_temperature,
    simulate_error_pairs,
    tempered_likelihood_kl,
)


def pearson_se(rho, n):
    return (1 - rho**2) / np.sqrt(n - 3)


def regression_set(n=5, B=3, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    return AugmentedRegressionSet.from_sources(X, y, 0.3 * np.eye(d), B, seed=seed)


# ---------------------------------------------------------------- correlations

def test_error_correlation_values():
    assert error_correlation(2.0, 0.0) == 1.0
    assert error_correlation(1.0, 1e12) <= 1e-11
    assert error_correlation(1.0, 3.0) == 0.25
    with pytest.raises(InvalidArgumentError):
        error_correlation(1.0, -1.0)
    with pytest.raises(InvalidArgumentError):
        error_correlation(0.0, 1.0)


def test_error_correlation_monte_carlo():
    n = 100_000
    rng = np.random.default_rng(0)
    eps = rng.normal(size=n)
    a = eps + rng.normal(0, np.sqrt(3), size=n)
    b = eps + rng.normal(0, np.sqrt(3), size=n)
    assert abs(np.corrcoef(a, b)[0, 1] - error_correlation(1.0, 3.0)) < 3 * pearson_se(0.25, n)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.0, 100), st.floats(0.01, 10))
def test_error_correlation_range_and_monotone(s, v, dv):
    r = error_correlation(s, v)
    assert 0.0 < r <= 1.0
    assert error_correlation(s, v + dv) < r


def test_linear_error_correlation_cases():
    invariant = LinearAugModel(np.array([1.0, -1.0]), 1.0, 0.7 * np.ones((2, 2)))
    assert linear_error_correlation(invariant) == 1.0
    assert linear_error_correlation(LinearAugModel(np.array([2.0, 5.0]), 1.0, np.zeros((2, 2)))) == 1.0
    model = LinearAugModel(np.array([1.0, 0.0]), 1.0, np.diag([3.0, 7.0]))
    assert linear_error_correlation(model) == 0.25
    a, b = simulate_error_pairs(model, 100_000, seed=1)
    assert abs(np.corrcoef(a, b)[0, 1] - 0.25) < 3 * pearson_se(0.25, 100_000)


def test_linear_model_validation():
    with pytest.raises(InvalidArgumentError):
        LinearAugModel(np.array([1.0, 0.0]), 1.0, np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        LinearAugModel(np.array([1.0, 0.0]), 1.0, -np.eye(2))
    with pytest.raises(InvalidArgumentError):
        LinearAugModel(np.array([1.0, 0.0]), 1.0, np.eye(3))


def test_delta_variance_mc():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    theta = np.array([1.0, -2.0])
    var, mean = delta_variance_mc(lambda x: 7.0, AdditiveGaussian(cov), np.zeros(2), 50, seed=0)
    assert var == 0.0 and mean == 0.0
    draws = 20_000
    var, mean = delta_variance_mc(lambda x: theta @ x, AdditiveGaussian(cov), np.ones(2), draws, seed=2)
    exact = theta @ cov @ theta
    assert abs(var - exact) < 3 * exact * np.sqrt(2 / (draws - 1))
    assert abs(mean) < 3 * np.sqrt(exact / draws)
    again = delta_variance_mc(lambda x: theta @ x, AdditiveGaussian(cov), np.ones(2), 2, seed=9)
    assert again == delta_variance_mc(lambda x: theta @ x, AdditiveGaussian(cov), np.ones(2), 2, seed=9)
    with pytest.raises(InvalidArgumentError):
        delta_variance_mc(lambda x: 0.0, Identity(), np.ones(2), 1, seed=0)


# ---------------------------------------------------------------- block covariance

@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.floats(0.01, 10), st.floats(0.0, 10))
def test_block_identities_match_dense(B, a, s):
    block = BlockCovariance(B, a, s)
    dense = block.dense()
    np.testing.assert_allclose(block.inverse(), np.linalg.inv(dense), rtol=1e-10, atol=1e-10 / a)
    assert block.trace_inverse() == pytest.approx(np.trace(np.linalg.inv(dense)), rel=1e-10)
    assert block.logdet() == pytest.approx(np.linalg.slogdet(dense)[1], rel=1e-10, abs=1e-10)


def test_block_pd_rules():
    assert not BlockCovariance(3, 0.0, 1.0).is_pd
    assert BlockCovariance(1, 0.0, 1.0).is_pd
    assert not BlockCovariance(2, 1.0, -0.6).is_pd
    with pytest.raises(SingularCovarianceError):
        BlockCovariance(3, 0.0, 1.0).inverse()


def test_regression_set_requires_shared_response():
    with pytest.raises(InvalidArgumentError, match="share one response"):
        AugmentedRegressionSet(np.zeros((2, 1)), np.array([1.0, 2.0]), np.array([0, 0]))


# ---------------------------------------------------------------- posteriors

def test_gls_diagonal_equals_iid_at_unit_temperature():
    data = regression_set()
    pm, pc = np.zeros(2), 2.0 * np.eye(2)
    m1, c1 = gls_posterior(data, BlockCovariance(1, 0.8, 0.0), pm, pc)
    m2, c2 = iid_tempered_linreg_posterior(data, 0.8, 1.0, pm, pc)
    np.testing.assert_allclose(m1, m2, rtol=1e-10)
    np.testing.assert_allclose(c1, c2, rtol=1e-10)


def test_gls_matches_conjugate_module():
    model = GaussianMeanModel(0.0, 1.5, 0.7, 0.4)
    values = np.array([[0.3, 1.2, -0.5], [2.0, 2.2, 1.1]])
    # the mean model puts the augmentation noise on the response, so skip the shared-response check
    class ScalarSet(AugmentedRegressionSet):
        def __post_init__(self):
            pass

    data = ScalarSet(np.ones((6, 1)), values.reshape(-1), np.repeat([0, 1], 3))
    mean, cov = gls_posterior(data, BlockCovariance(3, 0.4, 0.7), np.zeros(1), 1.5 * np.eye(1))
    ref = correlated_posterior(model, AugmentedScalarSet(values))
    assert mean[0] == pytest.approx(ref.mean, rel=1e-12)
    assert cov[0, 0] == pytest.approx(ref.variance, rel=1e-12)


def test_degenerate_duplicates_collapse_to_one_observation():
    x = np.array([[1.0, 0.5]])
    y = np.array([2.0])
    B = 6
    dup = AugmentedRegressionSet(np.repeat(x, B, axis=0), np.repeat(y, B), np.zeros(B, dtype=int))
    single = AugmentedRegressionSet(x, y, np.zeros(1, dtype=int))
    pm, pc = np.zeros(2), np.eye(2)
    m_dup, c_dup = gls_posterior(dup, BlockCovariance(B, 1e-6, 1.0), pm, pc)
    m_one, c_one = gls_posterior(single, BlockCovariance(1, 0.0, 1.0), pm, pc)
    np.testing.assert_allclose(m_dup, m_one, atol=1e-3)
    np.testing.assert_allclose(c_dup, c_one, atol=1e-3)


def test_gls_rejects_singular_block():
    with pytest.raises(SingularCovarianceError):
        gls_posterior(regression_set(), BlockCovariance(3, 0.0, 1.0), np.zeros(2), np.eye(2))


def test_duplicated_rows_at_temperature_B():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    B = 5
    base = AugmentedRegressionSet(X, y, np.arange(7))
    dup = AugmentedRegressionSet(np.repeat(X, B, axis=0), np.repeat(y, B), np.repeat(np.arange(7), B))
    pm, pc = np.zeros(3), np.eye(3)
    m1, c1 = iid_tempered_linreg_posterior(base, 0.5, 1.0, pm, pc)
    mB, cB = iid_tempered_linreg_posterior(dup, 0.5, float(B), pm, pc)
    np.testing.assert_allclose(mB, m1, rtol=1e-10)
    np.testing.assert_allclose(cB, c1, rtol=1e-10)


def test_temperature_halves_likelihood_precision():
    data = regression_set(seed=3)
    pc = np.eye(2)
    _, c1 = iid_tempered_linreg_posterior(data, 1.0, 1.0, np.zeros(2), pc)
    _, c2 = iid_tempered_linreg_posterior(data, 1.0, 2.0, np.zeros(2), pc)
    lik1 = np.linalg.inv(c1) - np.eye(2)
    lik2 = np.linalg.inv(c2) - np.eye(2)
    np.testing.assert_allclose(lik2, 0.5 * lik1, rtol=1e-9)
    with pytest.raises(InvalidArgumentError):
        iid_tempered_linreg_posterior(data, 1.0, 0.0, np.zeros(2), pc)


# ---------------------------------------------------------------- KL temperature

def test_kl_gaussians_examples():
    m, c = np.array([0.3, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]])
    assert kl_gaussians(m, c, m, c) == 0.0
    assert kl_gaussians(0.0, 1.0, 0.0, 2.0) == pytest.approx(0.5 * (np.log(2) - 1 + 0.5), rel=1e-12)
    assert kl_gaussians(0.0, 1.0, 0.0, 2.0) != pytest.approx(kl_gaussians(0.0, 2.0, 0.0, 1.0))
    with pytest.raises(SingularCovarianceError):
        kl_gaussians(0.0, 1.0, 0.0, 0.0)


def test_optimal_kl_temperature_examples():
    assert optimal_kl_temperature(1.0, 1.0, 1) == pytest.approx(1.0)
    assert tempered_likelihood_kl(1.0, 1.0, 1, 1.0) <= 1e-12
    assert optimal_kl_temperature(1.0, 1.0, 2) == pytest.approx(4 / 3, rel=1e-12)
    assert numeric_kl_temperature(1.0, 1.0, 2) == pytest.approx(4 / 3, abs=1e-7)
    assert abs(optimal_kl_temperature(1.0, 1e8, 7) - 1.0) < 1e-6
    with pytest.raises(SingularCovarianceError):
        optimal_kl_temperature(1.0, 0.0, 3)


def test_kl_residual_examples():
    assert kl_residual_mismatch(2.0, 0.5, 1) <= 1e-12
    assert kl_residual_mismatch(1.0, 1.0, 2) == pytest.approx(0.5 * np.log(4 / 3), rel=1e-12)
    T = optimal_kl_temperature(1.0, 1.0, 2)
    assert tempered_likelihood_kl(1.0, 1.0, 2, T) == pytest.approx(0.5 * np.log(4 / 3), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.integers(1, 32))
def test_closed_form_kl_temperature_is_the_minimiser(se, sh, B):
    t_closed = optimal_kl_temperature(se, sh, B)
    assert abs(t_closed - numeric_kl_temperature(se, sh, B)) <= 1e-6 * max(1.0, t_closed)
    kl = kl_residual_mismatch(se, sh, B)
    assert kl == pytest.approx(tempered_likelihood_kl(se, sh, B, t_closed), rel=1e-8, abs=1e-12)
    assert (kl > 0) == (B >= 2)


def test_augmentation_block_roles():
    block = augmentation_block(1.0, 2.0, 3)
    assert (block.diag_term, block.shared_term) == (2.0, 1.0)


# ---------------------------------------------------------------- logistic simulation

def test_logistic_invariant_predictor():
    agree, corr = logistic_latent_sim(lambda x: 0.4, AdditiveGaussian(np.eye(2)), np.ones(2), 4, 200, seed=0)
    assert agree == 1.0
    assert corr == 1.0


def test_logistic_single_augmentation():
    agree, _ = logistic_latent_sim(lambda x: x.sum(), AdditiveGaussian(np.eye(2)), np.ones(2), 1, 100, seed=0)
    assert agree == 1.0


def test_logistic_non_invariant_predictor():
    theta = np.array([5.0, 5.0])
    agree, corr = logistic_latent_sim(lambda x: theta @ x, AdditiveGaussian(np.eye(2)), np.ones(2), 3, 2000, seed=1)
    # implied errors share the logistic term (variance pi^2/3) against delta variance 50
    assert corr < 0.5
    assert agree < 1.0
    with pytest.raises(InvalidArgumentError):
        logistic_latent_sim(lambda x: 0.0, Identity(), np.ones(2), 2, 99, seed=0)


# ---------------------------------------------------------------- estimator

def test_regressor_fit_predict_and_params():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.normal(size=40)
    est = AugmentedBayesianRegression(noise_var=0.01, prior_var=10.0)
    assert clone(est).get_params() == est.get_params()
    est.fit(X, y)
    assert est.n_features_in_ == 3
    assert est.score(X, y) > 0.99
    iid = AugmentedBayesianRegression(noise_var=0.01, likelihood="iid", prior_var=10.0).fit(X, y)
    np.testing.assert_allclose(iid.coef_, est.coef_, rtol=1e-10)


def test_regressor_groups_and_temperature():
    data = regression_set(n=6, B=4, d=2, seed=5)
    corr = AugmentedBayesianRegression(noise_var=1.0, augmentation_var=0.3).fit(
        data.X_tilde, data.y, groups=data.group_index)
    iid = AugmentedBayesianRegression(noise_var=1.0, augmentation_var=0.3, likelihood="iid",
                                      temperature=4.0).fit(data.X_tilde, data.y, groups=data.group_index)
    assert corr.coef_cov_.shape == (2, 2)
    assert np.all(np.isfinite(iid.predict(data.X_tilde)))
    with pytest.raises(InvalidArgumentError):
        AugmentedBayesianRegression(likelihood="bad").fit(data.X_tilde, data.y)
