import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from tempair.conjugate import (
    AugmentedScalarSet,
    GaussianMeanModel,
    GaussianMeanPosterior,
    GaussianPosterior,
    augment_gaussian,
    correlated_posterior,
    dense_posterior_oracle,
    iid_tempered_posterior,
    optimal_temperature,
    optimal_temperature_from_variances,
)
from tempair.exceptions import InvalidArgumentError, SingularCovarianceError, SizeLimitError

positive = st.floats(min_value=0.05, max_value=20.0)


@st.composite
def problems(draw, min_eta=0.05):
    model = GaussianMeanModel(
        mu0=draw(st.floats(-5, 5)),
        sigma0_sq=draw(positive),
        sigma_sq=draw(positive),
        sigma_eta_sq=draw(st.floats(min_value=min_eta, max_value=20.0)),
    )
    n = draw(st.integers(1, 8))
    B = draw(st.integers(1, 16))
    values = np.array(draw(st.lists(st.floats(-10, 10), min_size=n * B, max_size=n * B))).reshape(n, B)
    return model, AugmentedScalarSet(values)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


def test_model_rejects_bad_variances():
    with pytest.raises(InvalidArgumentError):
        GaussianMeanModel(0.0, 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        GaussianMeanModel(0.0, 1.0, -1.0)
    with pytest.raises(InvalidArgumentError):
        GaussianMeanModel(0.0, 1.0, 1.0, -0.1)


def test_scalar_set_shape_checks():
    with pytest.raises(InvalidArgumentError):
        AugmentedScalarSet(np.zeros((0, 3)))
    with pytest.raises(InvalidArgumentError):
        AugmentedScalarSet(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidArgumentError):
        AugmentedScalarSet(np.zeros((2, 2)), provenance=np.zeros(3))


def test_zero_noise_augmentation_repeats_source():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 0.0)
    data = augment_gaussian(model, np.array([1.5, -2.0]), 3, seed=0)
    np.testing.assert_array_equal(data.values, [[1.5] * 3, [-2.0] * 3])
    np.testing.assert_array_equal(data.provenance, [1.5, -2.0])


def test_augmentation_variance_monte_carlo():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 4.0)
    B = 100_000
    row = augment_gaussian(model, np.array([0.0]), B, seed=11).values[0]
    # standard error of a sample variance of Gaussians: sigma^2 sqrt(2 / (B - 1))
    assert abs(row.var(ddof=1) - 4.0) < 3 * 4.0 * np.sqrt(2 / (B - 1))


def test_augmentation_is_deterministic():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 2.0)
    src = np.array([0.3, 1.0, -4.0])
    assert augment_gaussian(model, src, 5, seed=3) == augment_gaussian(model, src, 5, seed=3)
    assert augment_gaussian(model, src, 5, seed=3) != augment_gaussian(model, src, 5, seed=4)


def test_augmentation_rejects_empty_inputs():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 2.0)
    with pytest.raises(InvalidArgumentError):
        augment_gaussian(model, np.array([]), 3, seed=0)
    with pytest.raises(InvalidArgumentError):
        augment_gaussian(model, np.array([1.0]), 0, seed=0)


def test_worked_example_two_augmentations():
    # hand solution of the 2x2 system: Sigma = [[2, 1], [1, 2]], prior N(0, 1)
    model = GaussianMeanModel(0.0, 1.0, 1.0, 1.0)
    data = AugmentedScalarSet(np.array([[1.0, 3.0]]))
    for post in (correlated_posterior(model, data), dense_posterior_oracle(model, data)):
        assert post.mean == pytest.approx(0.8, rel=1e-12)
        assert post.variance == pytest.approx(0.6, rel=1e-12)


def test_single_augmentation_is_plain_conjugacy():
    model = GaussianMeanModel(1.0, 2.0, 0.5, 0.7)
    x = np.array([[0.2], [1.9], [3.3]])
    post = correlated_posterior(model, AugmentedScalarSet(x))
    noise = model.sigma_sq + model.sigma_eta_sq
    prec = 3 / noise + 1 / model.sigma0_sq
    assert post.variance == pytest.approx(1 / prec, rel=1e-14)
    assert post.mean == pytest.approx((x.sum() / noise + model.mu0 / model.sigma0_sq) / prec, rel=1e-14)


def test_flat_prior_limit_gives_sample_mean():
    model = GaussianMeanModel(3.0, 1e12, 1.0, 0.5)
    data = AugmentedScalarSet(np.array([[1.0, 2.0, 6.0]]))
    assert rel(correlated_posterior(model, data).mean, 3.0) < 1e-6


def test_singular_block_is_rejected():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 0.0)
    data = AugmentedScalarSet(np.ones((2, 3)))
    with pytest.raises(SingularCovarianceError, match="sigma_eta_sq=0"):
        correlated_posterior(model, data)
    # B = 1 stays well posed
    correlated_posterior(model, AugmentedScalarSet(np.ones((2, 1))))


def test_iid_at_unit_temperature_single_augmentation():
    model = GaussianMeanModel(-1.0, 3.0, 1.0, 2.0)
    data = AugmentedScalarSet(np.array([[0.5], [2.5]]))
    assert iid_tempered_posterior(model, data, 1.0) == correlated_posterior(model, data)


def test_infinite_temperature_returns_prior():
    model = GaussianMeanModel(-1.0, 3.0, 1.0, 2.0)
    data = AugmentedScalarSet(np.full((4, 4), 10.0))
    post = iid_tempered_posterior(model, data, 1e12)
    assert rel(post.mean, -1.0) < 1e-6
    assert rel(post.variance, 3.0) < 1e-6


def test_iid_rejects_nonpositive_temperature():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        iid_tempered_posterior(model, AugmentedScalarSet(np.ones((1, 2))), 0.0)


def test_optimal_temperature_values():
    assert optimal_temperature(GaussianMeanModel(0.0, 1.0, 2.0, 3.0), 1) == 1.0
    assert optimal_temperature(GaussianMeanModel(0.0, 1.0, 2.0, 0.0), 5) == 5.0
    assert optimal_temperature(GaussianMeanModel(0.0, 1.0, 1.0, 1.0), 4) == 2.5
    with pytest.raises(InvalidArgumentError):
        optimal_temperature_from_variances(0.0, 0.0, 3)


def test_optimal_temperature_matches_dense_oracle_example():
    model = GaussianMeanModel(0.5, 2.0, 1.0, 1.0)
    data = augment_gaussian(model, np.array([0.1, -0.4, 2.0]), 4, seed=5)
    iid = iid_tempered_posterior(model, data, 2.5)
    dense = dense_posterior_oracle(model, data)
    assert rel(iid.mean, dense.mean) < 1e-10
    assert rel(iid.variance, dense.variance) < 1e-10


def test_dense_oracle_without_shared_component():
    # sigma_sq is required positive, so approach the diagonal case closely
    model = GaussianMeanModel(0.0, 1.0, 1e-300, 2.0)
    data = AugmentedScalarSet(np.array([[1.0, 2.0, 3.0]]))
    dense = dense_posterior_oracle(model, data)
    prec = 3 / 2.0 + 1.0
    assert dense.variance == pytest.approx(1 / prec, rel=1e-12)
    assert dense.mean == pytest.approx((6.0 / 2.0) / prec, rel=1e-12)


def test_dense_oracle_size_guard():
    model = GaussianMeanModel(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(SizeLimitError):
        dense_posterior_oracle(model, AugmentedScalarSet(np.zeros((257, 16))))


@settings(max_examples=200, deadline=None)
@given(problems())
def test_theorem_identity(problem):
    model, data = problem
    T = optimal_temperature(model, data.B)
    iid = iid_tempered_posterior(model, data, T)
    corr = correlated_posterior(model, data)
    assert rel(iid.mean, corr.mean) <= 1e-10 or abs(iid.mean - corr.mean) <= 1e-12
    assert rel(iid.variance, corr.variance) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(problems())
def test_closed_form_matches_dense_oracle(problem):
    model, data = problem
    corr, dense = correlated_posterior(model, data), dense_posterior_oracle(model, data)
    assert abs(corr.mean - dense.mean) <= 1e-8 * max(abs(dense.mean), 1e-4)
    assert rel(corr.variance, dense.variance) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(positive, st.floats(0.0, 20.0), st.integers(1, 40))
def test_optimal_temperature_monotone(sigma_sq, sigma_eta_sq, B):
    T = optimal_temperature_from_variances(sigma_sq, sigma_eta_sq, B)
    assert T >= 1.0
    assert optimal_temperature_from_variances(sigma_sq, sigma_eta_sq, B + 1) >= T
    assert optimal_temperature_from_variances(sigma_sq, sigma_eta_sq + 0.5, B) <= T


@settings(max_examples=100, deadline=None)
@given(problems())
def test_posterior_variance_shrinks_with_data(problem):
    model, data = problem
    v = correlated_posterior(model, data).variance
    more_sources = AugmentedScalarSet(np.vstack([data.values, data.values[:1]]))
    more_augs = AugmentedScalarSet(np.hstack([data.values, data.values[:, :1]]))
    assert correlated_posterior(model, more_sources).variance < v
    assert correlated_posterior(model, more_augs).variance <= v * (1 + 1e-12)


def test_posterior_logpdf_and_validation():
    post = GaussianPosterior(1.0, 4.0)
    assert post.precision == 0.25
    assert post.logpdf(1.0) == pytest.approx(-0.5 * np.log(8 * np.pi))
    with pytest.raises(InvalidArgumentError):
        GaussianPosterior(0.0, 0.0)


def test_estimator_api():
    X = augment_gaussian(GaussianMeanModel(0.0, 1.0, 1.0, 1.0), np.array([0.2, 1.1]), 4, seed=1).values
    est = GaussianMeanPosterior(sigma_eta_sq=1.0, likelihood="iid", temperature="optimal")
    assert clone(est).get_params() == est.get_params()
    est.fit(X)
    ref = GaussianMeanPosterior(sigma_eta_sq=1.0).fit(X)
    assert est.temperature_ == 2.5
    assert rel(est.mean_, ref.mean_) < 1e-12
    assert np.isfinite(est.score([0.0, 0.5]))
    with pytest.raises(InvalidArgumentError):
        GaussianMeanPosterior(likelihood="nope").fit(X)
