import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempair.augment import Rot90Flip, make_bank
from tempair.conjugate import optimal_temperature_from_variances
from tempair.diagnostics import (
    GroupedResiduals,
    chain_total_variation,
    correlation_report,
    effective_sample_size,
    empirical_error_correlation,
    intraclass_correlation,
    residual_series,
)
from tempair.exceptions import EmptyChainError, InvalidArgumentError
from tempair.linreg import error_correlation
from tempair.net import gconv_classifier, init_params
from tempair.sampler import Chain


def grouped(R):
    return GroupedResiduals(tuple((i, row) for i, row in enumerate(R)))


def simulate(n_groups, B, delta_var, seed=0):
    # residual = shared source noise + augmentation-specific term
    rng = np.random.default_rng(seed)
    eps = rng.normal(size=(n_groups, 1))
    delta = rng.normal(0, np.sqrt(delta_var), size=(n_groups, B)) if delta_var > 0 else np.zeros((n_groups, B))
    return grouped(eps + delta)


# ---------------------------------------------------------------- residuals

def test_residual_series_basic_cases():
    X = np.arange(6.0)
    y = 2 * X
    groups = np.array([3, 3, 1, 1, 0, 0])
    res = residual_series(lambda x: 2 * x, X, y, groups)
    assert [g for g, _ in res.groups] == [3, 1, 0]
    assert all(np.all(r == 0) for _, r in res.groups)
    const = residual_series(lambda x: np.full(len(x), 1.0), X, np.full(6, 4.0), groups)
    assert np.all(const.matrix() == 3.0)
    assert const.rows()[3] == (3, 1, 1, 3.0)
    with pytest.raises(InvalidArgumentError):
        residual_series(lambda x: x, X, y, None)


def test_classifier_residual_is_one_minus_true_probability():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5], [0.4, 0.6]])
    res = residual_series(lambda x: probs, np.zeros(4), np.array([0, 0, 1, 1]), np.array([0, 0, 1, 1]))
    np.testing.assert_allclose(res.matrix(), [[0.1, 0.8], [0.5, 0.4]])


def test_invariant_predictor_gives_identical_group_residuals():
    rng = np.random.default_rng(1)
    source = rng.normal(size=50)
    aug = np.repeat(source, 4) + rng.normal(0, 0.5, size=200)  # augmentation noise on the input
    y = np.repeat(source + rng.normal(size=50), 4)
    invariant = lambda x: np.repeat(np.full(50, 0.3), 4)  # noqa: E731
    res = residual_series(invariant, aug, y, np.repeat(np.arange(50), 4))
    R = res.matrix()
    np.testing.assert_allclose(R, R[:, :1].repeat(4, axis=1), atol=1e-14)


def test_grouped_residual_validation():
    with pytest.raises(InvalidArgumentError):
        GroupedResiduals(((0, np.array([])),))
    with pytest.raises(InvalidArgumentError):
        GroupedResiduals(((0, np.array([np.inf])),))
    with pytest.raises(InvalidArgumentError):
        GroupedResiduals(((0, np.ones(2)), (1, np.ones(3)))).matrix()


# ---------------------------------------------------------------- ICC and error correlation

def test_icc_examples():
    R = np.repeat(np.arange(5.0)[:, None], 3, axis=1)
    assert intraclass_correlation(grouped(R)) == 1.0
    null = grouped(np.random.default_rng(0).normal(size=(2000, 5)))
    assert abs(intraclass_correlation(null)) <= 0.1
    assert intraclass_correlation(simulate(2000, 5, 0.0)) >= 0.99
    with pytest.raises(InvalidArgumentError):
        intraclass_correlation(grouped(np.ones((1, 4))))
    with pytest.raises(InvalidArgumentError):
        intraclass_correlation(grouped(np.ones((4, 3))))


def test_empirical_correlation_matches_closed_form():
    n = 10_000
    res = simulate(n, 4, 3.0, seed=2)
    rho = error_correlation(1.0, 3.0)
    # average of 6 correlated pair estimates; a single-pair SE bounds it
    assert abs(empirical_error_correlation(res) - rho) < 3 * (1 - rho**2) / np.sqrt(n - 3)
    assert empirical_error_correlation(simulate(n, 4, 0.0)) >= 0.999
    assert abs(empirical_error_correlation(grouped(np.random.default_rng(3).normal(size=(n, 4))))) <= 0.05


def test_icc_and_correlation_rank_together():
    ladder = [0.0, 0.5, 2.0, 8.0]
    iccs = [intraclass_correlation(simulate(3000, 4, v, seed=4)) for v in ladder]
    corrs = [empirical_error_correlation(simulate(3000, 4, v, seed=4)) for v in ladder]
    assert np.all(np.diff(iccs) < 0) and np.all(np.diff(corrs) < 0)
    assert all(np.sign(a) == np.sign(b) for a, b in zip(iccs, corrs))


def test_correlation_report_fields():
    report = correlation_report(simulate(100, 3, 1.0))
    assert set(report) == {"n_groups", "B", "icc", "empirical_correlation"}
    assert report["B"] == 3 and report["n_groups"] == 100


# ---------------------------------------------------------------- effective sample size

def test_effective_sample_size_examples():
    assert effective_sample_size(150, 150) == 1
    assert effective_sample_size(150, 1) == 150
    assert effective_sample_size(4, optimal_temperature_from_variances(1.0, 1.0, 4)) == pytest.approx(1.6)
    with pytest.raises(InvalidArgumentError):
        effective_sample_size(4, 0.0)
    with pytest.raises(InvalidArgumentError):
        effective_sample_size(0, 1.0)


@given(st.integers(1, 200), st.floats(0.01, 500))
def test_effective_sample_size_range(B, T):
    ess = effective_sample_size(B, T)
    assert (1 <= ess <= B) == (1 <= T <= B)


# ---------------------------------------------------------------- chain total variation

def test_chain_total_variation():
    # an even grid, where a stride-2 sampling lattice is not centred
    probe = np.random.default_rng(5).normal(size=(3, 1, 8, 8))
    bank = make_bank(Rot90Flip(), 4, 1)
    inv = gconv_classifier((1, 8, 8), 2, [2])
    samples = [init_params(inv, s) for s in range(3)]
    epochs, tv = chain_total_variation(Chain(samples, [4, 9, 14]), inv, probe, bank)
    np.testing.assert_array_equal(epochs, [4, 9, 14])
    assert np.all(tv <= 1e-6)
    strided = gconv_classifier((1, 8, 8), 2, [2], stride=2, padding="zeros")
    s_samples = [init_params(strided, s) for s in range(3)]
    _, tv2 = chain_total_variation(Chain(s_samples, [4, 9, 14]), strided, probe, bank)
    assert np.all(tv2 > tv)
    with pytest.raises(EmptyChainError):
        chain_total_variation(Chain([], []), inv, probe, bank)
