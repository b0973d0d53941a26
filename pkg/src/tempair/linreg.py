"""Bayesian linear regression under additive input augmentations.

Augmenting ``x`` while keeping its response ``y`` induces errors
``eps + delta`` that are shared across the augmentations of one source.
This module provides the correlation formulas, the correct (generalised
least squares) posterior, the tempered i.i.d. posterior, and the
KL-optimal temperature between the tempered and correlated likelihoods.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from . import augment as _augment
from ._validation import check_count, check_finite_array, check_positive, check_symmetric_psd
from .exceptions import InvalidArgumentError, SingularCovarianceError


@dataclass(frozen=True)
class LinearAugModel:
    theta_star: np.ndarray
    sigma_eps_sq: float
    Sigma_eta: np.ndarray
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None

    def __post_init__(self):
        theta = check_finite_array(self.theta_star, "theta_star", ndim=1)
        d = theta.size
        check_positive(self.sigma_eps_sq, "sigma_eps_sq")
        sig = check_symmetric_psd(np.atleast_2d(self.Sigma_eta), "Sigma_eta")
        if sig.shape != (d, d):
            raise InvalidArgumentError(f"Sigma_eta must be {d}x{d}, got {sig.shape}")
        pm = np.zeros(d) if self.prior_mean is None else check_finite_array(self.prior_mean, "prior_mean", ndim=1)
        pc = np.eye(d) if self.prior_cov is None else np.atleast_2d(np.asarray(self.prior_cov, dtype=float))
        _cholesky(pc, "prior_cov")
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "Sigma_eta", sig)
        object.__setattr__(self, "prior_mean", pm)
        object.__setattr__(self, "prior_cov", pc)

    @property
    def delta_variance(self):
        return float(self.theta_star @ self.Sigma_eta @ self.theta_star)


@dataclass(frozen=True)
class BlockCovariance:
    """One block ``diag_term * I_B + shared_term * 11^T``.

    All inverse quantities use the Sherman-Morrison form; eigenvalues are
    ``diag_term`` (multiplicity ``B - 1``) and ``diag_term + B * shared_term``.
    """

    B: int
    diag_term: float
    shared_term: float

    def __post_init__(self):
        check_count(self.B, "B")

    @property
    def is_pd(self):
        top = self.diag_term + self.B * self.shared_term
        if self.B == 1:
            return top > 0
        return self.diag_term > 0 and top > 0

    def check_pd(self):
        if not self.is_pd:
            raise SingularCovarianceError(
                f"block covariance not positive definite: diag_term={self.diag_term}, "
                f"shared_term={self.shared_term}, B={self.B}"
            )

    def dense(self, B=None):
        B = self.B if B is None else B
        return self.diag_term * np.eye(B) + self.shared_term * np.ones((B, B))

    def inverse(self, B=None):
        B = self.B if B is None else B
        self.check_pd()
        a, s = self.diag_term, self.shared_term
        if B == 1:
            return np.array([[1.0 / (a + s)]])
        return (np.eye(B) - s / (a + B * s) * np.ones((B, B))) / a

    def trace_inverse(self):
        self.check_pd()
        a, s, B = self.diag_term, self.shared_term, self.B
        if B == 1:
            return 1.0 / (a + s)
        return B * (a + (B - 1) * s) / (a * (a + B * s))

    def logdet(self):
        self.check_pd()
        a, s, B = self.diag_term, self.shared_term, self.B
        if B == 1:
            return float(np.log(a + s))
        return float(np.log(a + B * s) + (B - 1) * np.log(a))

    def gram_terms(self, X, y):
        """Return ``X^T S^-1 X`` and ``X^T S^-1 y`` for one block of rows."""
        self.check_pd()
        a, s = self.diag_term, self.shared_term
        B = X.shape[0]
        if B == 1:
            return X.T @ X / (a + s), X.T @ y / (a + s)
        c = s / (a + B * s)
        sx = X.sum(axis=0)
        XtX = (X.T @ X - c * np.outer(sx, sx)) / a
        Xty = (X.T @ y - c * sx * y.sum()) / a
        return XtX, Xty


@dataclass(frozen=True)
class AugmentedRegressionSet:
    X_tilde: np.ndarray
    y: np.ndarray
    group_index: np.ndarray

    def __post_init__(self):
        X = check_finite_array(self.X_tilde, "X_tilde", ndim=2)
        y = check_finite_array(self.y, "y", ndim=1)
        g = np.asarray(self.group_index)
        if g.ndim != 1 or not np.issubdtype(g.dtype, np.integer):
            raise InvalidArgumentError("group_index must be a 1-d integer array")
        if not (X.shape[0] == y.size == g.size):
            raise InvalidArgumentError("X_tilde, y and group_index must have matching lengths")
        for grp in np.unique(g):
            ys = y[g == grp]
            if not np.all(ys == ys[0]):
                raise InvalidArgumentError(f"group {grp} rows do not share one response")
        object.__setattr__(self, "X_tilde", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "group_index", g)

    def groups(self):
        for grp in np.unique(self.group_index):
            mask = self.group_index == grp
            yield grp, self.X_tilde[mask], self.y[mask]

    @classmethod
    def from_sources(cls, X, y, Sigma_eta, B, seed):
        """Additively augment each row of ``X`` ``B`` times; responses are copied."""
        X = check_finite_array(X, "X", ndim=2)
        y = check_finite_array(y, "y", ndim=1)
        spec = _augment.AdditiveGaussian(np.atleast_2d(Sigma_eta))
        bank = _augment.make_bank(spec, B, seed)
        rows, ys, groups = [], [], []
        for i, (x, yi) in enumerate(zip(X, y)):
            for b in range(B):
                rows.append(_augment.apply(spec, x, bank.item_seed(b, i)))
                ys.append(yi)
                groups.append(i)
        return cls(np.array(rows), np.array(ys), np.array(groups))


def _cholesky(matrix, name):
    try:
        return scipy.linalg.cho_factor(matrix, lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularCovarianceError(f"{name} is not positive definite") from exc


def error_correlation(sigma_eps_sq, var_delta):
    """Correlation of two augmentation errors sharing the source error."""
    sigma_eps_sq = check_positive(sigma_eps_sq, "sigma_eps_sq")
    var_delta = check_positive(var_delta, "var_delta", strict=False)
    return sigma_eps_sq / (sigma_eps_sq + var_delta)


def linear_error_correlation(model):
    return error_correlation(model.sigma_eps_sq, max(model.delta_variance, 0.0))


def simulate_error_pairs(model, n_pairs, seed):
    """Draw ``(eps + delta_1, eps + delta_2)`` for additive augmentations of a
    linear model: ``delta = -eta^T theta*`` with ``eta ~ N(0, Sigma_eta)``."""
    n_pairs = check_count(n_pairs, "n_pairs", minimum=2)
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, np.sqrt(model.sigma_eps_sq), size=n_pairs)
    d = model.theta_star.size
    eta = rng.multivariate_normal(np.zeros(d), model.Sigma_eta, size=(2, n_pairs), method="eigh")
    delta = -eta @ model.theta_star
    return eps + delta[0], eps + delta[1]


def delta_variance_mc(predictor, augmenter, x, draws, seed):
    """Monte Carlo estimate of ``var(f(x) - f(R(x)))``.

    Returns ``(variance, mean)``; the mean should be close to zero for an
    unbiased augmentation.
    """
    draws = check_count(draws, "draws", minimum=2)
    x = np.asarray(x, dtype=float)
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=draws)
    base = float(predictor(x))
    deltas = np.array([base - float(predictor(_augment.apply(augmenter, x, int(s)))) for s in seeds])
    return float(deltas.var(ddof=1)), float(deltas.mean())


def _check_prior(prior_mean, prior_cov, d):
    prior_mean = check_finite_array(prior_mean, "prior_mean", ndim=1)
    prior_cov = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    if prior_mean.size != d or prior_cov.shape != (d, d):
        raise InvalidArgumentError(f"prior must be {d}-dimensional")
    return prior_mean, _cholesky(prior_cov, "prior_cov")


def _gaussian_posterior(prior_mean, prior_factor, XtSX, XtSy):
    d = prior_mean.size
    prior_prec = scipy.linalg.cho_solve(prior_factor, np.eye(d))
    precision = prior_prec + XtSX
    precision = 0.5 * (precision + precision.T)
    factor = _cholesky(precision, "posterior precision")
    cov = scipy.linalg.cho_solve(factor, np.eye(d))
    mean = scipy.linalg.cho_solve(factor, prior_prec @ prior_mean + XtSy)
    return mean, 0.5 * (cov + cov.T)


def gls_posterior(data, cov, prior_mean, prior_cov):
    """Posterior over weights under ``y ~ N(X theta, blockdiag(S, ..., S))``.

    ``cov`` describes one block; blocks are sized by each group's row count.
    """
    cov.check_pd()
    d = data.X_tilde.shape[1]
    prior_mean, prior_factor = _check_prior(prior_mean, prior_cov, d)
    XtSX = np.zeros((d, d))
    XtSy = np.zeros(d)
    for _, Xg, yg in data.groups():
        block = BlockCovariance(Xg.shape[0], cov.diag_term, cov.shared_term)
        a, b = block.gram_terms(Xg, yg)
        XtSX += a
        XtSy += b
    return _gaussian_posterior(prior_mean, prior_factor, XtSX, XtSy)


def iid_tempered_linreg_posterior(data, noise_var, T, prior_mean, prior_cov):
    """Conjugate posterior with likelihood covariance ``noise_var * T * I``."""
    T = check_positive(T, "T")
    noise_var = check_positive(noise_var, "noise_var")
    d = data.X_tilde.shape[1]
    prior_mean, prior_factor = _check_prior(prior_mean, prior_cov, d)
    scale = T * noise_var
    X = data.X_tilde
    return _gaussian_posterior(prior_mean, prior_factor, X.T @ X / scale, X.T @ data.y / scale)


def kl_gaussians(mean1, cov1, mean2, cov2):
    """``KL(N(mean1, cov1) || N(mean2, cov2))``."""
    mean1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    mean2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    k = mean1.size
    if mean2.size != k or cov1.shape != (k, k) or cov2.shape != (k, k):
        raise InvalidArgumentError("kl_gaussians: dimension mismatch")
    f1 = _cholesky(cov1, "cov1")
    f2 = _cholesky(cov2, "cov2")
    logdet1 = 2.0 * np.log(np.diag(f1[0])).sum()
    logdet2 = 2.0 * np.log(np.diag(f2[0])).sum()
    diff = mean2 - mean1
    trace = np.trace(scipy.linalg.cho_solve(f2, cov1))
    maha = diff @ scipy.linalg.cho_solve(f2, diff)
    return float(max(0.5 * (logdet2 - logdet1 - k + trace + maha), 0.0))


def augmentation_block(sigma_eps_sq, sigma_eta_sq, B):
    """Error covariance of ``B`` augmentations of one point: ``sigma_eta^2 I + sigma_eps^2 11^T``."""
    B = check_count(B, "B")
    sigma_eps_sq = check_positive(sigma_eps_sq, "sigma_eps_sq")
    sigma_eta_sq = check_positive(sigma_eta_sq, "sigma_eta_sq", strict=False)
    block = BlockCovariance(B, sigma_eta_sq, sigma_eps_sq)
    block.check_pd()
    return block


def tempered_likelihood_kl(sigma_eps_sq, sigma_eta_sq, B, T):
    """KL from the tempered i.i.d. likelihood to the correlated one, evaluated
    with dense matrices (no closed form)."""
    block = augmentation_block(sigma_eps_sq, sigma_eta_sq, B)
    T = check_positive(T, "T")
    zero = np.zeros(B)
    iid = (sigma_eps_sq + sigma_eta_sq) / T * np.eye(B)
    return kl_gaussians(zero, iid, zero, block.dense())


def optimal_kl_temperature(sigma_eps_sq, sigma_eta_sq, B):
    """Temperature minimising ``KL(tempered iid || correlated)``:
    ``(sigma_eps^2 + sigma_eta^2) * Tr(S^-1) / B``."""
    block = augmentation_block(sigma_eps_sq, sigma_eta_sq, B)
    return (sigma_eps_sq + sigma_eta_sq) * block.trace_inverse() / block.B


def kl_residual_mismatch(sigma_eps_sq, sigma_eta_sq, B):
    """KL left over at the optimal temperature; zero only for ``B = 1``."""
    block = augmentation_block(sigma_eps_sq, sigma_eta_sq, B)
    B = block.B
    value = 0.5 * (block.logdet() - B * np.log(B / block.trace_inverse()))
    return float(max(value, 0.0))


def golden_section_minimize(fun, lo, hi, tol=1e-10, max_iter=500):
    """Golden-section search for the minimiser of a unimodal ``fun`` on
    ``[lo, hi]``; the upper end is doubled until it brackets the minimum."""
    while fun(hi) < fun(0.5 * hi) and hi < 1e12:
        hi *= 2.0
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(c) + abs(d)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def numeric_kl_temperature(sigma_eps_sq, sigma_eta_sq, B, tol=1e-10):
    """Reference minimiser of :func:`tempered_likelihood_kl` over ``T``."""
    return golden_section_minimize(
        lambda T: tempered_likelihood_kl(sigma_eps_sq, sigma_eta_sq, B, T), 1e-6, 10.0, tol=tol
    )


def logistic_latent_sim(predictor, augmenter, x, B, draws, seed):
    """Simulate the latent-variable logistic model under augmentation.

    For each draw the latent error ``eps ~ Logistic(0, 1)`` fixes the label
    ``y = 1{f(x) + eps >= 0}``.  Each augmentation ``b`` gets the implied
    error ``eps_b = f(x) + eps - f(R_b(x))`` that keeps its latent value equal
    to the source's.  Returns the fraction of augmentation pairs whose labels
    agree when evaluated with the common ``eps`` (``1.0`` for ``B = 1``) and
    the correlation of implied errors between the first two augmentations.
    """
    draws = check_count(draws, "draws", minimum=100)
    B = check_count(B, "B")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    base = float(predictor(x))
    eps = rng.logistic(0.0, 1.0, size=draws)
    f_aug = np.empty((draws, B))
    for t in range(draws):
        for b in range(B):
            s = int(rng.integers(0, 2**63 - 1))
            f_aug[t, b] = float(predictor(_augment.apply(augmenter, x, s)))
    if B == 1:
        return 1.0, 1.0
    labels = (f_aug + eps[:, None]) >= 0
    iu = np.triu_indices(B, k=1)
    agree = labels[:, iu[0]] == labels[:, iu[1]]
    implied = base + eps[:, None] - f_aug
    a, b = implied[:, 0], implied[:, 1]
    if np.allclose(a, b, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        corr = 1.0
    else:
        corr = float(np.corrcoef(a, b)[0, 1])
    return float(agree.mean()), corr


class AugmentedBayesianRegression(RegressorMixin, BaseEstimator):
    """Bayesian linear regression fitted on augmented rows.

    ``fit(X, y, groups=...)`` takes augmented covariates with the source
    index of every row.  ``likelihood="correlated"`` uses the block
    covariance ``augmentation_var * I + noise_var * 11^T`` per group;
    ``likelihood="iid"`` uses ``(noise_var + augmentation_var) * T * I``.
    """

    def __init__(self, noise_var=1.0, augmentation_var=0.0, likelihood="correlated",
                 temperature=1.0, prior_var=1.0):
        self.noise_var = noise_var
        self.augmentation_var = augmentation_var
        self.likelihood = likelihood
        self.temperature = temperature
        self.prior_var = prior_var

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, y_numeric=True)
        validate_data(self, X, reset=True, skip_check_array=True)
        if groups is None:
            groups = np.arange(X.shape[0])
        data = AugmentedRegressionSet(X, y, np.asarray(groups))
        d = X.shape[1]
        prior_mean, prior_cov = np.zeros(d), self.prior_var * np.eye(d)
        if self.likelihood == "correlated":
            cov = BlockCovariance(1, self.augmentation_var, self.noise_var)
            self.coef_, self.coef_cov_ = gls_posterior(data, cov, prior_mean, prior_cov)
        elif self.likelihood == "iid":
            self.coef_, self.coef_cov_ = iid_tempered_linreg_posterior(
                data, self.noise_var + self.augmentation_var, self.temperature, prior_mean, prior_cov
            )
        else:
            raise InvalidArgumentError(f"likelihood must be 'correlated' or 'iid', got {self.likelihood!r}")
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return X @ self.coef_
