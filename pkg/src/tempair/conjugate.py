"""Exact inference for a Gaussian mean observed through additive augmentations.

Each source sample ``x_i ~ N(mu, sigma^2)`` is augmented ``B`` times as
``x_i + eta_i^b`` with ``eta ~ N(0, sigma_eta^2)``.  Augmentations of one
source share the source noise, so the stacked vector is Gaussian with a
block-diagonal covariance whose blocks are ``sigma_eta^2 I + sigma^2 11^T``.
Treating the augmentations as independent and tempering the likelihood with
``T = (sigma_eta^2 + B sigma^2) / (sigma_eta^2 + sigma^2)`` recovers the
correlated posterior exactly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from ._validation import check_count, check_finite_array, check_positive
from .exceptions import InvalidArgumentError, SingularCovarianceError, SizeLimitError

DENSE_ORACLE_LIMIT = 4096


@dataclass(frozen=True)
class GaussianMeanModel:
    mu0: float
    sigma0_sq: float
    sigma_sq: float
    sigma_eta_sq: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.mu0):
            raise InvalidArgumentError("mu0 must be finite")
        check_positive(self.sigma0_sq, "sigma0_sq")
        check_positive(self.sigma_sq, "sigma_sq")
        check_positive(self.sigma_eta_sq, "sigma_eta_sq", strict=False)


@dataclass(frozen=True)
class AugmentedScalarSet:
    """``values[i, b]`` is augmentation ``b`` of source ``i``."""

    values: np.ndarray
    provenance: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        values = check_finite_array(self.values, "values", ndim=2)
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidArgumentError(f"values must be at least 1x1, got {values.shape}")
        object.__setattr__(self, "values", values)
        if self.provenance is not None:
            prov = check_finite_array(self.provenance, "provenance", ndim=1)
            if prov.shape[0] != values.shape[0]:
                raise InvalidArgumentError("provenance length must equal the number of sources")
            object.__setattr__(self, "provenance", prov)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def B(self):
        return self.values.shape[1]

    @property
    def total(self):
        return float(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, AugmentedScalarSet):
            return NotImplemented
        same_prov = (self.provenance is None and other.provenance is None) or (
            self.provenance is not None
            and other.provenance is not None
            and np.array_equal(self.provenance, other.provenance)
        )
        return np.array_equal(self.values, other.values) and same_prov


@dataclass(frozen=True)
class GaussianPosterior:
    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidArgumentError(f"posterior variance must be > 0, got {self.variance!r}")

    @property
    def precision(self):
        return 1.0 / self.variance

    def logpdf(self, mu):
        mu = np.asarray(mu, dtype=float)
        return -0.5 * (np.log(2 * np.pi * self.variance) + (mu - self.mean) ** 2 / self.variance)


def augment_gaussian(model, sources, B, seed):
    """Draw ``B`` additive Gaussian augmentations of every source value."""
    B = check_count(B, "B")
    sources = check_finite_array(sources, "sources", ndim=1)
    if sources.size == 0:
        raise InvalidArgumentError("sources must be nonempty")
    rng = np.random.default_rng(seed)
    eta = rng.normal(0.0, np.sqrt(model.sigma_eta_sq), size=(sources.size, B))
    return AugmentedScalarSet(values=sources[:, None] + eta, provenance=sources.copy())


def _check_block(model, B):
    if B > 1 and model.sigma_eta_sq == 0:
        raise SingularCovarianceError(
            f"block covariance is singular: sigma_eta_sq=0 with B={B} > 1 "
            f"(sigma_sq={model.sigma_sq})"
        )


def correlated_posterior(model, data):
    """Posterior over the mean under the true block-correlated likelihood.

    Uses ``1^T S^-1 = 1^T / (sigma_eta^2 + B sigma^2)`` per block, which
    follows from Sherman-Morrison.
    """
    _check_block(model, data.B)
    block = model.sigma_eta_sq + data.B * model.sigma_sq
    precision = data.n * data.B / block + 1.0 / model.sigma0_sq
    mean = (data.total / block + model.mu0 / model.sigma0_sq) / precision
    return GaussianPosterior(mean=mean, variance=1.0 / precision)


def iid_tempered_posterior(model, data, T):
    """Posterior when the augmentations are (wrongly) treated as i.i.d. and
    the likelihood is raised to ``1/T``."""
    T = check_positive(T, "T")
    scale = T * (model.sigma_sq + model.sigma_eta_sq)
    precision = data.n * data.B / scale + 1.0 / model.sigma0_sq
    mean = (model.mu0 / model.sigma0_sq + data.total / scale) / precision
    return GaussianPosterior(mean=mean, variance=1.0 / precision)


def optimal_temperature_from_variances(sigma_sq, sigma_eta_sq, B):
    B = check_count(B, "B")
    sigma_sq = check_positive(sigma_sq, "sigma_sq", strict=False)
    sigma_eta_sq = check_positive(sigma_eta_sq, "sigma_eta_sq", strict=False)
    denom = sigma_eta_sq + sigma_sq
    if denom == 0:
        raise InvalidArgumentError("sigma_sq and sigma_eta_sq are both zero; temperature undefined")
    return (sigma_eta_sq + B * sigma_sq) / denom


def optimal_temperature(model, B):
    """Temperature at which the tempered i.i.d. posterior equals the
    correlated one.  Always ``>= 1``; equals ``B`` when ``sigma_eta_sq = 0``."""
    return optimal_temperature_from_variances(model.sigma_sq, model.sigma_eta_sq, B)


def block_covariance_dense(model, n, B):
    block = model.sigma_eta_sq * np.eye(B) + model.sigma_sq * np.ones((B, B))
    return scipy.linalg.block_diag(*([block] * n))


def dense_posterior_oracle(model, data):
    """Brute-force reference for :func:`correlated_posterior`.

    Materialises the full ``Bn x Bn`` covariance and solves with a Cholesky
    factorisation, so it shares no algebra with the closed form.
    """
    size = data.n * data.B
    if size > DENSE_ORACLE_LIMIT:
        raise SizeLimitError(f"dense oracle limited to Bn <= {DENSE_ORACLE_LIMIT}, got {size}")
    cov = block_covariance_dense(model, data.n, data.B)
    try:
        factor = scipy.linalg.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"augmented covariance is not positive definite (sigma_sq={model.sigma_sq}, "
            f"sigma_eta_sq={model.sigma_eta_sq}, B={data.B})"
        ) from exc
    ones = np.ones(size)
    x = data.values.reshape(-1)
    cinv_ones = scipy.linalg.cho_solve(factor, ones)
    precision = ones @ cinv_ones + 1.0 / model.sigma0_sq
    mean = (cinv_ones @ x + model.mu0 / model.sigma0_sq) / precision
    return GaussianPosterior(mean=float(mean), variance=float(1.0 / precision))


class GaussianMeanPosterior(BaseEstimator):
    """Estimator wrapper around the closed forms.

    ``fit`` takes an ``(n, B)`` array of augmented values.  With
    ``likelihood="correlated"`` the block covariance is used; with
    ``likelihood="iid"`` the augmentations are treated as independent and
    the likelihood is tempered by ``temperature`` (a number, or
    ``"optimal"`` for the exact-match temperature).
    """

    def __init__(self, mu0=0.0, sigma0_sq=1.0, sigma_sq=1.0, sigma_eta_sq=0.0,
                 likelihood="correlated", temperature=1.0):
        self.mu0 = mu0
        self.sigma0_sq = sigma0_sq
        self.sigma_sq = sigma_sq
        self.sigma_eta_sq = sigma_eta_sq
        self.likelihood = likelihood
        self.temperature = temperature

    def fit(self, X, y=None):
        model = GaussianMeanModel(self.mu0, self.sigma0_sq, self.sigma_sq, self.sigma_eta_sq)
        data = AugmentedScalarSet(np.atleast_2d(np.asarray(X, dtype=float)))
        if self.likelihood == "correlated":
            post = correlated_posterior(model, data)
            self.temperature_ = 1.0
        elif self.likelihood == "iid":
            T = optimal_temperature(model, data.B) if self.temperature == "optimal" else self.temperature
            post = iid_tempered_posterior(model, data, T)
            self.temperature_ = float(T)
        else:
            raise InvalidArgumentError(f"likelihood must be 'correlated' or 'iid', got {self.likelihood!r}")
        self.posterior_ = post
        self.mean_ = post.mean
        self.variance_ = post.variance
        return self

    def score(self, X, y=None):
        """Posterior log-density of the true mean candidates in ``X``."""
        return float(np.mean(self.posterior_.logpdf(np.ravel(X))))
