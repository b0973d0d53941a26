"""Residual clustering, error correlation and invariance summaries."""

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyChainError, InvalidArgumentError
from .net.equivariance import total_variation_invariance


@dataclass(frozen=True)
class GroupedResiduals:
    """Residuals grouped by source point, augmentation order preserved."""

    groups: tuple  # of (source index, 1-D residual array)

    def __post_init__(self):
        for src, r in self.groups:
            r = np.asarray(r)
            if r.size == 0:
                raise InvalidArgumentError(f"group {src} is empty")
            if not np.all(np.isfinite(r)):
                raise InvalidArgumentError(f"group {src} has non-finite residuals")

    @property
    def n_groups(self):
        return len(self.groups)

    def matrix(self):
        """``(n_groups, B)`` array; requires a balanced design."""
        sizes = {len(r) for _, r in self.groups}
        if len(sizes) != 1:
            raise InvalidArgumentError(f"unbalanced groups (sizes {sorted(sizes)})")
        return np.array([np.asarray(r, dtype=float) for _, r in self.groups])

    def rows(self):
        """``(global_index, group, aug_index, residual)`` tuples in series order."""
        out, k = [], 0
        for src, r in self.groups:
            for j, v in enumerate(np.asarray(r, dtype=float)):
                out.append((k, int(src), j, float(v)))
                k += 1
        return out


def residual_series(predictor, X, y, group_index):
    """Residuals of ``predictor`` on augmented data, grouped by source.

    ``predictor(X)`` returns either scalar predictions (residual
    ``y - f(x)``) or class-probability rows (residual ``1 - p(y | x)``).
    Groups appear in order of first occurrence of their source index.
    """
    if group_index is None:
        raise InvalidArgumentError("residual_series needs a group index")
    group_index = np.asarray(group_index)
    y = np.asarray(y)
    if len(group_index) != len(y):
        raise InvalidArgumentError("group_index and y lengths differ")
    pred = np.asarray(predictor(X), dtype=float)
    if pred.ndim == 2 and pred.shape[1] > 1:
        resid = 1.0 - pred[np.arange(len(y)), y.astype(int)]
    else:
        resid = y.astype(float) - pred.reshape(len(y))
    _, first = np.unique(group_index, return_index=True)
    order = group_index[np.sort(first)]
    return GroupedResiduals(tuple((int(g), resid[group_index == g]) for g in order))


def intraclass_correlation(res):
    """One-way ANOVA intraclass correlation of a balanced residual design:
    ``(MSB - MSW) / (MSB + (B - 1) MSW)``."""
    R = res.matrix()
    k, B = R.shape
    if k < 2 or B < 2:
        raise InvalidArgumentError("ICC needs >= 2 groups of size >= 2")
    means = R.mean(axis=1)
    msb = B * np.sum((means - means.mean()) ** 2) / (k - 1)
    msw = np.sum((R - means[:, None]) ** 2) / (k * (B - 1))
    denom = msb + (B - 1) * msw
    if denom <= 0:
        raise InvalidArgumentError("residuals have zero variance")
    return float(np.clip((msb - msw) / denom, -1.0, 1.0))


def empirical_error_correlation(res):
    """Pearson correlation between augmentation slots, computed across
    groups and averaged over all slot pairs."""
    R = res.matrix()
    k, B = R.shape
    if k < 2 or B < 2:
        raise InvalidArgumentError("error correlation needs >= 2 groups of size >= 2")
    Z = R - R.mean(axis=0)
    sd = np.sqrt(np.sum(Z**2, axis=0))
    if np.any(sd == 0):
        raise InvalidArgumentError("an augmentation slot has zero variance")
    C = (Z / sd).T @ (Z / sd)
    iu = np.triu_indices(B, k=1)
    return float(C[iu].mean())


def effective_sample_size(B, T):
    """``B / T``: how many independent points ``B`` augmentations are worth
    at temperature ``T``."""
    if B < 1:
        raise InvalidArgumentError(f"B must be >= 1, got {B}")
    if not T > 0:
        raise InvalidArgumentError(f"T must be > 0, got {T}")
    return B / T


def chain_total_variation(chain, spec, X_probe, bank):
    """Mean augmentation total variation over the probe set, one value per
    chain sample.  Returns ``(sample_epochs, mean_tv)`` arrays."""
    if len(chain.samples) == 0:
        raise EmptyChainError("chain has no samples")
    X_probe = np.asarray(X_probe, dtype=float)
    tv = [
        np.mean([total_variation_invariance(spec, theta, x, bank, item=i) for i, x in enumerate(X_probe)])
        for theta in chain.samples
    ]
    return np.asarray(chain.sample_epochs), np.asarray(tv)


def correlation_report(res):
    return {
        "n_groups": res.n_groups,
        "B": int(res.matrix().shape[1]),
        "icc": intraclass_correlation(res),
        "empirical_correlation": empirical_error_correlation(res),
    }
