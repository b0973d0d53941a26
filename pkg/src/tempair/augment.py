"""Augmentation operators and fixed-seed augmentation banks.

A bank holds ``B`` seeds derived from a master seed.  Epoch ``e`` replays
bank entry ``e mod B``, and datapoint ``i`` inside that entry gets its own
seed ``derive_seed(bank_seed, i)``, so each datapoint sees exactly ``B``
distinct augmentations however long training runs.

Seed derivation is SplitMix64: ``derive_seed(parent, k)`` advances the
state ``parent + (k + 1) * 0x9E3779B97F4A7C15`` (mod 2**64) and returns the
SplitMix64 finaliser of it.  It is plain integer arithmetic, so banks are
reproducible in any language.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_count, check_symmetric_psd
from .exceptions import InvalidArgumentError
from .net.groups import GroupElement, group_elements, transform_spatial

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(parent, index):
    return mix64((int(parent) + (int(index) + 1) * _GAMMA) & _MASK64)


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class AdditiveGaussian:
    """``x + eta`` with ``eta ~ N(0, cov)``; ``cov`` is a scalar variance or a
    covariance over the flattened input."""

    cov: float | np.ndarray
    _sqrt: np.ndarray | float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            if not (np.isfinite(cov) and cov >= 0):
                raise InvalidArgumentError(f"additive variance must be >= 0, got {self.cov!r}")
            sqrt = float(np.sqrt(cov))
        else:
            cov = check_symmetric_psd(cov, "Sigma_eta")
            w, v = np.linalg.eigh(cov)
            sqrt = v * np.sqrt(np.clip(w, 0.0, None))
        object.__setattr__(self, "_sqrt", sqrt)


@dataclass(frozen=True)
class Rot90Flip:
    """Uniform draw from the symmetries of the square (``group="p4m"``) or
    from the four rotations only (``group="p4"``)."""

    group: str = "p4m"

    def __post_init__(self):
        group_elements(self.group)


@dataclass(frozen=True)
class SmallRotation:
    max_degrees: float = 10.0

    def __post_init__(self):
        if not (0 < self.max_degrees <= 45):
            raise InvalidArgumentError(f"max_degrees must be in (0, 45], got {self.max_degrees}")


@dataclass(frozen=True)
class Crop:
    pad_pixels: int = 1

    def __post_init__(self):
        check_count(self.pad_pixels, "pad_pixels")


@dataclass(frozen=True)
class Composition:
    specs: tuple

    def __post_init__(self):
        specs = tuple(self.specs)
        if not specs:
            raise InvalidArgumentError("Composition needs at least one spec")
        object.__setattr__(self, "specs", specs)


_GEOMETRIC = (Rot90Flip, SmallRotation, Crop)


def _as_image(x):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise InvalidArgumentError(f"geometric augmentations need an image (H, W) or (C, H, W), got shape {x.shape}")


def sample_params(spec, seed):
    """Draw the random transform parameters of ``spec`` for ``seed``."""
    rng = np.random.default_rng(int(seed))
    if isinstance(spec, Identity):
        return None
    if isinstance(spec, AdditiveGaussian):
        return rng  # noise is drawn lazily once the input size is known
    if isinstance(spec, Rot90Flip):
        elems = group_elements(spec.group)
        return elems[int(rng.integers(len(elems)))]
    if isinstance(spec, SmallRotation):
        return float(rng.uniform(-spec.max_degrees, spec.max_degrees))
    if isinstance(spec, Crop):
        return tuple(int(v) for v in rng.integers(0, 2 * spec.pad_pixels + 1, size=2))
    if isinstance(spec, Composition):
        return [sample_params(s, derive_seed(seed, j)) for j, s in enumerate(spec.specs)]
    raise InvalidArgumentError(f"unknown augmentation spec {spec!r}")


def apply_params(spec, x, params):
    x = np.asarray(x, dtype=float)
    if isinstance(spec, Identity):
        return x.copy()
    if isinstance(spec, AdditiveGaussian):
        z = params.standard_normal(x.size)
        if np.ndim(spec._sqrt) == 0:
            noise = spec._sqrt * z
        else:
            if spec._sqrt.shape[0] != x.size:
                raise InvalidArgumentError(
                    f"Sigma_eta is {spec._sqrt.shape[0]}-dimensional but input has {x.size} entries"
                )
            noise = spec._sqrt @ z
        return x + noise.reshape(x.shape)
    if isinstance(spec, _GEOMETRIC):
        img, squeeze = _as_image(x)
        if isinstance(spec, Rot90Flip):
            out = transform_spatial(img, params).copy()
        elif isinstance(spec, SmallRotation):
            out = scipy.ndimage.rotate(img, params, axes=(2, 1), reshape=False, order=1,
                                       mode="constant", cval=0.0)
        else:
            p = spec.pad_pixels
            h, w = img.shape[1:]
            padded = np.pad(img, ((0, 0), (p, p), (p, p)))
            oy, ox = params
            out = padded[:, oy:oy + h, ox:ox + w].copy()
        return out[0] if squeeze else out
    if isinstance(spec, Composition):
        for s, p in zip(spec.specs, params):
            x = apply_params(s, x, p)
        return x
    raise InvalidArgumentError(f"unknown augmentation spec {spec!r}")


def apply(spec, x, seed):
    """Return ``R_eta(x)`` with ``eta`` determined by ``seed``."""
    x = np.asarray(x, dtype=float)
    if isinstance(spec, _GEOMETRIC) or (
        isinstance(spec, Composition) and any(isinstance(s, _GEOMETRIC) for s in spec.specs)
    ):
        _as_image(x)
    if isinstance(spec, Rot90Flip) and x.shape[-1] != x.shape[-2]:
        raise InvalidArgumentError("Rot90Flip needs square images")
    return apply_params(spec, x, sample_params(spec, seed))


@dataclass(frozen=True)
class AugmentationBank:
    spec: object
    B: int
    master_seed: int
    seeds: tuple

    def seed_for_epoch(self, epoch):
        return self.seeds[epoch % self.B]

    def index_for_epoch(self, epoch):
        return epoch % self.B

    def item_seed(self, b, item):
        return derive_seed(self.seeds[b], item)


def make_bank(spec, B, master_seed):
    B = check_count(B, "B")
    seeds = tuple(derive_seed(int(master_seed) & _MASK64, b) for b in range(B))
    return AugmentationBank(spec=spec, B=B, master_seed=int(master_seed), seeds=seeds)


def augment_array(X, bank, b):
    """Apply bank entry ``b`` to every row of ``X`` (row ``i`` uses item seed ``i``)."""
    return np.stack([apply(bank.spec, x, bank.item_seed(b, i)) for i, x in enumerate(X)])


def augment_dataset(data, bank, epoch):
    """Augment ``[(x, y), ...]`` for one epoch.

    Returns ``[(x_tilde, y, source_index), ...]``; labels are copied unchanged.
    """
    b = bank.index_for_epoch(epoch)
    return [(apply(bank.spec, x, bank.item_seed(b, i)), y, i) for i, (x, y) in enumerate(data)]


def expand_dataset(X, y, bank):
    """All ``B`` augmentations of every row, grouped by source.

    Returns ``(X_tilde, y_tilde, groups, aug_index)`` with ``n * B`` rows
    ordered source-major.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rows, ys, groups, augs = [], [], [], []
    for i, (x, yi) in enumerate(zip(X, y)):
        for b in range(bank.B):
            rows.append(apply(bank.spec, x, bank.item_seed(b, i)))
            ys.append(yi)
            groups.append(i)
            augs.append(b)
    return np.stack(rows), np.array(ys), np.array(groups), np.array(augs)


def spec_from_config(cfg):
    """Build a spec from its JSON form, e.g. ``{"type": "rot90flip", "group": "p4m"}``."""
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise InvalidArgumentError(f"augmentation config needs a 'type' key, got {cfg!r}")
    kind = cfg["type"]
    args = {k: v for k, v in cfg.items() if k != "type"}
    try:
        if kind == "identity":
            return Identity(**args)
        if kind == "additive_gaussian":
            return AdditiveGaussian(np.asarray(args.pop("cov"), dtype=float), **args)
        if kind == "rot90flip":
            return Rot90Flip(**args)
        if kind == "small_rotation":
            return SmallRotation(**args)
        if kind == "crop":
            return Crop(**args)
        if kind == "composition":
            return Composition(tuple(spec_from_config(c) for c in args.pop("specs")), **args)
    except (TypeError, KeyError) as exc:
        raise InvalidArgumentError(f"bad arguments for augmentation {kind!r}: {exc}") from exc
    raise InvalidArgumentError(f"unknown augmentation type {kind!r}")


def spec_to_config(spec):
    if isinstance(spec, Identity):
        return {"type": "identity"}
    if isinstance(spec, AdditiveGaussian):
        return {"type": "additive_gaussian", "cov": np.asarray(spec.cov).tolist()}
    if isinstance(spec, Rot90Flip):
        return {"type": "rot90flip", "group": spec.group}
    if isinstance(spec, SmallRotation):
        return {"type": "small_rotation", "max_degrees": spec.max_degrees}
    if isinstance(spec, Crop):
        return {"type": "crop", "pad_pixels": spec.pad_pixels}
    if isinstance(spec, Composition):
        return {"type": "composition", "specs": [spec_to_config(s) for s in spec.specs]}
    raise InvalidArgumentError(f"unknown augmentation spec {spec!r}")


class AugmentationTransformer(TransformerMixin, BaseEstimator):
    """Expand a dataset with a fixed augmentation bank.

    With ``epoch=None`` every row is replaced by its ``n_augmentations``
    augmented copies (source-major); otherwise only the bank entry used at
    that epoch is applied.
    """

    def __init__(self, spec=None, n_augmentations=1, master_seed=0, epoch=None):
        self.spec = spec
        self.n_augmentations = n_augmentations
        self.master_seed = master_seed
        self.epoch = epoch

    def fit(self, X, y=None):
        spec = Identity() if self.spec is None else self.spec
        self.bank_ = make_bank(spec, self.n_augmentations, self.master_seed)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if self.epoch is not None:
            return augment_array(X, self.bank_, self.bank_.index_for_epoch(self.epoch))
        return expand_dataset(X, np.zeros(len(X)), self.bank_)[0]


__all__ = [
    "AdditiveGaussian", "AugmentationBank", "AugmentationTransformer", "Composition", "Crop",
    "GroupElement", "Identity", "Rot90Flip", "SmallRotation", "apply", "apply_params",
    "augment_array", "augment_dataset", "derive_seed", "expand_dataset", "make_bank",
    "sample_params", "spec_from_config", "spec_to_config",
]
