"""Synthetic bar/cross images with p4m-invariant labels, and a pixel-CSV loader."""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgumentError
from .net.network import NetworkSpec, forward, gconv_classifier

LABEL_MODES = ("pattern", "teacher")


@dataclass(frozen=True)
class ImageDataset:
    X: np.ndarray   # (n, 1, H, W)
    y: np.ndarray   # (n,) integer labels

    def __len__(self):
        return len(self.y)

    def split(self, n_first):
        return ImageDataset(self.X[:n_first], self.y[:n_first]), ImageDataset(self.X[n_first:], self.y[n_first:])


def _bar(size, length, diagonal):
    img = np.zeros((size, size))
    c = size // 2
    half = length // 2
    for t in range(-half, half + 1):
        if diagonal:
            img[c + t, c + t] = 1.0
        else:
            img[c, c + t] = 1.0
    return img


def pattern_images(n, size=16, noise=0.3, seed=0, contrast=(0.7, 1.3)):
    """Bars (class 0) and crosses (class 1) at random translations.

    Each pattern is drawn in a random orientation from the p4m orbit and
    shifted circularly, so the class of an image is unchanged by any
    rotation by multiples of 90 degrees or mirror flip.  Pattern intensity
    is uniform on ``contrast`` (negative values give dark patterns).
    Returns ``(X, shape_labels)``.
    """
    if size < 8:
        raise InvalidArgumentError("size must be >= 8")
    lo, hi = contrast
    if not lo <= hi:
        raise InvalidArgumentError(f"contrast must be an interval (lo <= hi), got {contrast!r}")
    rng = np.random.default_rng(seed)
    X = np.empty((n, 1, size, size))
    labels = rng.integers(0, 2, size=n)
    for i in range(n):
        length = int(rng.integers(size // 4, size // 2)) | 1
        diagonal = bool(rng.integers(0, 2))
        img = _bar(size, length, diagonal)
        if labels[i] == 1:
            img = np.maximum(img, np.rot90(img))
            if diagonal:
                img = np.maximum(img, np.fliplr(img))
        if not diagonal and rng.integers(0, 2):
            img = np.rot90(img)
        elif diagonal and rng.integers(0, 2):
            img = np.fliplr(img)
        img = np.roll(img, tuple(rng.integers(0, size, size=2)), axis=(0, 1))
        X[i, 0] = img * rng.uniform(lo, hi) + noise * rng.standard_normal((size, size))
    return X, labels


def teacher_spec(size=16, channels=4, group="p4m", bias=False):
    """Small invariant classifier used to label images: one lifting G-conv,
    ReLU, group-and-space pooling and a dense softmax head.

    Without biases the network is positively homogeneous in its input, so
    its labels track pattern contrast instead of a shared offset.
    """
    return gconv_classifier((1, size, size), 2, [channels], group=group, bias=bias)


def teacher_labels(X, spec, params, seed):
    """Labels sampled from the teacher's predictive distribution."""
    probs = forward(spec, params, X)
    rng = np.random.default_rng(seed)
    return (rng.random(len(X)) < probs[:, 1]).astype(int)


def make_dataset(n, size=16, labels="teacher", noise=0.3, label_noise=0.1, teacher=None,
                 teacher_params=None, seed=0, contrast=(0.7, 1.3)):
    """Synthetic image classification data.

    ``labels="pattern"`` uses the bar/cross class flipped with probability
    ``label_noise``.  ``labels="teacher"`` samples labels from ``teacher``
    (a :class:`NetworkSpec`) at ``teacher_params``.
    """
    if labels not in LABEL_MODES:
        raise InvalidArgumentError(f"labels must be one of {LABEL_MODES}, got {labels!r}")
    X, shape = pattern_images(n, size, noise, seed, contrast)
    if labels == "pattern":
        if not 0 <= label_noise < 0.5:
            raise InvalidArgumentError("label_noise must lie in [0, 0.5)")
        flip = np.random.default_rng([seed, 1]).random(n) < label_noise
        return ImageDataset(X, np.where(flip, 1 - shape, shape))
    if not isinstance(teacher, NetworkSpec) or teacher_params is None:
        raise InvalidArgumentError("teacher labels need a teacher spec and parameters")
    return ImageDataset(X, teacher_labels(X, teacher, teacher_params, [seed, 2]))


def load_pixel_csv(path, shape):
    """Read ``label,p0,p1,...`` rows (no header) into an :class:`ImageDataset`.

    ``shape`` is the per-image ``(C, H, W)``; pixel values are row-major.
    """
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    shape = tuple(int(s) for s in shape)
    if data.shape[1] != 1 + int(np.prod(shape)):
        raise InvalidArgumentError(f"rows have {data.shape[1] - 1} pixels, expected {int(np.prod(shape))}")
    labels = data[:, 0]
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise InvalidArgumentError("labels must be nonnegative integers")
    return ImageDataset(data[:, 1:].reshape((len(data),) + shape), labels.astype(int))
