import numpy as np
import pytest

from tempair.datasets import load_pixel_csv, make_dataset, pattern_images, teacher_spec
from tempair.exceptions import InvalidArgumentError
from tempair.net import forward, group_elements, init_params, transform_spatial


def test_pattern_images_shapes_and_determinism():
    X, labels = pattern_images(20, size=8, noise=0.1, seed=3)
    assert X.shape == (20, 1, 8, 8)
    assert set(labels) <= {0, 1}
    X2, labels2 = pattern_images(20, size=8, noise=0.1, seed=3)
    np.testing.assert_array_equal(X, X2)
    np.testing.assert_array_equal(labels, labels2)
    with pytest.raises(InvalidArgumentError):
        pattern_images(3, size=4)
    with pytest.raises(InvalidArgumentError):
        pattern_images(3, contrast=(1.0, 0.0))


def test_crosses_are_wider_than_bars():
    X, labels = pattern_images(200, size=16, noise=0.0, seed=0, contrast=(1.0, 1.0))
    counts = (X[:, 0] > 0.5).sum(axis=(1, 2))
    assert counts[labels == 1].mean() > counts[labels == 0].mean() * 1.5


def test_noiseless_pattern_orbits_preserve_class_statistics():
    # the label is a function of the pattern's orbit, so a rotated image has a valid pattern shape
    X, _ = pattern_images(10, size=8, noise=0.0, seed=1, contrast=(1.0, 1.0))
    for g in group_elements("p4m"):
        gx = transform_spatial(X, g)
        np.testing.assert_array_equal(np.sort(gx.reshape(10, -1), axis=1), np.sort(X.reshape(10, -1), axis=1))


def test_teacher_labels_are_invariant_under_the_group():
    spec = teacher_spec(size=8, channels=2)
    params = init_params(spec, 0)
    X, _ = pattern_images(5, size=8, seed=2)
    probs = forward(spec, params, X)
    for g in group_elements("p4m"):
        np.testing.assert_allclose(forward(spec, params, transform_spatial(X, g)), probs, atol=1e-12)


def test_make_dataset_modes():
    spec = teacher_spec(size=8, channels=2)
    params = init_params(spec, 1)
    data = make_dataset(30, size=8, teacher=spec, teacher_params=params, seed=4)
    assert len(data) == 30 and set(data.y) <= {0, 1}
    again = make_dataset(30, size=8, teacher=spec, teacher_params=params, seed=4)
    np.testing.assert_array_equal(data.y, again.y)
    train, test = data.split(10)
    assert len(train) == 10 and len(test) == 20
    clean = make_dataset(200, size=8, labels="pattern", label_noise=0.0, seed=5)
    _, shape = pattern_images(200, size=8, noise=0.3, seed=5)
    np.testing.assert_array_equal(clean.y, shape)
    noisy = make_dataset(2000, size=8, labels="pattern", label_noise=0.2, seed=5)
    _, shape = pattern_images(2000, size=8, noise=0.3, seed=5)
    assert abs(np.mean(noisy.y != shape) - 0.2) < 0.03
    with pytest.raises(InvalidArgumentError):
        make_dataset(5, size=8, labels="teacher")
    with pytest.raises(InvalidArgumentError):
        make_dataset(5, size=8, labels="oracle")
    with pytest.raises(InvalidArgumentError):
        make_dataset(5, size=8, labels="pattern", label_noise=0.5)


def test_load_pixel_csv(tmp_path):
    path = tmp_path / "pix.csv"
    path.write_text("1,0.5,0.25,0,1\n0,1,1,1,1\n")
    data = load_pixel_csv(path, (1, 2, 2))
    np.testing.assert_array_equal(data.y, [1, 0])
    np.testing.assert_array_equal(data.X[0, 0], [[0.5, 0.25], [0.0, 1.0]])
    with pytest.raises(InvalidArgumentError):
        load_pixel_csv(path, (1, 3, 3))
    path.write_text("0.5,1,1,1,1\n")
    with pytest.raises(InvalidArgumentError):
        load_pixel_csv(path, (1, 2, 2))
