import math

import numpy as np
import pytest

from fcpdetect.errors import DomainError, ParameterError
from fcpdetect.transforms import (
    estimate_background,
    gaussian_smooth,
    sqrt_transform,
    z_score,
)

from _oracles import convolve_reflect_direct, sampled_gaussian_kernel


def test_smooth_preserves_constant_images():
    img = np.full((12, 9), 5.0)
    out = gaussian_smooth(img, 1.0)
    assert np.max(np.abs(out - 5.0)) < 1e-12


def test_smooth_of_zeros_is_zero():
    out = gaussian_smooth(np.zeros((8, 8)), 2.5)
    assert np.max(np.abs(out)) == 0.0


def test_smooth_impulse_center_matches_sampled_kernel():
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    out = gaussian_smooth(img, 1.0)
    kernel = sampled_gaussian_kernel(1.0, radius=4)
    assert abs(out[4, 4] - kernel[4, 4]) < 1e-12


@pytest.mark.parametrize("sigma", [0.7, 1.0, 2.0])
def test_smooth_matches_direct_convolution(sigma):
    rng = np.random.default_rng(11)
    img = rng.normal(size=(12, 10))
    kernel = sampled_gaussian_kernel(sigma, radius=math.ceil(4 * sigma))
    expected = convolve_reflect_direct(img, kernel)
    got = gaussian_smooth(img, sigma)
    assert np.max(np.abs(got - expected)) < 1e-8


def test_smooth_rejects_bad_sigma():
    with pytest.raises(ParameterError):
        gaussian_smooth(np.ones((4, 4)), 0.0)
    with pytest.raises(ParameterError):
        gaussian_smooth(np.ones((4, 4)), -1.0)


def test_smooth_is_linear():
    rng = np.random.default_rng(5)
    for trial in range(5):
        x = rng.normal(size=(9, 9))
        y = rng.normal(size=(9, 9))
        a, b = rng.normal(size=2)
        lhs = gaussian_smooth(a * x + b * y, 1.3)
        rhs = a * gaussian_smooth(x, 1.3) + b * gaussian_smooth(y, 1.3)
        scale = np.max(np.abs(rhs)) + 1e-30
        assert np.max(np.abs(lhs - rhs)) / scale < 1e-10


def test_smooth_preserves_global_mean():
    rng = np.random.default_rng(17)
    for trial in range(5):
        img = rng.normal(size=(15, 11))
        out = gaussian_smooth(img, 2.0)
        assert abs(out.mean() - img.mean()) / (abs(img.mean()) + 1e-30) < 1e-10


def test_sqrt_examples():
    np.testing.assert_array_equal(sqrt_transform([[4.0]]), [[2.0]])
    np.testing.assert_array_equal(sqrt_transform([[0.0]]), [[0.0]])
    np.testing.assert_array_equal(
        sqrt_transform([[1.0, 4.0], [9.0, 16.0]]), [[1.0, 2.0], [3.0, 4.0]]
    )


def test_sqrt_names_the_offending_pixel():
    img = np.ones((3, 3))
    img[2, 1] = -0.5
    with pytest.raises(DomainError, match=r"\(2, 1\)"):
        sqrt_transform(img)


def test_sqrt_undoes_elementwise_square():
    rng = np.random.default_rng(3)
    img = np.abs(rng.normal(size=(6, 7)))
    np.testing.assert_allclose(sqrt_transform(img**2), img, rtol=0, atol=1e-12)


def test_z_score_pinned_values():
    img = np.array([[2.0, 5.0]])
    out = z_score(img, 2.0, 3.0)
    assert out[0, 0] == 0.0
    assert out[0, 1] == 1.0


def test_z_score_rejects_bad_sigma0():
    with pytest.raises(ParameterError):
        z_score(np.ones((2, 2)), 0.0, 0.0)


def test_background_estimate_constant_grid_hits_floor():
    mu0, sigma0 = estimate_background(np.full((5, 5), 3.0))
    assert mu0 == 3.0
    assert sigma0 == 1e-12


def test_background_estimate_median_of_permuted_range():
    rng = np.random.default_rng(23)
    values = rng.permutation(np.arange(101.0)).reshape(101, 1)
    mu0, _ = estimate_background(values)
    assert mu0 == 50.0


def test_background_estimate_on_standard_gaussian():
    rng = np.random.default_rng(29)
    img = rng.normal(size=(200, 200))
    mu0, sigma0 = estimate_background(img)
    assert abs(mu0) < 0.05
    assert abs(sigma0 - 1.0) < 0.05


def test_z_score_with_estimated_background_centers_noise():
    rng = np.random.default_rng(31)
    for trial in range(5):
        img = rng.normal(loc=4.0, scale=2.0, size=(100, 100))
        mu0, sigma0 = estimate_background(img)
        out = z_score(img, mu0, sigma0)
        assert abs(out.mean()) < 3.0 / math.sqrt(out.size)


def test_smooth_then_root_is_nearly_normal():
    rng = np.random.default_rng(37)
    img = rng.poisson(0.5, size=(100, 100)).astype(float)
    transformed = sqrt_transform(gaussian_smooth(img, 1.0))
    flat = np.sort(transformed.ravel())
    from scipy import stats

    grid = (np.arange(flat.size) + 0.5) / flat.size
    qq = np.corrcoef(flat, stats.norm.ppf(grid))[0, 1]
    assert qq >= 0.99
