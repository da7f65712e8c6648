"""Per-pixel and smoothing transforms applied before detection.

The standard preprocessing chain for photon-count data is Gaussian smoothing
followed by a square root, which brings a low-rate Poisson background close
to normal; a pixelwise z-score then turns it into a test statistic.
"""

import math

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError, ParameterError
from .grid import as_grid

MAD_TO_SIGMA = 1.4826
SIGMA_FLOOR = 1e-12


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Convolve with a normalized sampled Gaussian of standard deviation ``sigma``.

    The kernel is truncated at radius ceil(4*sigma) and renormalized to unit
    sum, so constants pass through unchanged. Boundaries use edge-inclusive
    mirror padding, which also preserves the global mean exactly.
    """
    img = as_grid(img)
    if not (sigma > 0):
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(4 * sigma)
    return gaussian_filter(img, sigma, mode="reflect", radius=radius)


def sqrt_transform(img: np.ndarray) -> np.ndarray:
    """Elementwise square root; rejects negative input, naming the pixel."""
    img = as_grid(img)
    if np.any(img < 0):
        r, c = np.argwhere(img < 0)[0]
        raise DomainError(f"negative value {img[r, c]} at pixel ({r}, {c})")
    return np.sqrt(img)


def z_score(img: np.ndarray, mu0: float, sigma0: float) -> np.ndarray:
    """Elementwise (value - mu0) / sigma0."""
    img = as_grid(img)
    if not (sigma0 > 0):
        raise ParameterError(f"sigma0 must be > 0, got {sigma0}")
    return (img - mu0) / sigma0


def estimate_background(img: np.ndarray) -> tuple[float, float]:
    """Robust background location/scale: median and 1.4826 * MAD.

    The scale is floored at 1e-12 so constant grids stay usable downstream.
    Median/MAD is used instead of mean/SD because sources are bright outliers.
    """
    img = as_grid(img)
    mu0 = float(np.median(img))
    mad = float(np.median(np.abs(img - mu0)))
    sigma0 = max(MAD_TO_SIGMA * mad, SIGMA_FLOOR)
    return mu0, sigma0
