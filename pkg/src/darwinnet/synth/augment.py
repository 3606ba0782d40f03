"""Whole-image augmentation and normalization."""

import math

import numpy as np


def equalize_histogram(image):
    """Classic CDF remap: out(v) = round(255 * (cdf(v) - cdf_min) / (N - cdf_min)).

    Constant images pass through unchanged (the denominator would be 0).
    Monotone non-decreasing in the input gray level by construction.
    """
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected 2D uint8 image")
    counts = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(counts)
    n = img.size
    cdf_min = cdf[np.nonzero(counts)[0][0]]
    if cdf_min == n:
        return img.copy()
    lut = np.round(255.0 * (cdf - cdf_min) / (n - cdf_min))
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return lut[img]


def _mirror_indices(idx, n):
    """Fold integer indices into [0, n) by symmetric reflection."""
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx < n, idx, period - 1 - idx)


def bilinear_sample(image, xs, ys):
    """Sample float64 values at continuous coords with mirror padding.

    Coordinates follow the pixel-center convention: integer i + 0.5 is the
    center of pixel i. xs, ys are arrays of equal shape.
    """
    img = np.asarray(image, dtype=np.float64)
    fx = xs - 0.5
    fy = ys - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    wx = fx - x0
    wy = fy - y0
    h, w = img.shape
    x0m = _mirror_indices(x0, w)
    x1m = _mirror_indices(x0 + 1, w)
    y0m = _mirror_indices(y0, h)
    y1m = _mirror_indices(y0 + 1, h)
    top = img[y0m, x0m] * (1 - wx) + img[y0m, x1m] * wx
    bot = img[y1m, x0m] * (1 - wx) + img[y1m, x1m] * wx
    return top * (1 - wy) + bot * wy


def augment_rotate_mirror(image, angle_degrees):
    """Rotate about the image center; out-of-frame samples are mirrored.

    Output size equals input size. Bilinear interpolation; angle 0 is an
    exact identity.
    """
    if not 0 <= angle_degrees < 360:
        raise ValueError("angle must lie in [0, 360)")
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("expected 2D image")
    h, w = img.shape
    a = math.radians(angle_degrees)
    ca, sa = math.cos(a), math.sin(a)
    cx, cy = w / 2.0, h / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    ox = xx + 0.5 - cx
    oy = yy + 0.5 - cy
    # inverse map: source coords that land on this output pixel
    sx = ca * ox + sa * oy + cx
    sy = -sa * ox + ca * oy + cy
    out = bilinear_sample(img, sx, sy)
    if img.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out.astype(img.dtype, copy=False)
