"""Shared fixtures: a deterministic synthetic test scene and filter doubles."""

import numpy as np

from revfilt.filters import BlackBoxFilter, gaussian_filter


def natural_image(size=256, seed=7, detail=0.105, shimmer=0.0):
    """Deterministic natural-looking scene: gradient background, smooth
    blobs, hard-edged shapes, thin lines, oriented texture and broadband
    detail.

    ``detail`` scales the broadband (blur-fragile) component; ``shimmer``
    adds a fine diagonal weave sitting at the 5-tap box filter's spectral
    zero, which edge-preserving smoothers remove almost entirely.
    """
    rng = np.random.default_rng(seed)
    grid = np.mgrid[0:size, 0:size] / (size - 1)
    y, x = grid[0], grid[1]
    img = 0.35 + 0.25 * x + 0.10 * y
    for _ in range(6):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.06, 0.22)
        amp = rng.uniform(-0.25, 0.30)
        img += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * r * r))
    img += 0.25 * ((np.abs(x - 0.30) < 0.12) & (np.abs(y - 0.62) < 0.18))
    img -= 0.20 * (((x - 0.72) ** 2 + (y - 0.30) ** 2) < 0.02)
    img += 0.30 * ((np.abs(x - 0.62) < 0.015) | (np.abs(x + y - 1.35) < 0.012))
    img += 0.05 * np.sin(2 * np.pi * (17 * x + 23 * y))
    if shimmer:
        img += shimmer * np.sin(2 * np.pi * 0.2 * size * (x + y))
    fine = gaussian_filter(rng.standard_normal((size, size)), 1.0)
    img += detail * fine / fine.std()
    return np.clip(img, 0.02, 0.98)


def identity_filter():
    return BlackBoxFilter(lambda im: im, "identity")


def scaling_filter(c):
    return BlackBoxFilter(lambda im: c * im, f"scale{c}")


def square_filter():
    """Elementwise square; handy for scalar (1x1 image) hand checks."""
    return BlackBoxFilter(lambda im: im * im, "square")


def circular_average_filter(weights=(0.2, 0.6, 0.2)):
    """Periodic 1-D moving average along the row axis (linear operator).

    All eigenvalues of the default stencil lie in (0, 1], so the plain
    residual iteration contracts and affine-convergence oracles apply.
    """
    w_m1, w_0, w_p1 = weights

    def fn(im):
        return w_m1 * np.roll(im, -1, axis=1) + w_0 * im + w_p1 * np.roll(im, 1, axis=1)

    return BlackBoxFilter(fn, "circavg")


def affine_pixel_map(seed, shape=(4, 4)):
    """Random elementwise-affine map f(x) = a * x + s (deterministic)."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.6, 0.6, shape)
    s = rng.uniform(-0.5, 0.5, shape)

    def fn(x):
        return a * x + s

    return fn
