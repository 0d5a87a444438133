"""Bilinear image resampling used by augmentation and the pattern generator.

Images are ``(H, W, C)`` arrays. Every routine samples the source on a
float grid with ``scipy.ndimage.map_coordinates`` (order 1, zero fill).
"""

import numpy as np
from scipy import ndimage


def _snap(coords, hi, tol=1e-9):
    # rounding can push an edge coordinate just outside the grid, which the
    # zero fill would blank
    coords = np.where(np.abs(coords) < tol, 0.0, coords)
    return np.where(np.abs(coords - hi) < tol, float(hi), coords)


def _sample(image, rows, cols):
    rows, cols = _snap(rows, image.shape[0] - 1), _snap(cols, image.shape[1] - 1)
    out = np.empty(rows.shape + (image.shape[2],), dtype=image.dtype)
    coords = np.stack([rows, cols])
    for c in range(image.shape[2]):
        out[..., c] = ndimage.map_coordinates(
            image[..., c], coords, order=1, mode="constant", cval=0.0
        )
    return out


def rotate(image, degrees):
    """Rotate about the image centre; pixels sampled outside the source are 0."""
    h, w = image.shape[:2]
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    dy, dx = rr - cy, cc - cx
    cos, sin = np.cos(theta), np.sin(theta)
    # inverse map: output pixel -> source location
    src_r = cy + cos * dy - sin * dx
    src_c = cx + sin * dy + cos * dx
    return _sample(image, src_r, src_c)


def crop_resize(image, top, left, height, width):
    """Crop the box ``[top, top+height) x [left, left+width)`` and resize it
    back to the full image size with bilinear interpolation."""
    h, w = image.shape[:2]
    # align corners of the crop box with corners of the output grid
    rows = top + np.linspace(0.0, height - 1.0, h)
    cols = left + np.linspace(0.0, width - 1.0, w)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _sample(image, rr, cc)


def hflip(image):
    return image[:, ::-1, :].copy()


def vflip(image):
    return image[::-1, :, :].copy()
