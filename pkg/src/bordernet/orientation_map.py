"""Local orientation of an image from the response of the rotated derivative operator.

For a unit angle ``theta`` the operator is ``-sin(theta) d/dx + cos(theta) d/dy``.
At every pixel with a non-vanishing gradient the orientation is the angle
that maximizes its response.

Pixel convention: ``x`` is the column index (increasing to the right) and
``y`` increases *upward*, i.e. ``y = H - 1 - row``. Angles are radians in
``[0, 2*pi)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pnm import hsv_to_rgb, write_ppm

TWO_PI = 2.0 * np.pi
EPS_REG = 1e-6


@dataclass
class GradientField:
    ix: np.ndarray
    iy: np.ndarray

    def __post_init__(self):
        self.ix = np.asarray(self.ix, dtype=np.float64)
        self.iy = np.asarray(self.iy, dtype=np.float64)
        if self.ix.shape != self.iy.shape:
            raise ValueError(f"ix shape {self.ix.shape} != iy shape {self.iy.shape}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.ix, self.iy)


@dataclass
class OrientationMap:
    """``theta`` is NaN wherever ``regular_mask`` is false."""

    theta: np.ndarray
    regular_mask: np.ndarray
    response: np.ndarray  # maximal operator response; NaN off the regular set

    def points(self):
        """(row, col, theta) for every regular pixel, in row-major order."""
        rows, cols = np.nonzero(self.regular_mask)
        return list(zip(rows.tolist(), cols.tolist(), self.theta[rows, cols].tolist()))


def gradient(image, method: str = "central") -> GradientField:
    """Partial derivatives of ``image`` in intensity units per pixel.

    ``central`` uses central differences inside and one-sided differences on
    the border; ``sobel`` uses the 3x3 Sobel stencil scaled by 1/8.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"gradient needs a 2-d image of at least 3x3, got shape {img.shape}")
    if method == "central":
        ix = np.gradient(img, axis=1)
        iy = -np.gradient(img, axis=0)  # rows grow downward, y grows upward
    elif method == "sobel":
        from scipy import ndimage

        ix = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
        iy = -ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    else:
        raise ValueError(f"unknown gradient method {method!r}")
    return GradientField(ix, iy)


def z_response(grad: GradientField, theta: float) -> np.ndarray:
    return -np.sin(theta) * grad.ix + np.cos(theta) * grad.iy


def _masked(grad: GradientField, eps_reg: float):
    mask = grad.magnitude > eps_reg
    theta = np.full(mask.shape, np.nan)
    response = np.full(mask.shape, np.nan)
    return mask, theta, response


def orientation_map_closed_form(grad: GradientField, eps_reg: float = EPS_REG) -> OrientationMap:
    # maximizer of -sin(t)*a + cos(t)*b is atan2(-a, b); the maximum is |(a, b)|
    mask, theta, response = _masked(grad, eps_reg)
    t = np.arctan2(-grad.ix[mask], grad.iy[mask])
    t = np.mod(t, TWO_PI)
    t[t >= TWO_PI] = 0.0  # mod can round -tiny up to exactly 2*pi
    theta[mask] = t
    response[mask] = grad.magnitude[mask]
    return OrientationMap(theta, mask, response)


def orientation_map_bruteforce(
    grad: GradientField, n_angles: int = 3600, eps_reg: float = EPS_REG, chunk: int = 4096
) -> OrientationMap:
    """Argmax of the response over ``n_angles`` equally spaced angles (first index wins ties)."""
    if n_angles < 1:
        raise ValueError("n_angles must be positive")
    mask, theta, response = _masked(grad, eps_reg)
    a = grad.ix[mask]
    b = grad.iy[mask]
    angles = TWO_PI * np.arange(n_angles) / n_angles
    sin, cos = np.sin(angles), np.cos(angles)
    best = np.empty(a.shape, dtype=np.int64)
    best_val = np.empty(a.shape)
    for lo in range(0, a.size, chunk):
        sl = slice(lo, lo + chunk)
        f = -np.outer(a[sl], sin) + np.outer(b[sl], cos)
        best[sl] = f.argmax(axis=1)
        best_val[sl] = f[np.arange(f.shape[0]), best[sl]]
    theta[mask] = angles[best]
    response[mask] = best_val
    return OrientationMap(theta, mask, response)


def angular_distance(a, b) -> np.ndarray:
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


def export_csv(omap: OrientationMap, path) -> None:
    lines = ["row,col,theta"]
    lines += [f"{r},{c},{t:.9f}" for r, c, t in omap.points()]
    Path(path).write_text("\n".join(lines) + "\n")


def export_hsv_ppm(omap: OrientationMap, path, scale: int = 1) -> None:
    """Hue encodes the angle, value the response strength; irregular pixels are black."""
    hue = np.where(omap.regular_mask, omap.theta / TWO_PI, 0.0)
    strength = np.where(omap.regular_mask, omap.response, 0.0)
    peak = strength.max()
    value = strength / peak if peak > 0 else strength
    rgb = hsv_to_rgb(hue, np.ones_like(hue), value)
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    write_ppm(path, rgb)
