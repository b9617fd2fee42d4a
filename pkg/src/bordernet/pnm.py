"""Minimal binary PGM/PPM reading and writing."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np


def to_uint8(values, lo: float | None = None, hi: float | None = None) -> tuple[np.ndarray, float, float]:
    """Linearly map ``[lo, hi]`` onto ``[0, 255]``.

    A constant input (``hi == lo``) maps to a uniform mid-gray image.
    Returns the byte image together with the ``lo``/``hi`` actually used.
    """
    v = np.asarray(values, dtype=np.float64)
    lo = float(np.min(v)) if lo is None else float(lo)
    hi = float(np.max(v)) if hi is None else float(hi)
    if hi <= lo:
        return np.full(v.shape, 128, dtype=np.uint8), lo, hi
    scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(scaled * 255.0).astype(np.uint8), lo, hi


def upscale(img: np.ndarray, factor: int) -> np.ndarray:
    if factor <= 1:
        return img
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError(f"PGM needs a 2-d uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM needs an HxWx3 uint8 array, got {rgb.dtype} {rgb.shape}")
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


_HEADER = re.compile(rb"^(P[25])\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) 8-bit PGM as a float array in [0, 1]."""
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if not m:
        raise ValueError(f"{path}: not a PGM file")
    kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    body = data[m.end():]
    if kind == b"P5":
        if len(body) < w * h:
            raise ValueError(f"{path}: truncated pixel data")
        px = np.frombuffer(body[: w * h], dtype=np.uint8)
    else:
        px = np.array(body.split()[: w * h], dtype=np.int64)
    return px.reshape(h, w).astype(np.float64) / maxval


def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Vectorized HSV -> RGB; all channels in [0, 1]. Returns a uint8 HxWx3 image."""
    h = np.mod(np.asarray(h, dtype=np.float64), 1.0) * 6.0
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    i = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, chans in enumerate(choices):
        sel = i == k
        for c in range(3):
            rgb[..., c][sel] = np.broadcast_to(chans[c], h.shape)[sel]
    return np.rint(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
