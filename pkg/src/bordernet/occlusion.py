"""Diagonal stripe occlusions.

A pixel ``(r, c)`` is blacked out when ``(d + phase) mod (w + s) < w`` where
``d = r + c`` for anti-diagonal stripes (running bottom-left to top-right)
and ``d = r - c`` for main-diagonal stripes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .pnm import upscale, write_pgm

GRID_RANGE = tuple(range(1, 11))


class Direction(str, enum.Enum):
    ANTI = "anti"
    MAIN = "main"


@dataclass(frozen=True)
class OcclusionSpec:
    width: int
    spacing: int
    direction: Direction = Direction.ANTI
    phase: int = 0

    def __post_init__(self):
        if int(self.width) < 1 or int(self.spacing) < 1:
            raise ValueError(f"stripe width and spacing must be >= 1, got w={self.width}, s={self.spacing}")
        object.__setattr__(self, "direction", Direction(self.direction))

    @property
    def period(self) -> int:
        return self.width + self.spacing

    def describe(self) -> str:
        return f"w={self.width} s={self.spacing} {self.direction.value} phase={self.phase}"


def occlusion_mask(spec: OcclusionSpec, height: int = 28, width: int = 28) -> np.ndarray:
    """Boolean ``height x width`` mask, True where the pixel is occluded."""
    r, c = np.indices((height, width))
    d = r + c if spec.direction is Direction.ANTI else r - c
    return np.mod(d + spec.phase, spec.period) < spec.width


def apply_occlusion(dataset: Dataset, spec: OcclusionSpec) -> Dataset:
    """Copy of ``dataset`` with the stripes set to 0.0; labels are shared, not copied."""
    mask = occlusion_mask(spec, *dataset.images.shape[-2:])
    images = np.where(mask, np.float32(0), dataset.images)
    return Dataset(images, dataset.labels, dataset.split, occlusion=spec)


def occlusion_grid(w_range=GRID_RANGE, s_range=GRID_RANGE, direction=Direction.ANTI, phase: int = 0):
    """All (w, s) specs, w in the outer loop."""
    return [OcclusionSpec(w, s, direction, phase) for w in w_range for s in s_range]


def preview(dataset: Dataset, path, count: int = 8, scale: int = 4) -> None:
    """Tile the first ``count`` images side by side into a PGM, 1px gray separators."""
    imgs = dataset.images[:count, 0]
    h, w = imgs.shape[1:]
    sheet = np.full((h, count * (w + 1) - 1), 128, dtype=np.uint8)
    for i, im in enumerate(imgs):
        sheet[:, i * (w + 1): i * (w + 1) + w] = np.rint(np.clip(im, 0, 1) * 255).astype(np.uint8)
    write_pgm(path, upscale(sheet, scale))
