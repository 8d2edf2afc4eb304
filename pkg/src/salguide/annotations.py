"""Bounding boxes and their union mask at saliency resolution."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InvalidParameterError


class BBox(NamedTuple):
    """Inclusive pixel rectangle (x0, y0) .. (x1, y1); x is the column."""
    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, width: int, height: int) -> "BBox":
        if not (0 <= self.x0 <= self.x1 < width and 0 <= self.y0 <= self.y1 < height):
            raise InvalidParameterError(f"box {tuple(self)} outside {width}x{height} image")
        return self

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)


@dataclass
class Mask:
    grid: np.ndarray        # (hs, ws) float 0/1
    source_box_count: int


def box_to_grid(box: BBox, image_size: int, saliency_size: int) -> BBox:
    """Map an image-space box onto the saliency grid.

    Both corners are floored, so every partially covered cell is inside.
    """
    if saliency_size < 1 or image_size % saliency_size:
        raise InvalidParameterError(f"image size {image_size} not divisible by saliency size {saliency_size}")
    box = BBox(*box).validate(image_size, image_size)
    f = image_size // saliency_size
    return BBox(box.x0 // f, box.y0 // f, box.x1 // f, box.y1 // f)


def rasterize_union(boxes: Iterable[BBox], image_size: int, saliency_size: int) -> Mask:
    grid = np.zeros((saliency_size, saliency_size))
    count = 0
    for box in boxes:
        g = box_to_grid(box, image_size, saliency_size)
        grid[g.y0:g.y1 + 1, g.x0:g.x1 + 1] = 1.0
        count += 1
    return Mask(grid, count)
