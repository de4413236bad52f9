"""Centroid, in-radius and area of a ground-truth lesion mask.

These are the inputs the occlusion augmentation needs: the lesion centre,
the distance from that centre to the nearest lesion edge pixel, and the
lesion area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import EmptyLesionError
from .imaging import BinaryMask

__all__ = [
    "LesionGeometry",
    "mask_centroid",
    "boundary_pixels",
    "inradius",
    "lesion_geometry",
]


@dataclass(frozen=True)
class LesionGeometry:
    centroid_x: float
    centroid_y: float
    inradius: float
    area: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.area < 1:
            raise EmptyLesionError("lesion geometry needs a non-empty mask")
        if self.inradius < 0 or self.inradius > max(self.width, self.height) * np.sqrt(2):
            raise ValueError(f"in-radius {self.inradius} out of range")
        if not (0 <= self.centroid_x <= self.width - 1 and 0 <= self.centroid_y <= self.height - 1):
            raise ValueError("centroid outside the image")


def _require_lesion(mask: BinaryMask) -> None:
    if not mask.bits.any():
        raise EmptyLesionError("mask contains no lesion pixels")


def mask_centroid(mask: BinaryMask) -> Tuple[float, float]:
    """Unweighted mean (x, y) of the lesion pixels."""
    _require_lesion(mask)
    ys, xs = np.nonzero(mask.bits)
    return float(xs.mean()), float(ys.mean())


def _boundary_map(bits: np.ndarray) -> np.ndarray:
    # the image frame counts as background
    padded = np.pad(bits.astype(bool), 1, constant_values=False)
    core = padded[1:-1, 1:-1]
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return core & ~interior


def boundary_pixels(mask: BinaryMask) -> List[Tuple[int, int]]:
    """Lesion pixels with at least one 4-neighbour that is background or off-image."""
    ys, xs = np.nonzero(_boundary_map(mask.bits))
    return list(zip(xs.tolist(), ys.tolist()))


def inradius(mask: BinaryMask, centroid: Tuple[float, float]) -> float:
    """Distance from ``centroid`` to the closest boundary pixel."""
    _require_lesion(mask)
    ys, xs = np.nonzero(_boundary_map(mask.bits))
    cx, cy = centroid
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    return float(np.sqrt(d2.min()))


def lesion_geometry(mask: BinaryMask) -> LesionGeometry:
    c = mask_centroid(mask)
    return LesionGeometry(
        centroid_x=c[0],
        centroid_y=c[1],
        inradius=inradius(mask, c),
        area=mask.area,
        width=mask.width,
        height=mask.height,
    )
