"""Binary morphology with rectangular all-ones kernels.

Windows for a ``k``-wide kernel span offsets ``[-floor((k-1)/2), ceil((k-1)/2)]``,
so a 10x10 kernel covers ``[-4, +5]`` on each axis. Pixels outside the image
count as background.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .imaging import BinaryMask


def kernel_offsets(k: int) -> Tuple[int, int]:
    """``(before, after)`` extents of a ``k``-wide window."""
    if k < 1:
        raise ValueError(f"kernel size must be >= 1, got {k}")
    return (k - 1) // 2, k // 2


def _window_sums(bits: np.ndarray, ky: Tuple[int, int], kx: Tuple[int, int]) -> np.ndarray:
    (ya, yb), (xa, xb) = ky, kx
    padded = np.pad(bits.astype(np.int64), ((ya, yb), (xa, xb)))
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = bits.shape
    wh, ww = ya + yb + 1, xa + xb + 1
    return sat[wh:wh + h, ww:ww + w] - sat[:h, ww:ww + w] - sat[wh:wh + h, :w] + sat[:h, :w]


def erode(mask: BinaryMask, kernel_w: int = 10, kernel_h: int = 10) -> BinaryMask:
    """Keep a pixel only when every pixel under the kernel is 1."""
    kx, ky = kernel_offsets(kernel_w), kernel_offsets(kernel_h)
    sums = _window_sums(mask.bits, ky, kx)
    return BinaryMask((sums == kernel_w * kernel_h).astype(np.uint8))


def dilate(mask: BinaryMask, kernel_w: int = 10, kernel_h: int = 10) -> BinaryMask:
    """Set a pixel when any pixel under the reflected kernel is 1."""
    (xa, xb), (ya, yb) = kernel_offsets(kernel_w), kernel_offsets(kernel_h)
    sums = _window_sums(mask.bits, (yb, ya), (xb, xa))
    return BinaryMask((sums > 0).astype(np.uint8))


def closing(mask: BinaryMask, kernel_w: int = 10, kernel_h: int = 10) -> BinaryMask:
    """Dilation followed by erosion; fills holes smaller than the kernel."""
    return erode(dilate(mask, kernel_w, kernel_h), kernel_w, kernel_h)
