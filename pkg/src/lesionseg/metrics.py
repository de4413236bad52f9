from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .imaging import BinaryMask


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union. Two empty masks agree perfectly (1.0)."""
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError(f"jaccard of {a.width}x{a.height} and {b.width}x{b.height} masks")
    x, y = a.bits.astype(bool), b.bits.astype(bool)
    union = int(np.count_nonzero(x | y))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(x & y)) / union
