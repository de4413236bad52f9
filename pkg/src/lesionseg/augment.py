"""Training-time augmentation: random changing pixel value (RCPV) occlusion,
joint flips, lesion-preserving random crops, and their seeded composition.

RCPV replaces the pixels of a random disc near the lesion centre with random
dark values, so the network cannot rely on the lesion interior and has to
learn its edges. The mask is never touched by RCPV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ShapeError
from .geometry import LesionGeometry, lesion_geometry
from .imaging import BinaryMask, ImageU8, resize_bilinear, resize_mask_nearest, to_grayscale3
from .rng import RngState, derive_rng

__all__ = [
    "AugmentSpec",
    "RCPV_MAX_TRIES",
    "rcpv",
    "flip_h",
    "flip_v",
    "random_crop",
    "augment_sample",
    "derive_rng",
]

RCPV_MAX_TRIES = 16

CENTER_SAMPLING = ("literal", "symmetric")
CENTER_CONSTRAINT = ("euclidean", "per_axis")


@dataclass(frozen=True)
class AugmentSpec:
    """Augmentation knobs.

    ``rcpv_apply_prob`` is the probability that RCPV modifies a sample;
    a skip-probability ``p`` corresponds to ``rcpv_apply_prob = 1 - p``.
    """

    rcpv_apply_prob: float = 0.5
    fill_low: int = 0
    fill_high: int = 128
    center_sampling: str = "literal"
    center_constraint: str = "euclidean"
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    crop_min_fraction: float = 0.8
    grayscale_first: bool = True

    def __post_init__(self) -> None:
        for name in ("rcpv_apply_prob", "flip_h_prob", "flip_v_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0 <= self.fill_low < self.fill_high <= 256:
            raise ValueError(f"invalid fill range [{self.fill_low}, {self.fill_high})")
        if not 0.0 < self.crop_min_fraction <= 1.0:
            raise ValueError(f"crop_min_fraction must lie in (0, 1], got {self.crop_min_fraction}")
        if self.center_sampling not in CENTER_SAMPLING:
            raise ValueError(f"center_sampling must be one of {CENTER_SAMPLING}")
        if self.center_constraint not in CENTER_CONSTRAINT:
            raise ValueError(f"center_constraint must be one of {CENTER_CONSTRAINT}")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(
            rcpv_apply_prob=0.0,
            flip_h_prob=0.0,
            flip_v_prob=0.0,
            crop_min_fraction=1.0,
            grayscale_first=False,
        )


def _check_pair(image: ImageU8, mask: BinaryMask) -> None:
    if (image.width, image.height) != (mask.width, mask.height):
        raise ShapeError(
            f"image {image.width}x{image.height} and mask {mask.width}x{mask.height} differ"
        )


def _center_range(c: float, radius: float, mode: str) -> Tuple[int, int]:
    lo = c if mode == "literal" else c - radius
    return math.ceil(lo), math.floor(c + radius)


def rcpv(image: ImageU8, geometry: LesionGeometry, spec: AugmentSpec, rng: RngState) -> ImageU8:
    """Random changing pixel value occlusion.

    With probability ``1 - spec.rcpv_apply_prob`` the image comes back
    untouched. Otherwise a radius ``r`` in ``[0, R)`` and an integer disc
    centre near the lesion centroid are drawn (redrawn while the centre is
    farther than ``R`` from the centroid), and every in-image pixel of the
    disc gets its own value from ``[fill_low, fill_high)``, written to all
    channels.
    """
    if image.width < geometry.width or image.height < geometry.height:
        raise ShapeError("image smaller than the mask the geometry came from")
    if rng.uniform() >= spec.rcpv_apply_prob:
        return image
    big_r = geometry.inradius
    if big_r <= 0.0:
        return image
    cx, cy = geometry.centroid_x, geometry.centroid_y
    x_lo, x_hi = _center_range(cx, big_r, spec.center_sampling)
    y_lo, y_hi = _center_range(cy, big_r, spec.center_sampling)
    if x_hi < x_lo or y_hi < y_lo:
        return image

    for _ in range(RCPV_MAX_TRIES):
        r = rng.uniform(0.0, big_r)
        xe = rng.integer(x_lo, x_hi + 1)
        ye = rng.integer(y_lo, y_hi + 1)
        dx, dy = xe - cx, ye - cy
        if spec.center_constraint == "euclidean":
            ok = dx * dx + dy * dy <= big_r * big_r
        else:
            ok = abs(dx) <= big_r and abs(dy) <= big_r
        if ok:
            break
    else:
        return image

    h, w = image.height, image.width
    reach = int(math.floor(r))
    x0, x1 = max(0, xe - reach), min(w - 1, xe + reach)
    y0, y1 = max(0, ye - reach), min(h - 1, ye + reach)
    if x0 > x1 or y0 > y1:
        return image
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    inside = (xs - xe) ** 2 + (ys - ye) ** 2 <= r * r
    n = int(inside.sum())
    values = rng.integer_block(spec.fill_low, spec.fill_high, n).astype(np.uint8)
    out = image.pixels.copy()
    out[ys[inside], xs[inside], :] = values[:, None]
    return ImageU8(out)


def flip_h(image: ImageU8, mask: BinaryMask) -> Tuple[ImageU8, BinaryMask]:
    """Mirror image and mask left-right."""
    _check_pair(image, mask)
    return ImageU8(image.pixels[:, ::-1]), BinaryMask(mask.bits[:, ::-1])


def flip_v(image: ImageU8, mask: BinaryMask) -> Tuple[ImageU8, BinaryMask]:
    """Mirror image and mask top-bottom."""
    _check_pair(image, mask)
    return ImageU8(image.pixels[::-1]), BinaryMask(mask.bits[::-1])


def _anchor_pixel(mask: BinaryMask) -> Tuple[int, int] | None:
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        return None
    cx, cy = xs.mean(), ys.mean()
    # lesion pixel nearest the centroid: stays a lesion pixel even for
    # non-convex shapes whose centroid falls outside the mask
    k = int(np.argmin((xs - cx) ** 2 + (ys - cy) ** 2))
    return int(xs[k]), int(ys[k])


def _crop_offset(size: int, crop: int, anchor: int | None, rng: RngState) -> int:
    if anchor is None:
        lo, hi = 0, size - crop
    else:
        lo, hi = max(0, anchor - crop + 1), min(anchor, size - crop)
    return rng.integer(lo, hi + 1)


def random_crop(
    image: ImageU8, mask: BinaryMask, spec: AugmentSpec, rng: RngState
) -> Tuple[ImageU8, BinaryMask]:
    """Crop a random window holding the lesion centre, then resize back."""
    _check_pair(image, mask)
    w, h = image.width, image.height
    fx = rng.uniform(spec.crop_min_fraction, 1.0)
    fy = rng.uniform(spec.crop_min_fraction, 1.0)
    cw = min(w, max(1, int(math.floor(fx * w + 0.5))))
    ch = min(h, max(1, int(math.floor(fy * h + 0.5))))
    anchor = _anchor_pixel(mask)
    x0 = _crop_offset(w, cw, None if anchor is None else anchor[0], rng)
    y0 = _crop_offset(h, ch, None if anchor is None else anchor[1], rng)
    if (cw, ch) == (w, h):
        return image, mask
    sub_img = ImageU8(image.pixels[y0:y0 + ch, x0:x0 + cw])
    sub_mask = BinaryMask(mask.bits[y0:y0 + ch, x0:x0 + cw])
    return resize_bilinear(sub_img, w, h), resize_mask_nearest(sub_mask, w, h)


def augment_sample(
    image: ImageU8, mask: BinaryMask, spec: AugmentSpec, rng: RngState
) -> Tuple[ImageU8, BinaryMask]:
    """Grayscale, flips, crop, then RCPV, in that order."""
    _check_pair(image, mask)
    if spec.grayscale_first:
        if image.channels == 1:
            image = ImageU8(np.repeat(image.pixels, 3, axis=2))
        else:
            image = to_grayscale3(image)
    if rng.uniform() < spec.flip_h_prob:
        image, mask = flip_h(image, mask)
    if rng.uniform() < spec.flip_v_prob:
        image, mask = flip_v(image, mask)
    image, mask = random_crop(image, mask, spec, rng)
    if mask.bits.any():
        image = rcpv(image, lesion_geometry(mask), spec, rng)
    return image, mask
