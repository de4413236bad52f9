from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import disk_mask
from lesionseg.augment import AugmentSpec, augment_sample, flip_h, flip_v, random_crop, rcpv
from lesionseg.errors import ShapeError
from lesionseg.geometry import lesion_geometry, mask_centroid
from lesionseg.imaging import BinaryMask, ImageU8, to_grayscale3
from lesionseg.rng import RngState, derive_rng

ALWAYS = AugmentSpec(rcpv_apply_prob=1.0)
NEVER = AugmentSpec(rcpv_apply_prob=0.0)


def _bright(size=64, channels=3):
    return ImageU8(np.full((size, size, channels), 200, np.uint8))


def test_rcpv_q0_identity():
    img, m = _bright(), disk_mask(64, 32, 32, 10)
    g = lesion_geometry(m)
    for s in range(50):
        assert rcpv(img, g, NEVER, RngState(s)) == img


def test_rcpv_q1_locality_and_values():
    img, m = _bright(), disk_mask(64, 32, 32, 10)
    g = lesion_geometry(m)
    changed_any = 0
    for s in range(200):
        out = rcpv(img, g, ALWAYS, RngState(s))
        diff = np.any(out.pixels != img.pixels, axis=2)
        ys, xs = np.nonzero(diff)
        if xs.size:
            changed_any += 1
        assert np.all(np.hypot(xs - g.centroid_x, ys - g.centroid_y) <= 2 * g.inradius)
        assert np.all(out.pixels[diff] < 128)
        # one value per pixel, shared by all channels
        assert np.all(out.pixels[diff].max(axis=1) == out.pixels[diff].min(axis=1))
    assert changed_any >= 195


def test_rcpv_zero_radius_identity():
    bits = np.zeros((20, 20), np.uint8)
    bits[5, 9] = 1
    g = lesion_geometry(BinaryMask(bits))
    img = _bright(20)
    for s in range(50):
        assert rcpv(img, g, ALWAYS, RngState(s)) == img


def test_rcpv_dimension_mismatch():
    g = lesion_geometry(disk_mask(64, 32, 32, 10))
    with pytest.raises(ShapeError):
        rcpv(_bright(32), g, ALWAYS, RngState(0))


def test_rcpv_modes_accepted():
    g = lesion_geometry(disk_mask(64, 32, 32, 10))
    for mode in ("literal", "symmetric"):
        for cons in ("euclidean", "per_axis"):
            spec = AugmentSpec(rcpv_apply_prob=1.0, center_sampling=mode, center_constraint=cons)
            out = rcpv(_bright(), g, spec, RngState(1))
            assert out.pixels.shape == (64, 64, 3)
    with pytest.raises(ValueError):
        AugmentSpec(center_sampling="gaussian")


def test_flips():
    img = ImageU8.from_flat(2, 1, 1, [1, 2])
    m = BinaryMask.from_flat(2, 1, [1, 0])
    fi, fm = flip_h(img, m)
    assert fi.flat == [2, 1] and fm.flat == [0, 1]
    assert flip_h(*flip_h(img, m)) == (img, m)
    big = disk_mask(40, 10, 25, 4)
    im = _bright(40)
    cx, _ = mask_centroid(big)
    _, flipped = flip_h(im, big)
    assert mask_centroid(flipped)[0] == pytest.approx(39 - cx)
    _, vflipped = flip_v(im, big)
    assert mask_centroid(vflipped)[1] == pytest.approx(39 - mask_centroid(big)[1])


def test_crop_identity_at_full_fraction():
    img = ImageU8(np.arange(48, dtype=np.uint8).reshape(4, 4, 3))
    m = BinaryMask.from_flat(4, 4, [0, 1] * 8)
    spec = AugmentSpec(crop_min_fraction=1.0)
    assert random_crop(img, m, spec, RngState(0)) == (img, m)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(8, 40), st.integers(8, 40), st.integers(0, 2**32), st.floats(0.3, 1.0),
)
def test_crop_keeps_lesion(w, h, seed, frac):
    rng = np.random.default_rng(seed)
    bits = np.zeros((h, w), np.uint8)
    x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
    bits[y, x] = 1
    if rng.random() < 0.5:
        bits[(rng.random((h, w)) < 0.05)] = 1
    img = ImageU8(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
    spec = AugmentSpec(crop_min_fraction=frac)
    ci, cm = random_crop(img, BinaryMask(bits), spec, RngState(seed))
    assert (ci.width, ci.height) == (w, h) and (cm.width, cm.height) == (w, h)
    assert cm.area > 0


def test_augment_identity_spec():
    img = ImageU8(np.arange(75, dtype=np.uint8).reshape(5, 5, 3))
    m = disk_mask(5, 2, 2, 1)
    assert augment_sample(img, m, AugmentSpec.identity(), RngState(0)) == (img, m)


def test_augment_grayscale_only_matches_converter():
    img = ImageU8(np.random.default_rng(2).integers(0, 256, (10, 10, 3), dtype=np.uint8))
    spec = replace(AugmentSpec.identity(), grayscale_first=True)
    out, _ = augment_sample(img, disk_mask(10, 5, 5, 2), spec, RngState(0))
    assert out == to_grayscale3(img)


def test_augment_deterministic_and_gray(rng):
    img = ImageU8(rng.integers(130, 256, (48, 48, 3), dtype=np.uint8))
    m = disk_mask(48, 20, 26, 9)
    spec = AugmentSpec(rcpv_apply_prob=1.0)
    for s in range(20):
        a = augment_sample(img, m, spec, derive_rng(3, 0, s))
        b = augment_sample(img, m, spec, derive_rng(3, 0, s))
        assert a == b
        px = a[0].pixels
        assert np.array_equal(px[..., 0], px[..., 1]) and np.array_equal(px[..., 1], px[..., 2])
        assert a[1].area > 0


def test_augment_single_channel_input():
    img = ImageU8(np.full((12, 12, 1), 180, np.uint8))
    out, _ = augment_sample(img, disk_mask(12, 6, 6, 3), AugmentSpec(), RngState(4))
    assert out.channels == 3


def test_augment_shape_mismatch():
    with pytest.raises(ShapeError):
        augment_sample(_bright(10), BinaryMask.zeros(9, 10), AugmentSpec(), RngState(0))


def test_spec_validation():
    with pytest.raises(ValueError):
        AugmentSpec(rcpv_apply_prob=1.5)
    with pytest.raises(ValueError):
        AugmentSpec(fill_low=10, fill_high=5)
    with pytest.raises(ValueError):
        AugmentSpec(crop_min_fraction=0.0)
    assert math.isclose(AugmentSpec().rcpv_apply_prob, 0.5)
