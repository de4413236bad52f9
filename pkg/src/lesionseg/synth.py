"""Synthetic dermoscopy-like images: noisy skin background, one irregular
elliptical lesion, optional hair strokes drawn over everything.

All randomness comes from SplitMix64 streams, so a seed reproduces the
dataset byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .imaging import BinaryMask, ImageU8, round_half_up, save_image, save_mask
from .manifest import Manifest, ManifestEntry, write_manifest
from .rng import RngState, derive_rng

MIN_AREA_FRACTION = 0.01


@dataclass(frozen=True)
class SynthSpec:
    width: int = 120
    height: int = 80
    hair_prob: float = 0.5
    noise: float = 10.0

    def __post_init__(self) -> None:
        if self.width < 16 or self.height < 16:
            raise ValueError(f"synthetic images must be at least 16x16, got {self.width}x{self.height}")
        if not 0.0 <= self.hair_prob <= 1.0:
            raise ValueError("hair_prob must lie in [0, 1]")


def _lesion_mask(spec: SynthSpec, rng: RngState) -> Tuple[np.ndarray, np.ndarray]:
    """Boolean lesion mask plus a normalised radial coordinate (0 centre, 1 edge)."""
    w, h = spec.width, spec.height
    short = min(w, h)
    b = rng.uniform(0.16, 0.34) * short
    a = b * rng.uniform(1.0, 1.6)
    theta = rng.uniform(0.0, math.pi)
    cx = rng.uniform(0.3, 0.7) * w
    cy = rng.uniform(0.3, 0.7) * h
    # lobed boundary: radius modulated by two low-frequency harmonics
    k1, k2 = rng.integer(2, 5), rng.integer(5, 9)
    amp1, amp2 = rng.uniform(0.0, 0.12), rng.uniform(0.0, 0.05)
    ph1, ph2 = rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    u = (dx * math.cos(theta) + dy * math.sin(theta)) / a
    v = (-dx * math.sin(theta) + dy * math.cos(theta)) / b
    rho = np.hypot(u, v)
    ang = np.arctan2(v, u)
    edge = 1.0 + amp1 * np.sin(k1 * ang + ph1) + amp2 * np.sin(k2 * ang + ph2)
    r = rho / edge
    return r <= 1.0, r


def _hair(img: np.ndarray, rng: RngState) -> None:
    h, w = img.shape[:2]
    n = rng.integer(1, 5)
    for _ in range(n):
        p0 = np.array([rng.uniform(0, w), rng.uniform(0, h)])
        p1 = np.array([rng.uniform(0, w), rng.uniform(0, h)])
        p2 = np.array([rng.uniform(0, w), rng.uniform(0, h)])
        shade = rng.uniform(20, 60)
        t = np.linspace(0.0, 1.0, 4 * (w + h))[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
        xi = np.clip(np.floor(pts[:, 0]).astype(int), 0, w - 1)
        yi = np.clip(np.floor(pts[:, 1]).astype(int), 0, h - 1)
        img[yi, xi, :] = shade


def synth_sample(spec: SynthSpec, rng: RngState) -> Tuple[ImageU8, BinaryMask]:
    w, h = spec.width, spec.height
    while True:
        lesion, r = _lesion_mask(spec, rng)
        if lesion.sum() >= MIN_AREA_FRACTION * w * h:
            break
    skin = np.array([rng.uniform(180, 230), rng.uniform(140, 180), rng.uniform(120, 160)])
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # vignetting: darker towards the corners
    vig = 1.0 - rng.uniform(0.05, 0.2) * (((xs / w - 0.5) ** 2 + (ys / h - 0.5) ** 2) / 0.5)
    img = skin[None, None, :] * vig[:, :, None]

    darkness = rng.uniform(0.45, 0.75)
    tint = np.array([1.0, rng.uniform(0.75, 0.95), rng.uniform(0.7, 0.9)])
    # soft falloff across the border, darker core
    weight = np.clip((1.15 - r) / 0.3, 0.0, 1.0)
    weight = np.where(lesion, np.maximum(weight, 0.55), np.minimum(weight, 0.35))
    core = np.clip(1.0 - r, 0.0, 1.0) * rng.uniform(0.0, 0.25)
    factor = 1.0 - weight[:, :, None] * (1.0 - darkness * tint[None, None, :]) - core[:, :, None]
    img = img * factor

    noise = (rng.uniform_block(h * w * 3) + rng.uniform_block(h * w * 3) - 1.0).reshape(h, w, 3)
    img = img + spec.noise * noise
    if rng.uniform() < spec.hair_prob:
        _hair(img, rng)
    return ImageU8(round_half_up(img)), BinaryMask(lesion.astype(np.uint8))


def generate_dataset(out_dir, count: int, spec: SynthSpec = SynthSpec(), seed: int = 0,
                     prefix: str = "synth", manifest_name: str = "manifest.csv") -> Manifest:
    """Write ``count`` image/mask pairs (PPM/PGM) and a manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    entries: List[ManifestEntry] = []
    for i in range(count):
        image, mask = synth_sample(spec, derive_rng(seed, 0, i))
        stem = f"{prefix}_{i:05d}"
        img_path = out_dir / "images" / f"{stem}.ppm"
        mask_path = out_dir / "masks" / f"{stem}_mask.pgm"
        save_image(image, img_path)
        save_mask(mask, mask_path)
        entries.append(ManifestEntry(img_path, mask_path))
    return write_manifest(out_dir / manifest_name, entries)
