"""8-bit images, binary masks, codecs and the raster operations around them.

Binary PPM (P6) and PGM (P5) are handled natively and round-trip bit-exactly.
PNG and JPEG are read (and PNG written) through Pillow when it is installed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import DataError, ImageFormatError, ShapeError

PathLike = Union[str, os.PathLike]

MAX_SIDE = 1 << 16

try:  # optional codec backend
    from PIL import Image as _PILImage
except ImportError:  # pragma: no cover - exercised only without Pillow
    _PILImage = None

__all__ = [
    "ImageU8",
    "BinaryMask",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "to_grayscale3",
    "resize_bilinear",
    "resize_mask_nearest",
    "overlay",
    "round_half_up",
]


def round_half_up(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer with .5 going up, clamped to [0, 255]."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ImageU8:
    """An 8-bit raster held as a read-only ``(height, width, channels)`` array."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ShapeError(f"image array must be HxWxC, got shape {px.shape}")
        if px.shape[2] not in (1, 3):
            raise ShapeError(f"image must have 1 or 3 channels, got {px.shape[2]}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"image dimensions must be >= 1, got {px.shape[1]}x{px.shape[0]}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ShapeError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_flat(cls, width: int, height: int, channels: int, values: Sequence[int]) -> "ImageU8":
        arr = np.asarray(values, dtype=np.int64)
        if arr.size != width * height * channels:
            raise ShapeError(
                f"pixel count {arr.size} != {width}*{height}*{channels}"
            )
        return cls(arr.reshape(height, width, channels))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def flat(self) -> list:
        return self.pixels.reshape(-1).tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageU8):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self) -> str:
        return f"ImageU8({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A 0/1 label raster held as a read-only ``(height, width)`` uint8 array."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ShapeError(f"mask array must be HxW, got shape {b.shape}")
        if b.shape[0] < 1 or b.shape[1] < 1:
            raise ShapeError("mask dimensions must be >= 1")
        if b.dtype == bool:
            b = b.astype(np.uint8)
        elif not np.all((b == 0) | (b == 1)):
            raise ShapeError("mask values must be 0 or 1")
        b = np.array(b, dtype=np.uint8, copy=True)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[int]) -> "BinaryMask":
        arr = np.asarray(values, dtype=np.int64)
        if arr.size != width * height:
            raise ShapeError(f"bit count {arr.size} != {width}*{height}")
        return cls(arr.reshape(height, width))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum(dtype=np.int64))

    @property
    def flat(self) -> list:
        return self.bits.reshape(-1).tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"


# ---------------------------------------------------------------------------
# codecs
# ---------------------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("malformed header: unexpected end of file")
    return data[start:pos], pos


def _decode_pnm(data: bytes) -> ImageU8:
    magic = data[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"malformed header: non-integer field {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"malformed header: dimensions {width}x{height}")
    if width > MAX_SIDE or height > MAX_SIDE:
        raise ImageFormatError(f"dimension overflow: {width}x{height} exceeds {MAX_SIDE} per side")
    if maxval > 255:
        raise ImageFormatError("16-bit PNM images are not supported")
    if maxval < 1:
        raise ImageFormatError(f"malformed header: maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    count = width * height * channels
    payload = data[pos:pos + count]
    if len(payload) < count:
        raise ImageFormatError(
            f"short read: expected {count} pixel bytes, got {len(payload)}"
        )
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        if px.max(initial=0) > maxval:
            raise ImageFormatError("pixel value exceeds maxval")
        px = round_half_up(px.astype(np.float64) * 255.0 / maxval)
    return ImageU8(px)


def _decode_pillow(path: Path) -> ImageU8:
    if _PILImage is None:
        raise ImageFormatError(f"{path}: PNG/JPEG support needs Pillow")
    try:
        with _PILImage.open(path) as im:
            im.load()
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N", "F"):
                raise ImageFormatError(f"{path}: 16-bit/float images are not supported")
            if im.mode in ("1", "L"):
                arr = np.asarray(im.convert("L"))
            elif im.mode == "LA":
                arr = np.asarray(im)[:, :, 0]
            else:
                arr = np.asarray(im.convert("RGB"))
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if arr.shape[0] > MAX_SIDE or arr.shape[1] > MAX_SIDE:
        raise ImageFormatError(f"{path}: dimension overflow")
    return ImageU8(arr)


def load_image(path: PathLike) -> ImageU8:
    """Decode a P5/P6 PNM file, or a PNG/JPEG file when Pillow is available."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        try:
            return _decode_pnm(data)
        except ImageFormatError as exc:
            raise ImageFormatError(f"{path}: {exc}") from None
    if data[:8] == b"\x89PNG\r\n\x1a\n" or data[:3] == b"\xff\xd8\xff":
        return _decode_pillow(path)
    raise ImageFormatError(f"{path}: unsupported image format")


def _encode_pnm(image: ImageU8) -> bytes:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    return header + image.pixels.tobytes()


def save_image(image: ImageU8, path: PathLike) -> None:
    """Write ``image``; the format follows the suffix (.pgm, .ppm, .pnm, .png)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm" and image.channels != 1:
        raise ShapeError(f"{path}: PGM holds 1 channel, image has {image.channels}")
    if suffix == ".ppm" and image.channels != 3:
        raise ShapeError(f"{path}: PPM holds 3 channels, image has {image.channels}")
    try:
        if suffix in (".pgm", ".ppm", ".pnm"):
            path.write_bytes(_encode_pnm(image))
        elif suffix == ".png":
            if _PILImage is None:
                raise ImageFormatError("PNG output needs Pillow")
            arr = image.pixels[:, :, 0] if image.channels == 1 else image.pixels
            _PILImage.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")
        else:
            raise ImageFormatError(f"{path}: unsupported output format {suffix!r}")
    except OSError as exc:
        raise DataError(f"{path}: cannot write image ({exc})") from exc


def load_mask(path: PathLike, threshold: int = 128) -> BinaryMask:
    """Binarize the first channel of an image file: 1 where value >= threshold."""
    if not 0 <= threshold <= 255:
        raise DataError(f"mask threshold {threshold} outside 0..255")
    image = load_image(path)
    return BinaryMask((image.pixels[:, :, 0] >= threshold).astype(np.uint8))


def mask_to_image(mask: BinaryMask) -> ImageU8:
    return ImageU8((mask.bits * np.uint8(255))[:, :, None])


def save_mask(mask: BinaryMask, path: PathLike) -> None:
    """Write a single-channel {0, 255} file."""
    save_image(mask_to_image(mask), path)


# ---------------------------------------------------------------------------
# raster operations
# ---------------------------------------------------------------------------

def to_grayscale3(image: ImageU8) -> ImageU8:
    """BT.601 luma replicated into three channels."""
    if image.channels != 3:
        raise ShapeError(f"grayscale conversion needs 3 channels, got {image.channels}")
    px = image.pixels.astype(np.int64)
    # integer form of round-half-up(0.299 R + 0.587 G + 0.114 B)
    luma = (299 * px[:, :, 0] + 587 * px[:, :, 1] + 114 * px[:, :, 2] + 500) // 1000
    luma = np.clip(luma, 0, 255).astype(np.uint8)
    return ImageU8(np.repeat(luma[:, :, None], 3, axis=2))


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    dst = np.arange(n_out, dtype=np.float64)
    return (dst + 0.5) * (n_in / n_out) - 0.5


def _check_size(out_w: int, out_h: int) -> None:
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"target size must be >= 1x1, got {out_w}x{out_h}")


def resize_bilinear(image: ImageU8, out_w: int, out_h: int) -> ImageU8:
    """Half-pixel-centre bilinear resampling with edge clamping."""
    _check_size(out_w, out_h)
    if (out_w, out_h) == (image.width, image.height):
        return image
    src = image.pixels.astype(np.float64)

    def axis_weights(n_in: int, n_out: int):
        s = np.clip(_source_coords(n_in, n_out), 0.0, n_in - 1)
        i0 = np.floor(s).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, s - i0

    y0, y1, fy = axis_weights(image.height, out_h)
    x0, x1, fx = axis_weights(image.width, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return ImageU8(round_half_up(top * (1 - fy) + bottom * fy))


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    s = np.floor(_source_coords(n_in, n_out) + 0.5)
    return np.clip(s, 0, n_in - 1).astype(np.intp)


def resize_mask_nearest(mask: BinaryMask, out_w: int, out_h: int) -> BinaryMask:
    """Nearest-neighbour resampling under the half-pixel-centre mapping."""
    _check_size(out_w, out_h)
    rows = _nearest_index(mask.height, out_h)
    cols = _nearest_index(mask.width, out_w)
    return BinaryMask(mask.bits[rows][:, cols])


def overlay(
    image: ImageU8,
    mask: BinaryMask,
    color: Tuple[int, int, int] = (255, 0, 0),
    alpha: float = 0.5,
) -> ImageU8:
    """Alpha-blend ``color`` into ``image`` wherever ``mask`` is set."""
    if image.channels != 3:
        raise ShapeError("overlay needs a 3-channel image")
    if (image.width, image.height) != (mask.width, mask.height):
        raise ShapeError(
            f"overlay size mismatch: image {image.width}x{image.height}, "
            f"mask {mask.width}x{mask.height}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    px = image.pixels.astype(np.float64)
    blended = round_half_up((1.0 - alpha) * px + alpha * np.asarray(color, dtype=np.float64))
    sel = mask.bits.astype(bool)
    out = image.pixels.copy()
    out[sel] = blended[sel]
    return ImageU8(out)
