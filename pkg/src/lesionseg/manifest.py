"""Dataset listings: a CSV with an ``image,mask`` header, one sample per row.

Paths are stored relative to the manifest's own directory.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

from .errors import ConfigError, DataError
from .imaging import BinaryMask, ImageU8, load_image, load_mask

HEADER = ["image", "mask"]


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    mask: Optional[Path] = None

    @property
    def id(self) -> str:
        return self.image.stem

    def load(self) -> Tuple[ImageU8, Optional[BinaryMask]]:
        image = load_image(self.image)
        mask = load_mask(self.mask) if self.mask is not None else None
        if mask is not None and (mask.width, mask.height) != (image.width, image.height):
            raise DataError(
                f"{self.mask}: mask is {mask.width}x{mask.height}, image is {image.width}x{image.height}"
            )
        return image, mask


@dataclass
class Manifest:
    path: Optional[Path]
    entries: List[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def has_masks(self) -> bool:
        return all(e.mask is not None for e in self.entries)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such manifest")
    base = path.parent
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest (missing header)") from None
        if [h.strip() for h in header] != HEADER:
            raise DataError(f"{path}: manifest header must be 'image,mask', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            image, mask = row[0].strip(), row[1].strip()
            if not image:
                raise DataError(f"{path}:{lineno}: empty image path")
            entries.append(ManifestEntry(base / image, base / mask if mask else None))
    return Manifest(path, entries)


def write_manifest(path, entries: Iterable[ManifestEntry]) -> Manifest:
    path = Path(path)
    base = path.parent.resolve()
    entries = list(entries)

    def rel(p: Path) -> str:
        return Path(os.path.relpath(Path(p).resolve(), base)).as_posix()

    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for e in entries:
            writer.writerow([rel(e.image), rel(e.mask) if e.mask is not None else ""])
    return Manifest(path, entries)


def require_masks(manifest: Manifest, purpose: str) -> None:
    missing = [e.image.name for e in manifest.entries if e.mask is None]
    if missing:
        raise ConfigError(f"{purpose} needs ground-truth masks; missing for {', '.join(missing[:5])}")
