from __future__ import annotations

import pytest

from lesionseg.manifest import load_manifest
from lesionseg.synth import SynthSpec, generate_dataset, synth_sample
from lesionseg.rng import derive_rng


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_same_bytes(tmp_path):
    generate_dataset(tmp_path / "a", 6, seed=9)
    generate_dataset(tmp_path / "b", 6, seed=9)
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    generate_dataset(tmp_path / "c", 6, seed=10)
    assert _tree_bytes(tmp_path / "a") != _tree_bytes(tmp_path / "c")


def test_masks_meet_area_floor(tmp_path):
    manifest = generate_dataset(tmp_path, 25, SynthSpec(width=64, height=48), seed=1)
    loaded = load_manifest(manifest.path)
    assert len(loaded) == 25
    for e in loaded:
        img, m = e.load()
        assert (img.width, img.height, img.channels) == (64, 48, 3)
        assert m.area >= 0.01 * 64 * 48


def test_empty_dataset(tmp_path):
    generate_dataset(tmp_path, 0)
    assert (tmp_path / "manifest.csv").read_text() == "image,mask\n"


def test_lesion_darker_than_skin():
    img, m = synth_sample(SynthSpec(hair_prob=0.0), derive_rng(0, 0, 3))
    gray = img.pixels.mean(axis=2)
    assert gray[m.bits == 1].mean() < gray[m.bits == 0].mean() - 20


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(width=8)
    with pytest.raises(ValueError):
        SynthSpec(hair_prob=2.0)
