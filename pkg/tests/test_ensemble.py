from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from conftest import disk_mask
from lesionseg.ensemble import (
    EnsembleConfig,
    EnsembleMember,
    ImageScore,
    EvalReport,
    ensemble_predict,
    evaluate_ensemble,
    evaluate_predictions,
    output_mask_name,
    postprocess,
    predict_manifest,
    predict_single,
    read_report_csv,
    select_consensus,
    select_oracle,
)
from lesionseg.errors import ConfigError
from lesionseg.imaging import BinaryMask, ImageU8, save_image, save_mask
from lesionseg.manifest import Manifest, ManifestEntry, write_manifest
from lesionseg.metrics import jaccard
from lesionseg.morphology import erode
from lesionseg.nn.network import EncoderDecoder, NetworkConfig


def _cfg(n=3, **kw):
    members = tuple(EnsembleMember(Path(f"m{i}.lsn"), (16, 16)) for i in range(n))
    return EnsembleConfig(members=members, **kw)


def _strip(n, k):
    bits = np.zeros((4, 4), np.uint8)
    bits.ravel()[:k] = 1
    return BinaryMask(bits)


def test_select_oracle():
    gt = _strip(4, 4)
    # Jaccards 0.25, 0.5, 1.0
    preds = [_strip(4, 1), _strip(4, 2), _strip(4, 4)]
    assert [jaccard(p, gt) for p in preds] == [0.25, 0.5, 1.0]
    assert select_oracle(preds, gt) == 2
    assert select_oracle([gt, gt, gt], gt) == 0
    assert select_oracle([preds[0]], gt) == 0


def test_select_consensus():
    a = _strip(4, 4)
    far = BinaryMask(1 - a.bits)
    assert select_consensus([far, a, a]) == 1
    assert select_consensus([a, a, a]) == 0
    assert select_consensus([far]) == 0


def test_postprocess_order_and_switches():
    m = BinaryMask(np.pad(np.ones((12, 12), np.uint8), 6))
    assert postprocess(m, _cfg(erosion=False)) == m
    assert postprocess(m, _cfg()) == erode(m, 10, 10)


def test_ensemble_predict_with_fixed_members():
    gt = disk_mask(24, 12, 12, 6)
    image = ImageU8(np.zeros((24, 24, 3), np.uint8))
    members = [lambda im: BinaryMask.zeros(24, 24), lambda im: gt, lambda im: BinaryMask(1 - gt.bits)]
    mask, idx = ensemble_predict(_cfg(erosion=False), image, gt, members)
    assert idx == 1 and mask == gt
    with pytest.raises(ConfigError):
        ensemble_predict(_cfg(), image, None, members)
    mask, idx = ensemble_predict(_cfg(selection="single", erosion=False), image, None, members)
    assert idx == 0 and mask.area == 0


def test_single_member_matches_predict_single(rng):
    net = EncoderDecoder(NetworkConfig(stage_channels=(4,), bottleneck_channels=4))
    net.init_parameters(5)
    image = ImageU8(rng.integers(0, 256, (20, 30, 3), dtype=np.uint8))
    cfg = _cfg(1, selection="single")
    expected = postprocess(predict_single(net, image, (16, 16)), cfg)
    got, _ = ensemble_predict(cfg, image, None, [lambda im: predict_single(net, im, (16, 16))])
    assert got == expected
    assert predict_single(net, image, (16, 16)) == predict_single(net, image, (16, 16))
    assert predict_single(net, image, (16, 16), threshold=1.0).area == 0


def _write_dataset(tmp_path, n=3, size=20):
    entries = []
    for i in range(n):
        img = ImageU8(np.full((size, size, 3), 100 + i, np.uint8))
        m = disk_mask(size, 8 + i, 10, 4)
        save_image(img, tmp_path / f"s{i}.ppm")
        save_mask(m, tmp_path / f"s{i}_gt.pgm")
        entries.append(ManifestEntry(tmp_path / f"s{i}.ppm", tmp_path / f"s{i}_gt.pgm"))
    return write_manifest(tmp_path / "manifest.csv", entries)


def _gt_predictor(manifest):
    by_value = {}
    for e in manifest.entries:
        img, gt = e.load()
        by_value[int(img.pixels[0, 0, 0])] = gt
    return lambda im: by_value[int(im.pixels[0, 0, 0])]


def test_evaluate_perfect_and_empty(tmp_path):
    manifest = _write_dataset(tmp_path)
    perfect = _gt_predictor(manifest)
    empty = lambda im: BinaryMask.zeros(im.width, im.height)
    cfg = _cfg(2, erosion=False)
    report = evaluate_ensemble(cfg, manifest, tmp_path / "out", [empty, perfect])
    assert report.mean_jaccard == 1.0
    assert report.member_counts() == {1: 3}
    rows = read_report_csv(tmp_path / "out" / "report.csv")
    assert [r.member_jaccards for r in rows] == [[0.0, 1.0]] * 3
    assert "mean_jaccard = 1.0" in (tmp_path / "out" / "summary.txt").read_text()
    only_empty = evaluate_ensemble(_cfg(1, erosion=False), manifest, None, [empty])
    assert only_empty.mean_jaccard == 0.0


def test_oracle_dominates_members(tmp_path, rng):
    manifest = _write_dataset(tmp_path, n=4)
    noisy = [lambda im, s=s: BinaryMask((np.random.default_rng(s + int(im.pixels[0, 0, 0])).random((20, 20)) < 0.3).astype(np.uint8)) for s in range(3)]
    report = evaluate_ensemble(_cfg(3, erosion=False), manifest, None, noisy)
    for row in report.rows:
        assert row.jaccard == max(row.member_jaccards)


def test_predict_then_evaluate_files(tmp_path):
    manifest = _write_dataset(tmp_path)
    cfg = _cfg(1, erosion=False)
    paths = predict_manifest(cfg, manifest, tmp_path / "pred", [_gt_predictor(manifest)], overlays=True)
    assert [p.name for p in paths] == ["s0_mask.pgm", "s1_mask.pgm", "s2_mask.pgm"]
    assert (tmp_path / "pred" / "s0_overlay.ppm").is_file()
    report = evaluate_predictions(manifest, tmp_path / "pred")
    assert report.mean_jaccard == 1.0
    unlabeled = Manifest(None, [ManifestEntry(e.image, None) for e in manifest.entries])
    with pytest.raises(ConfigError):
        predict_manifest(cfg, unlabeled, tmp_path / "p2", [_gt_predictor(manifest)])


def test_parallel_matches_sequential(tmp_path):
    manifest = _write_dataset(tmp_path, n=5)
    net = EncoderDecoder(NetworkConfig(stage_channels=(4,), bottleneck_channels=4))
    net.init_parameters(2)
    from lesionseg.ensemble import MemberPredictor

    preds = [MemberPredictor(net, (16, 16)), MemberPredictor(net, (12, 12))]
    a = evaluate_ensemble(_cfg(2), manifest, tmp_path / "a", preds, jobs=1)
    b = evaluate_ensemble(_cfg(2), manifest, tmp_path / "b", preds, jobs=3)
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    assert a.mean_jaccard == b.mean_jaccard


def test_output_names_and_report_validation():
    assert output_mask_name("ISIC_0000123", ".png") == "ISIC_0000123_segmentation.png"
    assert output_mask_name("synth_00001") == "synth_00001_mask.pgm"
    with pytest.raises(ValueError):
        EvalReport([ImageScore("x", 1.5, 0)])


def test_config_validation():
    with pytest.raises(ConfigError):
        EnsembleConfig(members=())
    with pytest.raises(ConfigError):
        _cfg(selection="vote")
