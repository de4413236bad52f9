"""Multi-resolution prediction, member selection, post-processing and the
Jaccard evaluation harness."""

from __future__ import annotations

import csv
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataError
from .imaging import (
    BinaryMask,
    ImageU8,
    load_mask,
    overlay,
    resize_bilinear,
    resize_mask_nearest,
    save_image,
    save_mask,
    to_grayscale3,
)
from .manifest import Manifest, ManifestEntry, require_masks
from .metrics import jaccard
from .morphology import closing, erode
from .nn.checkpoint import ModelCheckpoint, load_checkpoint
from .nn.network import EncoderDecoder

SELECTIONS = ("oracle", "consensus", "single")
FULL_SCALE_SIZES = ((500, 350), (450, 300), (400, 250))

Predictor = Callable[[ImageU8], BinaryMask]


@dataclass(frozen=True)
class EnsembleMember:
    checkpoint: Path
    input_size: Tuple[int, int]


@dataclass(frozen=True)
class EnsembleConfig:
    members: Tuple[EnsembleMember, ...]
    selection: str = "oracle"
    threshold: float = 0.5
    erosion: bool = True
    erosion_kernel: Tuple[int, int] = (10, 10)
    closing: bool = False

    def __post_init__(self) -> None:
        if len(self.members) < 1:
            raise ConfigError("an ensemble needs at least one member")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if min(self.erosion_kernel) < 1:
            raise ConfigError(f"erosion kernel must be >= 1x1, got {self.erosion_kernel}")


# ---------------------------------------------------------------------------
# single-model prediction
# ---------------------------------------------------------------------------

def image_to_tensor(image: ImageU8) -> np.ndarray:
    """``(1, 3, H, W)`` float32 in [0, 1]."""
    px = image.pixels
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    return (px.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)[None]


def _as_network(model: Union[EncoderDecoder, ModelCheckpoint]) -> EncoderDecoder:
    return model.build_network() if isinstance(model, ModelCheckpoint) else model


def predict_probabilities(model: Union[EncoderDecoder, ModelCheckpoint], image: ImageU8, input_size: Tuple[int, int]) -> np.ndarray:
    """Lesion probabilities at ``input_size`` as an ``(h, w)`` float32 array."""
    net = _as_network(model)
    gray = to_grayscale3(image) if image.channels == 3 else image
    small = resize_bilinear(gray, *input_size)
    return net.forward(image_to_tensor(small), train=False)[0, 0]


def predict_single(
    model: Union[EncoderDecoder, ModelCheckpoint],
    image: ImageU8,
    input_size: Tuple[int, int],
    threshold: float = 0.5,
) -> BinaryMask:
    """Grayscale, resize down to ``input_size``, run the network, threshold
    (probability > threshold), and resize the mask back to the image size."""
    probs = predict_probabilities(model, image, input_size)
    small = BinaryMask((probs > threshold).astype(np.uint8))
    return resize_mask_nearest(small, image.width, image.height)


class MemberPredictor:
    """One trained member at its input size. Layers cache activations, so
    each calling thread gets a private copy of the network."""

    def __init__(self, network: EncoderDecoder, input_size: Tuple[int, int], threshold: float = 0.5) -> None:
        self.network = network
        self.input_size = tuple(input_size)
        self.threshold = threshold
        self._local = threading.local()
        self._owner = threading.get_ident()

    def _net(self) -> EncoderDecoder:
        if threading.get_ident() == self._owner:
            return self.network
        net = getattr(self._local, "net", None)
        if net is None:
            net = self._local.net = self.network.copy()
        return net

    def __call__(self, image: ImageU8) -> BinaryMask:
        return predict_single(self._net(), image, self.input_size, self.threshold)


def load_members(config: EnsembleConfig) -> List[MemberPredictor]:
    predictors = []
    for m in config.members:
        ckpt = load_checkpoint(m.checkpoint)
        predictors.append(MemberPredictor(ckpt.build_network(), m.input_size, config.threshold))
    return predictors


# ---------------------------------------------------------------------------
# selection and post-processing
# ---------------------------------------------------------------------------

def select_oracle(predictions: Sequence[BinaryMask], ground_truth: BinaryMask) -> int:
    """Index of the prediction with the highest Jaccard against the label; lowest index wins ties."""
    if not predictions:
        raise ValueError("no predictions to select from")
    scores = [jaccard(p, ground_truth) for p in predictions]
    return int(np.argmax(scores))


def select_consensus(predictions: Sequence[BinaryMask]) -> int:
    """Index of the prediction agreeing most (mean pairwise Jaccard) with the others."""
    if not predictions:
        raise ValueError("no predictions to select from")
    n = len(predictions)
    if n == 1:
        return 0
    table = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            table[i, j] = table[j, i] = jaccard(predictions[i], predictions[j])
    scores = (table.sum(axis=1) - 1.0) / (n - 1)
    return int(np.argmax(scores))


def postprocess(mask: BinaryMask, config: EnsembleConfig) -> BinaryMask:
    kw, kh = config.erosion_kernel
    if config.closing:
        mask = closing(mask, kw, kh)
    if config.erosion:
        mask = erode(mask, kw, kh)
    return mask


@dataclass
class MemberOutputs:
    raw: List[BinaryMask]
    selected: int
    final: BinaryMask


def _run_members(
    config: EnsembleConfig,
    image: ImageU8,
    ground_truth: Optional[BinaryMask],
    predictors: Sequence[Predictor],
) -> MemberOutputs:
    if config.selection == "oracle" and ground_truth is None:
        raise ConfigError("oracle selection needs a ground-truth mask")
    raw = [p(image) for p in predictors]
    if config.selection == "oracle":
        idx = select_oracle(raw, ground_truth)
    elif config.selection == "consensus":
        idx = select_consensus(raw)
    else:
        idx = 0
    return MemberOutputs(raw, idx, postprocess(raw[idx], config))


def ensemble_predict(
    config: EnsembleConfig,
    image: ImageU8,
    ground_truth: Optional[BinaryMask] = None,
    predictors: Optional[Sequence[Predictor]] = None,
) -> Tuple[BinaryMask, int]:
    """Predict with every member, pick one, post-process it.

    Selection looks at the raw member masks; erosion is applied once, to the
    chosen mask.
    """
    if predictors is None:
        predictors = load_members(config)
    out = _run_members(config, image, ground_truth, predictors)
    return out.final, out.selected


# ---------------------------------------------------------------------------
# evaluation reports
# ---------------------------------------------------------------------------

@dataclass
class ImageScore:
    id: str
    jaccard: float
    member: int
    member_jaccards: List[float] = field(default_factory=list)


@dataclass
class EvalReport:
    rows: List[ImageScore]

    def __post_init__(self) -> None:
        for r in self.rows:
            if not 0.0 <= r.jaccard <= 1.0:
                raise ValueError(f"{r.id}: jaccard {r.jaccard} outside [0, 1]")

    @property
    def count(self) -> int:
        return len(self.rows)

    @property
    def mean_jaccard(self) -> float:
        if not self.rows:
            return float("nan")
        return math.fsum(r.jaccard for r in self.rows) / len(self.rows)

    def member_counts(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for r in self.rows:
            counts[r.member] = counts.get(r.member, 0) + 1
        return dict(sorted(counts.items()))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n_members = max((len(r.member_jaccards) for r in self.rows), default=0)
            w.writerow(["id", "jaccard", "member"] + [f"member{m}_jaccard" for m in range(n_members)])
            for r in self.rows:
                w.writerow([r.id, repr(float(r.jaccard)), r.member] + [repr(float(j)) for j in r.member_jaccards])

    def summary_text(self, echo: Optional[Dict[str, object]] = None) -> str:
        lines = ["[summary]", f"mean_jaccard = {self.mean_jaccard!r}", f"count = {self.count}"]
        for m, c in self.member_counts().items():
            lines.append(f"selected_member_{m} = {c}")
        n_members = max((len(r.member_jaccards) for r in self.rows), default=0)
        for m in range(n_members):
            vals = [r.member_jaccards[m] for r in self.rows]
            lines.append(f"member_{m}_raw_mean_jaccard = {math.fsum(vals) / len(vals)!r}")
        if echo:
            lines.append("")
            lines.append("[config]")
            for k, v in echo.items():
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, echo: Optional[Dict[str, object]] = None) -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, summary_path = out_dir / "report.csv", out_dir / "summary.txt"
        self.write_csv(csv_path)
        summary_path.write_text(self.summary_text(echo), encoding="utf-8")
        return csv_path, summary_path


def read_report_csv(path) -> List[ImageScore]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        member_cols = [c for c in reader.fieldnames or () if c.startswith("member") and c.endswith("_jaccard")]
        return [
            ImageScore(r["id"], float(r["jaccard"]), int(r["member"]), [float(r[c]) for c in member_cols])
            for r in reader
        ]


def config_echo(config: EnsembleConfig) -> Dict[str, object]:
    return {
        "selection": config.selection,
        "threshold": config.threshold,
        "erosion": str(config.erosion).lower(),
        "erosion_kernel": "%dx%d" % config.erosion_kernel,
        "closing": str(config.closing).lower(),
        "sizes": ", ".join("%dx%d" % m.input_size for m in config.members),
        "checkpoints": ", ".join(m.checkpoint.name for m in config.members),
    }


def output_mask_name(entry_id: str, suffix: str = ".pgm") -> str:
    """``<id>_segmentation`` for challenge-style ids (``ISIC_<digits>``), else ``<id>_mask``."""
    parts = entry_id.split("_")
    if len(parts) == 2 and parts[0] == "ISIC" and parts[1].isdigit():
        return f"{entry_id}_segmentation{suffix}"
    return f"{entry_id}_mask{suffix}"


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def evaluate_ensemble(
    config: EnsembleConfig,
    manifest: Manifest,
    out_dir=None,
    predictors: Optional[Sequence[Predictor]] = None,
    overlays: bool = False,
    jobs: int = 1,
) -> EvalReport:
    """Per-image ensemble prediction scored against ground truth.

    With ``out_dir`` set, writes ``report.csv`` and ``summary.txt`` there
    (plus ``overlays/`` when requested).
    """
    if len(manifest) == 0:
        raise DataError("cannot evaluate an empty manifest")
    require_masks(manifest, "evaluation")
    if predictors is None:
        predictors = load_members(config)
    if overlays and out_dir is not None:
        (Path(out_dir) / "overlays").mkdir(parents=True, exist_ok=True)

    def score(entry: ManifestEntry) -> ImageScore:
        image, gt = entry.load()
        out = _run_members(config, image, gt, predictors)
        if overlays and out_dir is not None and image.channels == 3:
            save_image(overlay(image, out.final), Path(out_dir) / "overlays" / f"{entry.id}_overlay.ppm")
        return ImageScore(
            entry.id,
            jaccard(out.final, gt),
            out.selected,
            [jaccard(m, gt) for m in out.raw],
        )

    report = EvalReport(_map(score, manifest.entries, jobs))
    if out_dir is not None:
        report.write(out_dir, config_echo(config))
    return report


def evaluate_predictions(manifest: Manifest, predictions_dir, out_dir=None, suffix: str = ".pgm") -> EvalReport:
    """Score mask files already on disk (named by :func:`output_mask_name`)."""
    if len(manifest) == 0:
        raise DataError("cannot evaluate an empty manifest")
    require_masks(manifest, "evaluation")
    rows = []
    for entry in manifest.entries:
        gt = load_mask(entry.mask)
        pred_path = Path(predictions_dir) / output_mask_name(entry.id, suffix)
        pred = load_mask(pred_path)
        rows.append(ImageScore(entry.id, jaccard(pred, gt), 0, [jaccard(pred, gt)]))
    report = EvalReport(rows)
    if out_dir is not None:
        report.write(out_dir, {"predictions": Path(predictions_dir).name})
    return report


def predict_manifest(
    config: EnsembleConfig,
    manifest: Manifest,
    out_dir,
    predictors: Optional[Sequence[Predictor]] = None,
    overlays: bool = False,
    jobs: int = 1,
    suffix: str = ".pgm",
) -> List[Path]:
    """Write one {0, 255} mask per manifest image at its original size."""
    if config.selection == "oracle":
        require_masks(manifest, "oracle selection")
    if predictors is None:
        predictors = load_members(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(entry: ManifestEntry) -> Path:
        image, gt = entry.load()
        out = _run_members(config, image, gt, predictors)
        path = out_dir / output_mask_name(entry.id, suffix)
        save_mask(out.final, path)
        if overlays and image.channels == 3:
            save_image(overlay(image, out.final), out_dir / f"{entry.id}_overlay.ppm")
        return path

    return _map(run, manifest.entries, jobs)
