"""Epoch loop with per-mini-batch augmentation, SGD with momentum, logging."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .augment import AugmentSpec, augment_sample
from .ensemble import EvalReport, ImageScore, predict_single
from .errors import ConfigError, DataError, NumericalError
from .imaging import BinaryMask, ImageU8, resize_bilinear, resize_mask_nearest
from .losses import LOSSES, sgd_step
from .manifest import Manifest, require_masks
from .metrics import jaccard
from .morphology import erode
from .nn.checkpoint import ModelCheckpoint, save_checkpoint
from .nn.network import EncoderDecoder, NetworkConfig
from .rng import RngState, derive_rng, splitmix64_mix

SHUFFLE_STREAM = 0xFFFFFFFF
DROPOUT_SALT = 0xD1B54A32D192ED03
INIT_SALT = 0x8CB92BA72F3D8DD7


@dataclass(frozen=True)
class TrainConfig:
    input_size: Tuple[int, int] = (96, 64)
    loss: str = "soft_jaccard"
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 8
    master_seed: int = 0
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if min(self.input_size) < 1:
            raise ConfigError(f"input_size must be positive, got {self.input_size}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    jaccard: float
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        expected = len(self.records) + 1
        if record.epoch != expected:
            raise ValueError(f"epoch {record.epoch} logged out of order (expected {expected})")
        self.records.append(record)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "jaccard", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.jaccard), f"{r.seconds:.3f}"])

    def same_trajectory(self, other: "TrainLog") -> bool:
        """Equal up to wall-clock time."""
        strip = lambda log: [(r.epoch, r.loss, r.jaccard) for r in log.records]
        return strip(self) == strip(other)


def images_to_batch(images: Sequence[ImageU8]) -> np.ndarray:
    stack = np.stack([im.pixels for im in images]).astype(np.float32)
    return (stack / np.float32(255.0)).transpose(0, 3, 1, 2)


def masks_to_batch(masks: Sequence[BinaryMask]) -> np.ndarray:
    return np.stack([m.bits for m in masks]).astype(np.float32)[:, None]


def batch_jaccards(probs: np.ndarray, target: np.ndarray, threshold: float = 0.5) -> List[float]:
    out = []
    for p, y in zip(probs, target):
        out.append(jaccard(BinaryMask((p[0] > threshold).astype(np.uint8)), BinaryMask(y[0].astype(np.uint8))))
    return out


def initial_network(network_config: NetworkConfig, master_seed: int) -> EncoderDecoder:
    net = EncoderDecoder(network_config)
    net.init_parameters(splitmix64_mix(master_seed ^ INIT_SALT))
    return net


def _prepare(sample, spec: AugmentSpec, rng: RngState, size: Tuple[int, int]):
    image, mask = augment_sample(sample[0], sample[1], spec, rng)
    if image.channels == 1:
        image = ImageU8(np.repeat(image.pixels, 3, axis=2))
    return resize_bilinear(image, *size), resize_mask_nearest(mask, *size)


def train(
    manifest: Manifest,
    config: TrainConfig,
    network_config: NetworkConfig,
    checkpoint_dir=None,
    checkpoint_stem: str = "model",
    jobs: int = 1,
    progress: Optional[Callable[[str], None]] = None,
) -> Tuple[ModelCheckpoint, TrainLog]:
    """Train one network.

    Every epoch shuffles the samples with a seeded permutation; every sample
    is re-augmented from its original with ``derive_rng(seed, epoch,
    index)``, so results do not depend on ``jobs``.
    """
    if len(manifest) == 0:
        raise DataError("cannot train on an empty manifest")
    require_masks(manifest, "training")
    samples = []
    for entry in manifest.entries:
        try:
            samples.append(entry.load())
        except DataError as exc:
            raise DataError(f"unreadable training sample {entry.image}: {exc}") from exc
    if network_config.in_channels != 3:
        raise ConfigError("training feeds 3-channel images; set in_channels = 3")

    seed = config.master_seed
    net = initial_network(network_config, seed)
    loss_fn = LOSSES[config.loss]
    velocity: dict = {}
    log = TrainLog()
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = derive_rng(seed, epoch, SHUFFLE_STREAM).permutation(len(samples))
            loss_sum, jac_sum = 0.0, 0.0
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start:start + config.batch_size]
                tasks = [(samples[i], config.augment, derive_rng(seed, epoch, i), config.input_size) for i in idx]
                prepared = list(pool.map(lambda t: _prepare(*t), tasks)) if pool else [_prepare(*t) for t in tasks]
                x = images_to_batch([p[0] for p in prepared])
                y = masks_to_batch([p[1] for p in prepared])
                net.zero_grad()
                probs = net.forward(x, train=True, rng=derive_rng(seed ^ DROPOUT_SALT, epoch, b))
                loss, dprobs = loss_fn(probs, y)
                if not math.isfinite(loss):
                    raise NumericalError(
                        f"loss diverged (value {loss}) at epoch {epoch}, batch {b}; "
                        f"try a lower learning_rate than {config.learning_rate}"
                    )
                net.backward(dprobs)
                sgd_step(net.parameters(), net.gradients(), velocity,
                         config.learning_rate, config.momentum, config.weight_decay)
                loss_sum += loss * len(idx)
                jac_sum += math.fsum(batch_jaccards(probs, y))
            net.assert_finite()
            record = EpochRecord(epoch, loss_sum / len(samples), jac_sum / len(samples), time.perf_counter() - t0)
            log.append(record)
            if progress is not None:
                progress(
                    f"epoch {epoch}/{config.epochs} loss {record.loss:.4f} "
                    f"jaccard {record.jaccard:.4f} ({record.seconds:.1f}s)"
                )
            if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                ckpt = _checkpoint(net, config, epoch)
                save_checkpoint(ckpt, Path(checkpoint_dir) / f"{checkpoint_stem}_epoch{epoch:04d}.lsn")
    finally:
        if pool is not None:
            pool.shutdown()
    return _checkpoint(net, config, config.epochs), log


def _checkpoint(net: EncoderDecoder, config: TrainConfig, epoch: int) -> ModelCheckpoint:
    return ModelCheckpoint.from_network(
        net,
        epoch=epoch,
        seed=config.master_seed,
        input_size=list(config.input_size),
        loss=config.loss,
    )


def evaluate_model(
    checkpoint: ModelCheckpoint,
    manifest: Manifest,
    threshold: float = 0.5,
    input_size: Optional[Tuple[int, int]] = None,
    erosion_kernel: Optional[Tuple[int, int]] = None,
) -> EvalReport:
    """Single-model Jaccard report. ``input_size`` defaults to the size the
    checkpoint was trained at; erosion runs only when a kernel is given."""
    if len(manifest) == 0:
        raise DataError("cannot evaluate an empty manifest")
    require_masks(manifest, "evaluation")
    if input_size is None:
        input_size = tuple(checkpoint.metadata.get("input_size", (96, 64)))
    net = checkpoint.build_network()
    rows = []
    for entry in manifest.entries:
        image, gt = entry.load()
        pred = predict_single(net, image, input_size, threshold)
        if erosion_kernel is not None:
            pred = erode(pred, *erosion_kernel)
        j = jaccard(pred, gt)
        rows.append(ImageScore(entry.id, j, 0, [j]))
    return EvalReport(rows)
