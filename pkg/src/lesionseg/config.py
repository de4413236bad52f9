"""Pipeline configuration: an INI-style file with strict key checking.

Sections: ``[pipeline]``, ``[train]``, ``[network]``, ``[augment]``,
``[ensemble]`` and ``[synth]``. Every section and key is optional; unknown
sections or keys abort parsing. Relative paths resolve against the config
file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .augment import AugmentSpec
from .ensemble import EnsembleConfig, EnsembleMember
from .errors import ConfigError
from .nn.network import NetworkConfig
from .synth import SynthSpec
from .training import TrainConfig


def parse_size(text: str) -> Tuple[int, int]:
    """``"96x64"`` -> ``(96, 64)`` (width, height)."""
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) != 2:
        raise ConfigError(f"size must look like WxH, got {text!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"size must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise ConfigError(f"size must be positive, got {text!r}")
    return w, h


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _size_list(text: str) -> Tuple[Tuple[int, int], ...]:
    return tuple(parse_size(t) for t in text.split(",") if t.strip())


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise ConfigError(f"seed must fit in 64 bits, got {text!r}")
    return v


SCHEMA: Dict[str, Dict[str, Callable[[str], object]]] = {
    "pipeline": {"master_seed": _seed},
    "train": {
        "loss": str,
        "learning_rate": float,
        "momentum": float,
        "weight_decay": float,
        "epochs": int,
        "batch_size": int,
        "checkpoint_every": int,
    },
    "network": {
        "in_channels": int,
        "stage_channels": _int_list,
        "bottleneck_channels": int,
        "dropout_prob": float,
        "skip_connections": _bool,
    },
    "augment": {
        "rcpv_apply_prob": float,
        "fill_low": int,
        "fill_high": int,
        "center_sampling": str,
        "center_constraint": str,
        "flip_h_prob": float,
        "flip_v_prob": float,
        "crop_min_fraction": float,
        "grayscale_first": _bool,
    },
    "ensemble": {
        "sizes": _size_list,
        "checkpoint_dir": str,
        "selection": str,
        "threshold": float,
        "erosion": _bool,
        "erosion_kernel": parse_size,
        "closing": _bool,
        "mask_format": str,
    },
    "synth": {"width": int, "height": int, "hair_prob": float, "noise": float},
}


def member_filename(index: int, size: Tuple[int, int]) -> str:
    return f"member{index}_{size[0]}x{size[1]}.lsn"


@dataclass
class PipelineConfig:
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    sizes: Tuple[Tuple[int, int], ...] = ((500, 350), (450, 300), (400, 250))
    checkpoint_dir: Path = Path("models")
    selection: str = "oracle"
    threshold: float = 0.5
    erosion: bool = True
    erosion_kernel: Tuple[int, int] = (10, 10)
    closing: bool = False
    mask_format: str = "pgm"
    synth: SynthSpec = field(default_factory=SynthSpec)
    source: Optional[Path] = None

    def train_config(self, member: int) -> TrainConfig:
        return replace(self.train, input_size=self.sizes[member], master_seed=self.master_seed, augment=self.augment)

    def ensemble_config(self, checkpoint_dir: Optional[Path] = None, selection: Optional[str] = None) -> EnsembleConfig:
        root = Path(checkpoint_dir) if checkpoint_dir is not None else self.checkpoint_dir
        members = tuple(
            EnsembleMember(root / member_filename(i, s), s) for i, s in enumerate(self.sizes)
        )
        return EnsembleConfig(
            members=members,
            selection=selection or self.selection,
            threshold=self.threshold,
            erosion=self.erosion,
            erosion_kernel=self.erosion_kernel,
            closing=self.closing,
        )

    @property
    def mask_suffix(self) -> str:
        return "." + self.mask_format


def parse_config(text: str, base_dir: Optional[Path] = None, source: Optional[Path] = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text, source=str(source) if source else "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

    values: Dict[str, Dict[str, object]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            conv = SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[section][key] = conv(raw.strip())
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None

    cfg = PipelineConfig(source=source)
    try:
        pipe = values.get("pipeline", {})
        cfg.master_seed = pipe.get("master_seed", cfg.master_seed)
        if "network" in values:
            cfg.network = NetworkConfig(**values["network"])
        if "augment" in values:
            cfg.augment = AugmentSpec(**values["augment"])
        if "train" in values:
            cfg.train = TrainConfig(**values["train"])
        if "synth" in values:
            cfg.synth = SynthSpec(**values["synth"])
        ens = values.get("ensemble", {})
        cfg.sizes = ens.get("sizes", cfg.sizes)
        cfg.selection = ens.get("selection", cfg.selection)
        cfg.threshold = ens.get("threshold", cfg.threshold)
        cfg.erosion = ens.get("erosion", cfg.erosion)
        cfg.erosion_kernel = ens.get("erosion_kernel", cfg.erosion_kernel)
        cfg.closing = ens.get("closing", cfg.closing)
        cfg.mask_format = ens.get("mask_format", cfg.mask_format)
        cfg.checkpoint_dir = Path(ens.get("checkpoint_dir", cfg.checkpoint_dir))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    if not cfg.sizes:
        raise ConfigError("[ensemble] sizes must list at least one WxH")
    if cfg.mask_format not in ("pgm", "png"):
        raise ConfigError(f"mask_format must be pgm or png, got {cfg.mask_format!r}")
    # validates selection and kernel
    EnsembleConfig(members=(EnsembleMember(Path("."), cfg.sizes[0]),), selection=cfg.selection,
                   erosion_kernel=cfg.erosion_kernel)
    if base_dir is not None and not cfg.checkpoint_dir.is_absolute():
        cfg.checkpoint_dir = base_dir / cfg.checkpoint_dir
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent, source=path)


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``full.cfg`` or ``desk.cfg``)."""
    path = Path(__file__).parent / "configs" / name
    if not path.is_file():
        raise ConfigError(f"no shipped config named {name!r}")
    return path
