"""``lesionseg`` command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure (non-finite values, divergence, failed gradient check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .augment import augment_sample
from .config import PipelineConfig, load_config, member_filename, parse_size, shipped_config
from .ensemble import evaluate_ensemble, evaluate_predictions, predict_manifest
from .errors import ConfigError, LesionSegError
from .imaging import overlay, save_image, save_mask
from .manifest import Manifest, ManifestEntry, load_manifest, require_masks
from .nn.checkpoint import save_checkpoint
from .nn.gradcheck import SUITES, format_table, timed_gradcheck
from .rng import derive_rng
from .synth import SynthSpec, generate_dataset
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_config(value: Optional[str], required: bool = True) -> Optional[PipelineConfig]:
    if value is None:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    path = Path(value)
    if not path.exists() and value in ("desk", "full", "desk.cfg", "full.cfg"):
        path = shipped_config(value if value.endswith(".cfg") else value + ".cfg")
    return load_config(path)


def _manifest(args) -> Manifest:
    if not args.manifest:
        raise ConfigError("--manifest is required for this command")
    return load_manifest(args.manifest)


def _jobs(args) -> int:
    return 1 if args.deterministic else max(1, args.jobs)


def _seed(args, cfg: Optional[PipelineConfig]) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.master_seed if cfg is not None else 0


def _say(args, text: str) -> None:
    if not getattr(args, "quiet", False):
        print(text, flush=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _resolve_config(args.config, required=False)
    spec = cfg.synth if cfg is not None else SynthSpec()
    if args.size:
        w, h = parse_size(args.size)
        spec = SynthSpec(width=w, height=h, hair_prob=spec.hair_prob, noise=spec.noise)
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    if not args.out:
        raise ConfigError("--out is required for synth")
    manifest = generate_dataset(args.out, args.count, spec, seed=_seed(args, cfg), prefix=args.prefix)
    _say(args, f"wrote {len(manifest)} samples and {manifest.path}")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _resolve_config(args.config)
    manifest = _manifest(args)
    require_masks(manifest, "augment")
    if not args.out:
        raise ConfigError("--out is required for augment")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args, cfg)
    n = 0
    for i, entry in enumerate(manifest.entries):
        image, mask = entry.load()
        for v in range(args.variants):
            aug_img, aug_mask = augment_sample(image, mask, cfg.augment, derive_rng(seed, v, i))
            stem = f"{entry.id}_v{v:02d}"
            save_image(aug_img, out / f"{stem}{'.ppm' if aug_img.channels == 3 else '.pgm'}")
            save_mask(aug_mask, out / f"{stem}_mask.pgm")
            if aug_img.channels == 3:
                save_image(overlay(aug_img, aug_mask, (255, 0, 0), 0.35), out / f"{stem}_preview.ppm")
            n += 1
    _say(args, f"wrote {n} augmented pairs to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args.config)
    manifest = _manifest(args)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = Path(args.out) if args.out else cfg.checkpoint_dir
    out.mkdir(parents=True, exist_ok=True)
    members = range(len(cfg.sizes)) if args.member is None else [args.member]
    for k in members:
        if not 0 <= k < len(cfg.sizes):
            raise ConfigError(f"--member {k} out of range (config lists {len(cfg.sizes)} sizes)")
        tcfg = cfg.train_config(k)
        stem = Path(member_filename(k, tcfg.input_size)).stem
        _say(args, f"training member {k} at {tcfg.input_size[0]}x{tcfg.input_size[1]}")
        ckpt, log = train(
            manifest,
            tcfg,
            cfg.network,
            checkpoint_dir=out,
            checkpoint_stem=stem,
            jobs=_jobs(args),
            progress=None if args.quiet else (lambda s: print("  " + s, flush=True)),
        )
        save_checkpoint(ckpt, out / f"{stem}.lsn")
        log.write_csv(out / f"{stem}_log.csv")
        _say(args, f"wrote {out / (stem + '.lsn')}")
    return EXIT_OK


def _ensemble(args, cfg: PipelineConfig):
    return cfg.ensemble_config(
        checkpoint_dir=Path(args.models) if args.models else None,
        selection=args.selection,
    )


def cmd_predict(args) -> int:
    cfg = _resolve_config(args.config)
    ens = _ensemble(args, cfg)
    if not args.out:
        raise ConfigError("--out is required for predict")
    out = Path(args.out)
    if args.image:
        if ens.selection == "oracle" and not args.mask:
            raise ConfigError("oracle selection needs ground truth: pass --mask or choose --selection consensus")
        manifest = Manifest(None, [ManifestEntry(Path(args.image), Path(args.mask) if args.mask else None)])
    else:
        manifest = _manifest(args)
    paths = predict_manifest(ens, manifest, out, overlays=args.overlays, jobs=_jobs(args), suffix=cfg.mask_suffix)
    _say(args, f"wrote {len(paths)} masks to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args.config)
    manifest = _manifest(args)
    if not args.out:
        raise ConfigError("--out is required for evaluate")
    if args.predictions:
        report = evaluate_predictions(manifest, args.predictions, args.out, suffix=cfg.mask_suffix)
    else:
        report = evaluate_ensemble(_ensemble(args, cfg), manifest, args.out,
                                   overlays=args.overlays, jobs=_jobs(args))
    print(f"mean jaccard {report.mean_jaccard:.6f} over {report.count} images")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results, seconds = timed_gradcheck(args.seed if args.seed is not None else 0, args.perturb)
    print(format_table(results, seconds))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {
    "synth": cmd_synth,
    "augment": cmd_augment,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lesionseg", description="Skin lesion segmentation pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="config file, or 'desk' / 'full' for the shipped ones")
        p.add_argument("--manifest", help="CSV manifest with an image,mask header")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=lambda s: int(s, 0), help="override the master seed (u64)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for per-image work")
        p.add_argument("--deterministic", action="store_true", help="force sequential execution")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic lesion dataset")
    common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", help="image size WxH (default from config, else 120x80)")
    p.add_argument("--prefix", default="synth")

    p = sub.add_parser("augment", help="write augmented variants with previews")
    common(p)
    p.add_argument("--variants", type=int, default=4)

    p = sub.add_parser("train", help="train the ensemble members listed in the config")
    common(p)
    p.add_argument("--member", type=int, help="train only this member index")

    for name, helptext in (("predict", "write masks for images"), ("evaluate", "score against ground truth")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--models", help="directory holding member checkpoints (overrides config)")
        p.add_argument("--selection", choices=("oracle", "consensus", "single"))
        p.add_argument("--overlays", action="store_true", help="also write overlay images")
        if name == "predict":
            p.add_argument("--image", help="single input image instead of --manifest")
            p.add_argument("--mask", help="ground truth for --image (oracle selection)")
        else:
            p.add_argument("--predictions", help="score existing mask files in this directory instead")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    common(p)
    p.add_argument("--perturb", choices=SUITES, help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except LesionSegError as exc:
        print(f"lesionseg {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"lesionseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
