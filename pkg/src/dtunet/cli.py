"""``dtu`` command-line interface: synth, train, predict, eval, corrupt, fuse."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_override
from .core import (
    CURVILINEAR,
    DatasetManifest,
    ManifestEntry,
    ProbabilityMap,
    SegmentationMask,
    load_image,
    load_mask,
    load_probmap,
    save_image,
    save_mask,
    save_probmap,
)
from .corruption import CorruptionConfig, corrupt
from .data.drive import load_drive
from .data.patches import PatchProtocol
from .data.synthetic import SyntheticSpec, generate_synthetic
from .fusion import FusionConfig, fuse
from .metrics import BettiConfig, evaluate
from .model import load_checkpoint
from .training import (
    Trainer,
    code_version,
    predict_labels,
    predict_probs,
    samples_from_manifest,
    split_samples,
    to_sample,
)

log = logging.getLogger("dtunet")

# published DRIVE numbers for the full model, shown next to a local run for reference
DRIVE_REFERENCE = {"frechet": 2.9316, "betti_error": 0.8597, "iou": 73.86}


def _write_run_manifest(path: Path, command: str, args: argparse.Namespace, **extra) -> None:
    doc = {
        "command": command,
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "code_version": code_version(),
        **extra,
    }
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _file_manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".run.json")


def _prepare_out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        image_size=(args.size, args.size),
        num_images=args.num_images,
        num_classes=args.num_classes,
        num_volumetric=args.num_volumetric,
        gap_probability=args.gap_probability,
        noise_sigma=args.noise_sigma,
        contrast=args.contrast,
        rng_seed=args.seed,
    )
    out = _prepare_out_dir(args.out)
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    entries = []
    for i, (image, mask) in enumerate(generate_synthetic(spec)):
        image_path = out / "images" / f"{i:04d}.png"
        mask_path = out / "masks" / f"{i:04d}.png"
        save_image(image, image_path)
        save_mask(mask, mask_path)
        entries.append(ManifestEntry(image_path, mask_path))
    DatasetManifest(spec.total_classes, spec.class_kinds, entries).save(out / "manifest.yaml")
    _write_run_manifest(out / "run_manifest.json", "synth", args, spec=spec.__dict__)
    print(f"wrote {len(entries)} samples to {out}")
    return 0


# ------------------------------------------------------------------ train


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = dict(parse_override(s) for s in args.set or [])
    if args.manifest:
        overrides["manifest"] = str(args.manifest)
    if args.out:
        overrides["out_dir"] = str(args.out)
    return cfg.with_overrides(overrides) if overrides else cfg


def _eval_window(cfg: RunConfig, samples) -> tuple[int | None, int | None]:
    """Sliding-window settings for images bigger than the training crop."""
    largest = max(max(s.labels.shape) for s in samples) if samples else 0
    if largest > cfg.patch.train_crop:
        return cfg.patch.test_window, cfg.patch.test_stride
    return None, None


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out_dir(cfg.out_dir)
    channels = cfg.model.in_channels
    if args.full_drive:
        train_set, test_set = load_drive(args.data_root)
        samples = [to_sample(s.image, s.mask, channels, s.name) for s in train_set]
        num_classes, kinds = 1, (CURVILINEAR,)
    else:
        if not cfg.manifest:
            raise SystemExit("train needs --manifest (or manifest in the config) unless --full-drive is given")
        manifest = DatasetManifest.load(cfg.manifest)
        samples = samples_from_manifest(manifest, channels)
        num_classes, kinds = manifest.num_classes, manifest.class_kinds
    train, val = split_samples(samples, cfg.val_fraction, cfg.seed)
    cfg.save(out / "config.yaml")
    trainer = Trainer(cfg, num_classes, out, kinds)
    if args.resume:
        trainer.resume(args.resume)
        log.info("resumed from %s at epoch %d step %d", args.resume, trainer.epoch, trainer.step)
    window, stride = _eval_window(cfg, samples)
    trainer.fit(train, val, max_steps=args.max_steps, window=window, stride=stride)
    print(f"trained {trainer.step} steps; checkpoints and losses.csv in {out}")
    if args.full_drive:
        _drive_report(trainer, cfg, test_set, out)
    return 0


def _drive_report(trainer: Trainer, cfg: RunConfig, test_set, out: Path) -> None:
    """Evaluate on the held-out DRIVE images and print the result beside the published one."""
    preds, gts = [], []
    for s in test_set:
        image = s.image.to_channels(cfg.model.in_channels)
        preds.append(predict_labels(trainer.model, image, cfg.fusion, cfg.patch.test_window, cfg.patch.test_stride))
        gts.append(s.mask.labels)
    report = evaluate(preds, gts, (CURVILINEAR,), cfg.betti)
    rows = [("frechet", report.frechet), ("betti_error", report.betti_error), ("iou", 100 * report.iou)]
    lines = ["metric,this_run,published"] + [f"{k},{v:.4f},{DRIVE_REFERENCE[k]}" for k, v in rows]
    (out / "drive_comparison.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


# ------------------------------------------------------------------ predict


def _inputs_from_args(args) -> list[Path]:
    paths = [Path(p) for p in args.images or []]
    if args.manifest:
        paths += [Path(e.image) for e in DatasetManifest.load(args.manifest).entries]
    if not paths:
        raise SystemExit("predict needs --images or --manifest")
    return paths


def cmd_predict(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    meta = payload["manifest"]
    if args.num_classes is not None and args.num_classes != model.num_classes:
        raise SystemExit(f"checkpoint has {model.num_classes} classes, {args.num_classes} requested")
    if args.manifest:
        wanted = DatasetManifest.load(args.manifest).num_classes
        if wanted != model.num_classes:
            raise SystemExit(f"checkpoint has {model.num_classes} classes, manifest declares {wanted}")
    run_cfg = meta.get("run_config") or {}
    patch = PatchProtocol(**run_cfg["patch"]) if "patch" in run_cfg else PatchProtocol()
    kinds = tuple(meta.get("class_kinds") or (CURVILINEAR,) * model.num_classes)
    fusion = FusionConfig(omega=args.omega)
    out = _prepare_out_dir(args.out)
    channels = model.texture_spec.in_channels
    for path in _inputs_from_args(args):
        image = load_image(path).to_channels(channels)
        # whole-image inference up to the training crop size, sliding windows beyond it
        window, stride = None, None
        if args.window or max(image.shape[1:]) > patch.train_crop:
            window = args.window or patch.test_window
            stride = args.stride or patch.test_stride
        p_tex, p_top = predict_probs(model, image, window, stride)
        fused = fuse(p_tex, p_top, fusion)
        stem = path.stem
        save_probmap(ProbabilityMap(p_tex.astype(np.float32)), out / f"{stem}_tex.probs")
        save_probmap(ProbabilityMap(p_top.astype(np.float32)), out / f"{stem}_top.probs")
        save_probmap(ProbabilityMap(fused.astype(np.float32)), out / f"{stem}_final.probs")
        labels = fused.argmax(axis=0).astype(np.uint8)
        save_mask(SegmentationMask(labels, model.num_classes, kinds), out / f"{stem}_mask.png")
    _write_run_manifest(out / "run_manifest.json", "predict", args, checkpoint_manifest=meta)
    return 0


# ------------------------------------------------------------------ eval


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.gt)
    pred_dir = Path(args.pred)
    pred_paths = [pred_dir / f"{Path(e.image).stem}_mask.png" for e in manifest.entries]
    missing = [p for p in pred_paths if not p.exists()]
    if missing:
        raise SystemExit("missing predictions:\n  " + "\n  ".join(map(str, missing)))
    preds = [load_mask(p, manifest.num_classes).labels for p in pred_paths]
    gts = [manifest.load_mask(e).labels for e in manifest.entries]
    betti = BettiConfig(args.betti_window, args.betti_stride, args.connectivity)
    report = evaluate(preds, gts, manifest.class_kinds, betti)
    out = _prepare_out_dir(args.out)
    (out / "metrics.csv").write_text(report.to_csv())
    _write_run_manifest(out / "run_manifest.json", "eval", args, report=report.to_dict())
    print(report.table())
    return 0


# ------------------------------------------------------------------ corrupt / fuse


def cmd_corrupt(args) -> int:
    mask = load_mask(args.mask)
    image = load_image(args.image).gray()
    if image.shape != mask.shape:
        raise SystemExit(f"image {image.shape} and mask {mask.shape} differ in size")
    if not 0 <= args.lam <= 1:
        raise SystemExit("--lambda must lie in [0, 1]")
    cfg = CorruptionConfig(patch_size=args.patch_size, rng_seed=args.seed, order=args.order)
    out = Path(args.out)
    if mask.labels.any():
        labels = corrupt(mask.labels, image, args.lam, cfg, np.random.default_rng(args.seed))
    else:
        labels = mask.labels
    if np.array_equal(labels, mask.labels):
        # nothing changed: copy the input so the result is byte-identical
        shutil.copyfile(args.mask, out)
        sidecar = Path(str(args.mask) + ".json")
        if sidecar.exists():
            shutil.copyfile(sidecar, Path(str(out) + ".json"))
    else:
        save_mask(SegmentationMask(labels.astype(np.uint8), mask.num_classes, mask.class_kinds), out)
    _write_run_manifest(_file_manifest_path(out), "corrupt", args)
    return 0


def cmd_fuse(args) -> int:
    p_tex = load_probmap(args.tex).probs.astype(np.float64)
    p_top = load_probmap(args.top).probs.astype(np.float64)
    fused = fuse(p_tex, p_top, FusionConfig(omega=args.omega))
    out = Path(args.out)
    save_probmap(ProbabilityMap(fused.astype(np.float32)), out)
    _write_run_manifest(_file_manifest_path(out), "fuse", args)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtu", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic curvilinear corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--num-images", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--num-volumetric", type=int, default=0)
    p.add_argument("--gap-probability", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--contrast", type=float, default=0.6)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset manifest or DRIVE")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry, e.g. loss.tau=0.2")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--full-drive", action="store_true", help="train on DRIVE and report beside published numbers")
    p.add_argument("--data-root", help="DRIVE root (defaults to $DTU_DATA_ROOT)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write probability maps and masks for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="*")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predicted masks against a ground-truth manifest")
    p.add_argument("--pred", required=True, help="directory holding <stem>_mask.png files")
    p.add_argument("--gt", required=True, help="ground-truth dataset manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--betti-window", type=int, default=BettiConfig.window)
    p.add_argument("--betti-stride", type=int, default=BettiConfig.stride)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=BettiConfig.connectivity)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corrupt", help="apply synthetic false and missed splits to a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", choices=("missed_first", "false_first"), default="missed_first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("fuse", help="fuse texture and topology probability maps")
    p.add_argument("--tex", required=True)
    p.add_argument("--top", required=True)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
