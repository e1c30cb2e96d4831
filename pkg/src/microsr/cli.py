"""Command-line front end: degrade, train, upscale, eval, report, gradcheck.

Exit codes: 0 on success, 1 for usage and configuration problems caught
before or while validating inputs, 2 for failures during the actual work
(diverged training, a failed gradient check, unexpected errors).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import images, metrics, weights_io
from .config import (ConfigError, resolve_train_config, write_resolved_config)
from .gradcheck import run_gradient_suite
from .images import ImageIOError, ManifestError
from .trainer import TrainingDiverged, load_generator, run_training

log = logging.getLogger("microsr.cli")

IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg", ".bmp")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_degrade(args) -> int:
    in_dir = Path(args.input)
    if not in_dir.is_dir():
        raise ConfigError(f"input directory {in_dir} does not exist")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    files = sorted(p for p in in_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
    if not files:
        raise ConfigError(f"no images found in {in_dir}")

    root = Path(os.path.commonpath([in_dir.resolve(), out_dir.resolve()]))
    entries = []
    for path in files:
        w, h = images.image_dimensions(path)
        if w % images.SCALE or h % images.SCALE:
            print(f"skipping {path.name}: {w}x{h} not divisible by {images.SCALE}")
            continue
        hr = images.load_image(path)
        lr = images.bicubic_resize(hr, w // images.SCALE, h // images.SCALE)
        lr_path = out_dir / f"{path.stem}_lr.png"
        images.save_image(lr, lr_path)
        entries.append(images.ManifestEntry(hr_path=path.resolve(),
                                            lr_path=lr_path.resolve()))
        print(f"degraded {path.name}: {w}x{h} -> {w // images.SCALE}x{h // images.SCALE}")
    if not entries:
        raise ConfigError(f"no usable images in {in_dir} (all were skipped)")

    manifest = images.DatasetManifest(scale=images.SCALE, root=root, entries=entries)
    manifest_path = out_dir / "manifest.txt"
    images.write_manifest(manifest, manifest_path)
    print(f"wrote {manifest_path} with {len(entries)} image(s)")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_train_config(args.config, args.set or [])
    manifest = images.parse_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    result = run_training(manifest, cfg, out_dir, resume_from=args.resume)
    print(f"final weights: {result.final_weights}")
    print(f"loss log: {result.log_path}")
    return 0


def cmd_upscale(args) -> int:
    weights, arch = load_generator(args.weights)
    lr = images.load_image(args.input)
    sr = metrics.super_resolve(lr, weights, arch)
    images.save_image(sr, args.output)
    print(f"wrote {args.output} ({sr.width}x{sr.height})")
    return 0


def cmd_eval(args) -> int:
    manifest = images.parse_manifest(args.manifest)
    weights, arch = (None, None)
    if args.mode == "network":
        if args.weights is None:
            raise ConfigError("--weights is required in network mode")
        weights, arch = load_generator(args.weights)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.evaluate_dataset(manifest, weights, arch, mode=args.mode,
                                      out_dir=out_dir if args.dump_images else None)
    label = args.label or args.mode
    (out_dir / "report.json").write_text(metrics.report_to_json(report, label=label),
                                         encoding="utf-8")
    text = metrics.format_report(report, metrics.REFERENCE_RESULTS)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    if report.entries:
        print(f"evaluated {len(report.entries)} image(s): "
              f"mean PSNR {report.mean_psnr:.4f} dB, mean SSIM {report.mean_ssim:.6f}")
    if report.failures and not report.entries:
        raise RuntimeError("every image in the manifest failed evaluation")
    return 0


def cmd_report(args) -> int:
    blocks = []
    for path in args.reports:
        text = Path(path).read_text(encoding="utf-8")
        label, report = metrics.report_from_json(text)
        title = label or Path(path).stem
        blocks.append(f"== {title} ==\n{metrics.format_report(report)}")
    blocks.append(metrics.format_reference_table())
    merged = "\n".join(blocks)
    if args.out:
        Path(args.out).write_text(merged, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(merged, end="")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "ok " if r.ok else "FAIL"
        print(f"{status} {r.name:<24} max_err {r.max_error:.3e}  tol {r.tolerance:.0e}")
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    if failed:
        raise RuntimeError(f"{len(failed)} gradient check(s) exceeded tolerance")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microsr",
                                     description="4x single-image super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="bicubic-downscale a folder of HR images "
                                       "and write a training manifest")
    p.add_argument("--input", required=True, help="directory of HR images")
    p.add_argument("--out", required=True, help="output directory for LR images")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="run two-phase training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value, e.g. --set arch.num_rrdb=2")
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("upscale", help="4x upscale one image with trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("eval", help="score a manifest with PSNR and SSIM")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--weights", default=None)
    p.add_argument("--mode", choices=("network", "bicubic", "nearest"),
                   default="network")
    p.add_argument("--label", default=None, help="label stored in report.json")
    p.add_argument("--dump-images", action="store_true",
                   help="also write the reconstructed images")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge metric JSON files into one table")
    p.add_argument("reports", nargs="+", help="report.json files from eval runs")
    p.add_argument("--out", default=None, help="write the table here instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=1234)
    p.set_defaults(func=cmd_gradcheck)

    return parser


USAGE_ERRORS = (ConfigError, ManifestError, ImageIOError, weights_io.ArchiveError,
                ValueError, FileNotFoundError, NotADirectoryError, IsADirectoryError)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
