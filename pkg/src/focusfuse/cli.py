"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
mismatched inputs), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import struct
import sys
import zlib
from pathlib import Path

import numpy as np

from .errors import DataError, FocusFuseError, NonFiniteError, ShapeError, WeightFormatError
from .fusion import fuse_pair, fuse_stack
from .imageio import ImageBuffer, load_image, rgb_to_gray, save_image
from .maps import FUSION_MODES, FusionConfig
from .metrics import FusionPair, evaluate
from .synth import GEOMETRIES, SynthSpec, synth_pair
from .training import TrainConfig, train
from .weights import load_weights, save_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="focusfuse",
                     description="Multi-focus image fusion via deep-feature activity maps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the autoencoder on a directory of images")
    p.add_argument("--data", required=True, help="directory of grayscale training images")
    p.add_argument("--out", required=True, help="output weight file (.sfw)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lambda", dest="ssim_weight", type=float, default=3.0,
                   help="weight of the structural term in the loss")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--crops", type=int, default=2, help="random crops per image per epoch")
    p.add_argument("--history", help="write per-epoch JSON-lines history here")

    p = sub.add_parser("fuse", help="fuse two registered images")
    p.add_argument("--weights", required=True)
    p.add_argument("images", nargs=2, metavar="IMG")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--mode", default="sf_dm", choices=FUSION_MODES)
    p.add_argument("--sf-radius", type=int, default=5)
    p.add_argument("--save-decision", help="write the final decision map here")
    p.add_argument("--save-intermediates", metavar="DIR",
                   help="dump activity maps and intermediate decision maps")

    p = sub.add_parser("stack", help="fuse an ordered stack of images one by one")
    p.add_argument("--weights", required=True)
    p.add_argument("images", nargs="+", metavar="IMG")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--mode", default="sf_dm", choices=FUSION_MODES)
    p.add_argument("--sf-radius", type=int, default=5)

    p = sub.add_parser("eval", help="score fusion modes over a directory of pairs")
    p.add_argument("--weights", required=True)
    p.add_argument("--pairs", required=True,
                   help="directory of name_A.png/name_B.png pairs (optional name_GT.png)")
    p.add_argument("--modes", default="sf_dm",
                   help="comma-separated fusion modes")
    p.add_argument("--report", required=True, help="output JSON report")
    p.add_argument("--csv", help="also write a mode/mean/first-places CSV table")
    p.add_argument("--sf-radius", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="generate a synthetic defocus pair with ground truth")
    p.add_argument("--image", required=True, help="sharp source image")
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--geometry", default="vertical-half", choices=GEOMETRIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("inspect", help="print the parameter table of a weight file")
    p.add_argument("--weights", required=True)
    return parser


def _load_gray(path) -> np.ndarray:
    buf = load_image(path)
    if buf.channels == 3:
        buf = rgb_to_gray(buf)
    return buf.to_float()


def _load_corpus(directory) -> list[np.ndarray]:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"training data directory not found: {directory}")
    paths = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".png", ".pgm", ".ppm"))
    if not paths:
        raise DataError(f"no .png/.pgm/.ppm images in {directory}")
    return [_load_gray(p) for p in paths]


def _cmd_train(args) -> int:
    corpus = _load_corpus(args.data)
    cfg = TrainConfig(ssim_weight=args.ssim_weight, base_lr=args.lr, batch_size=args.batch,
                      epochs=args.epochs, seed=args.seed, patch_size=args.patch,
                      crops_per_image=args.crops, history_path=args.history,
                      checkpoint_path=args.out)
    params, history = train(corpus, cfg)
    save_weights(params, args.out)
    last = history[-1]
    if last.get("diverged"):
        print("training diverged; last good checkpoint kept", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"trained {cfg.epochs} epochs; val_loss={last['val_loss']:.4f} "
          f"val_ssim={last['val_ssim']:.4f} -> {args.out}")
    return EXIT_OK


def _save_map(decision, path) -> None:
    save_image(ImageBuffer.from_float(decision.values), path)


def _cmd_fuse(args) -> int:
    params = load_weights(args.weights)
    img1 = load_image(args.images[0]).to_float()
    img2 = load_image(args.images[1]).to_float()
    cfg = FusionConfig(sf_radius=args.sf_radius, mode=args.mode,
                       keep_intermediates=bool(args.save_intermediates))
    result = fuse_pair(img1, img2, params, cfg)
    save_image(result.fused, args.out)
    if args.save_decision:
        if result.decision is None:
            raise DataError(f"mode {args.mode!r} does not produce a decision map")
        _save_map(result.decision, args.save_decision)
    if args.save_intermediates:
        outdir = Path(args.save_intermediates)
        outdir.mkdir(parents=True, exist_ok=True)
        inter = result.intermediates or {}
        for key in ("initial_map", "verified_map"):
            if key in inter:
                _save_map(inter[key], outdir / f"{key}.png")
        if result.decision is not None:
            _save_map(result.decision, outdir / "soft_map.png")
        if "fused_initial" in inter:
            save_image(inter["fused_initial"], outdir / "fused_initial.png")
        for key in ("sf1", "sf2"):
            if key in inter:
                values = inter[key].values
                peak = float(values.max())
                save_image(values / peak if peak > 0 else values, outdir / f"{key}.png")
    print(f"fused -> {args.out}")
    return EXIT_OK


def _cmd_stack(args) -> int:
    if len(args.images) < 2:
        raise _UsageError("stack needs at least two images")
    params = load_weights(args.weights)
    images = [load_image(p).to_float() for p in args.images]
    cfg = FusionConfig(sf_radius=args.sf_radius, mode=args.mode)
    fused = fuse_stack(images, params, cfg)
    save_image(fused, args.out)
    print(f"fused {len(images)} images -> {args.out}")
    return EXIT_OK


def _collect_pairs(directory) -> list[FusionPair]:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"pairs directory not found: {directory}")
    pairs = []
    for a_path in sorted(root.glob("*_A.*")):
        stem = a_path.name[:-len("_A" + a_path.suffix)]
        b_path = a_path.with_name(f"{stem}_B{a_path.suffix}")
        if not b_path.exists():
            continue
        gt_path = a_path.with_name(f"{stem}_GT{a_path.suffix}")
        gt = load_image(gt_path).to_float() if gt_path.exists() else None
        pairs.append(FusionPair(stem, load_image(a_path).to_float(),
                                load_image(b_path).to_float(), gt))
    if not pairs:
        raise DataError(f"no name_A/name_B pairs found in {directory}")
    return pairs


def _cmd_eval(args) -> int:
    params = load_weights(args.weights)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in FUSION_MODES:
            raise _UsageError(f"unknown mode {mode!r}; choose from {FUSION_MODES}")
    pairs = _collect_pairs(args.pairs)
    cfg = FusionConfig(sf_radius=args.sf_radius)
    report = evaluate(pairs, modes, params, cfg, jobs=args.jobs)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    if args.csv:
        report.write_csv(args.csv)
    for mode in modes:
        mean = report.means.get("qg", {}).get(mode)
        places = report.first_places.get("qg", {}).get(mode, 0)
        if mean is not None:
            print(f"{mode:10s} mean_qg={mean:.4f} first_places={places}")
    print(f"report -> {args.report}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    source = _load_gray(args.image)
    spec = SynthSpec(source, args.sigma, args.geometry, args.seed)
    img_a, img_b, truth, mask = synth_pair(spec)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    save_image(img_a, outdir / f"{stem}_A.png")
    save_image(img_b, outdir / f"{stem}_B.png")
    save_image(truth, outdir / f"{stem}_GT.png")
    save_image(mask, outdir / f"{stem}_MASK.png")
    print(f"synthetic pair -> {outdir}/{stem}_{{A,B,GT,MASK}}.png")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    params = load_weights(args.weights)
    blob = Path(args.weights).read_bytes()
    crc = struct.unpack("<I", blob[-4:])[0]
    computed = zlib.crc32(blob[4:-4]) & 0xFFFFFFFF
    print(f"file: {args.weights}")
    print(f"crc32: {crc:#010x} (verified: {crc == computed})")
    total = 0
    for name, tensor in params.named().items():
        shape = tuple(int(d) for d in tensor.shape)
        if name.endswith(".b"):
            shape = (shape[1],)
        count = int(np.prod(shape))
        total += count
        print(f"  {name:15s} {str(shape):20s} {count:7d}")
    print(f"total parameters: {total}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "fuse": _cmd_fuse,
    "stack": _cmd_stack,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, WeightFormatError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FocusFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
