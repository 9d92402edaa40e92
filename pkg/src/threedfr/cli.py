"""Command-line entry point: ``threedfr <subcommand> [flags]``.

Exit codes: 0 success, 1 verification or metric failure, 2 I/O or argument
error, 3 split-manifest invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, network
from .datasets import (
    SplitManifest,
    WindowSet,
    load_cdnet_video,
    make_window,
    synth_sequence,
    table2_manifest,
    write_image,
    write_sequence,
)
from .errors import IngestionError, ManifestError, ThreeDFRError
from .metrics import evaluate_split, ground_truth_predictor, write_report
from .trainer import SGDConfig, load_checkpoint, lr_at_epoch, save_checkpoint, train

EXIT_OK, EXIT_FAIL, EXIT_IO, EXIT_MANIFEST = 0, 1, 2, 3
REFERENCE_PARAM_COUNT = 126_450


class UsageError(Exception):
    pass


def _require_dir(path, flag):
    if path is None or not Path(path).is_dir():
        raise UsageError(f"{flag}: directory {path} does not exist")
    return Path(path)


def _manifest(args) -> SplitManifest:
    if args.manifest is None:
        return table2_manifest()
    if not Path(args.manifest).is_file():
        raise UsageError(f"--manifest: file {args.manifest} does not exist")
    return SplitManifest.read_csv(args.manifest).validate()


def _rows(manifest, role, category):
    rows = manifest.rows(role, category)
    if not rows:
        raise UsageError(f"manifest has no {role} videos" + (f" in {category}" if category else ""))
    return rows


def to_pgm_prob(prob: np.ndarray) -> np.ndarray:
    """Probabilities to 8-bit grey with round-half-up."""
    return np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def to_pgm_mask(prob: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(prob >= threshold, 255, 0).astype(np.uint8)


# -- subcommands ----------------------------------------------------------


def cmd_synth(args) -> int:
    seq = synth_sequence(args.width, args.height, args.frames, args.objects, args.noise, args.seed,
                         object_size=args.object_size, turn_prob=args.turn_prob)
    if args.video:
        seq.name = args.video
    try:
        base = write_sequence(seq, args.out, args.category)
    except OSError as exc:
        raise UsageError(f"cannot write to {args.out}: {exc}") from exc
    print(f"wrote {len(seq)} frames to {base}")
    return EXIT_OK


def param_table(params) -> list[tuple[str, tuple[int, ...], int]]:
    return [(layer.name, layer.weights.shape, layer.size) for layer in params]


def cmd_params(args) -> int:
    params = network.init_params(args.seed)
    total = network.param_count(params)
    print(f"{'layer':<16} {'weights (out,in,kt,kh,kw)':<28} {'params':>8}")
    for name, shape, size in param_table(params):
        print(f"{name:<16} {str(shape):<28} {size:>8}")
    gap = (total - REFERENCE_PARAM_COUNT) / REFERENCE_PARAM_COUNT
    print(f"total trainable parameters: {total}")
    print(f"reference count: {REFERENCE_PARAM_COUNT} (126.45K); gap {gap:+.2%}")
    print("configuration: RGB input, biases on every conv/transposed conv, MSFeat channels 8+8+3")
    return EXIT_OK


def cmd_train(args) -> int:
    root = _require_dir(args.data_root, "--data-root")
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    manifest = _manifest(args)
    rows = _rows(manifest, "train", args.category)
    seqs = [load_cdnet_video(root, r.category, r.video).load() for r in rows]
    params = network.init_params(args.seed)
    print(f"trainable parameters: {network.param_count(params)} (reference 126.45K)")
    samples = WindowSet(seqs, step=args.step)
    print(f"{len(samples)} training windows from {len(seqs)} videos")
    params, run = train(samples, SGDConfig(), epochs=args.epochs, seed=args.seed, params=params)
    ckpt = Path(args.checkpoint)
    save_checkpoint(params, ckpt)
    loss_csv = Path(args.out) / "loss.csv" if args.out else ckpt.with_suffix(".loss.csv")
    loss_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "loss"])
        cfg = SGDConfig()
        for e, loss in enumerate(run.loss_history):
            w.writerow([e + 1, lr_at_epoch(cfg, e), f"{loss:.8f}"])
    print(f"checkpoint written to {ckpt}; losses to {loss_csv}")
    return EXIT_OK


def _predictor(args):
    if args.oracle:
        return ground_truth_predictor
    if args.checkpoint is None or not Path(args.checkpoint).is_file():
        raise UsageError(f"--checkpoint: file {args.checkpoint} does not exist")
    params = load_checkpoint(args.checkpoint)
    return lambda w: network.predict(w.history, w.current, params)


def cmd_infer(args) -> int:
    root = _require_dir(args.data_root, "--data-root")
    if not (args.category and args.video and args.out):
        raise UsageError("--category, --video and --out are required")
    predict = _predictor(args)
    seq = load_cdnet_video(root, args.category, args.video).load()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for frame in seq.evaluable_frames():
        w = make_window(seq, frame)
        prob = w.crop(predict(w)[0, 0, 0])
        write_image(out / f"prob{frame:06d}.pgm", to_pgm_prob(prob))
        write_image(out / f"bin{frame:06d}.pgm", to_pgm_mask(prob, args.threshold))
        n += 1
    print(f"wrote {n} probability maps and masks to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    root = _require_dir(args.data_root, "--data-root")
    manifest = _manifest(args)
    if args.category:
        manifest = SplitManifest(manifest.rows(category=args.category))
    _rows(manifest, "test", None)
    predict = _predictor(args)
    metrics = evaluate_split(manifest, root, predict, args.threshold, step=args.step)
    out = Path(args.out) if args.out else Path("report.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(metrics, out)
    for (cat, video), f in metrics.video_scores().items():
        print(f"{cat}/{video}: F = {'undefined' if f is None else f'{f:.4f}'}")
    overall = metrics.overall
    print(f"overall F = {'undefined' if overall is None else f'{overall:.4f}'}; report at {out}")
    return EXIT_OK if overall is not None else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    ok = True
    for r in gradcheck.run_all(args.seed, args.instances, inject_fault=args.inject_fault):
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<16} instances={r.instances:<3} max_rel_err={r.max_error:.3e}")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_FAIL


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-root")
    common.add_argument("--manifest")
    common.add_argument("--checkpoint")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--epochs", type=int, default=60)
    common.add_argument("--threshold", type=float, default=0.5)
    common.add_argument("--out")
    common.add_argument("--video")
    common.add_argument("--category")
    common.add_argument("--step", type=int, default=1, help="use every n-th evaluable frame")
    common.add_argument("--oracle", action="store_true", help="predict the ground truth (harness check)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="threedfr", description="3D feature-reduction change detection")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic sequence in CDnet layout")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--frames", type=int, default=300)
    s.add_argument("--objects", type=int, default=2)
    s.add_argument("--noise", type=float, default=0.02)
    s.add_argument("--object-size", type=int, default=20)
    s.add_argument("--turn-prob", type=float, default=0.05)
    s.set_defaults(func=cmd_synth, category="synthetic")
    sub.add_parser("train", parents=[common], help="train on the manifest's train videos").set_defaults(func=cmd_train)
    sub.add_parser("infer", parents=[common], help="write probability maps for one video").set_defaults(func=cmd_infer)
    sub.add_parser("eval", parents=[common], help="score the manifest's test videos").set_defaults(func=cmd_eval)
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--instances", type=int, default=20)
    g.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    sub.add_parser("params", parents=[common], help="per-layer parameter table").set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth" and not args.out:
            raise UsageError("--out is required")
        return args.func(args)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (UsageError, IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ThreeDFRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
