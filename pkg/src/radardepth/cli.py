"""Command-line pipeline: synth | labels | train | align | eval.

Exit codes: 0 success, 2 bad input or config, 3 empty radar, 4 training
diverged, 5 no feasible alignment threshold, 6 empty evaluation.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, io
from .align import NoFeasibleThreshold, apply_alignment
from .geometry import SparseDepthImage
from .labelgen import LABEL_CSV_HEADER, LabelParams, PointLabels, build_labels, label_rows
from .metrics import CSV_HEADER, EmptyEvaluation, csv_row, evaluate_sweep
from .pipeline import align_frame, frame_sample, oracle_outputs, refiner_outputs
from .refiner import RefinerConfig
from .synth import SceneConfig, generate, read_bundle, write_bundle
from .train import TrainingDiverged, load_params, save_params, train, write_history

logger = logging.getLogger("radardepth")

EXIT_OK, EXIT_CONFIG, EXIT_NO_RADAR, EXIT_DIVERGED, EXIT_NO_THRESHOLD, EXIT_EMPTY_EVAL = 0, 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_CONFIG, f"config file not found: {p}")
    try:
        cfg = io.read_json(p)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"cannot parse config {p}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(EXIT_CONFIG, f"config {p} must hold a JSON object")
    return cfg


def _bundle(frame_dir):
    try:
        return read_bundle(frame_dir)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read frame bundle {frame_dir}: {exc}") from exc


def _write_manifest(out_dir: Path, args, inputs, outputs, seed, started: float) -> None:
    io.write_json(out_dir / f"manifest_{args.command}.json", {
        "command": args.command,
        "config": str(args.config) if args.config else None,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "wall_time_s": round(time.time() - started, 3),
        "version": __version__,
    })


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        scene = SceneConfig.from_dict(cfg)
        frame = generate(scene)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad scene config: {exc}") from exc
    out = Path(args.out)
    files = write_bundle(frame, out)
    _write_manifest(out, args, [args.config] if args.config else [], files, scene.seed, args.started)
    return EXIT_OK


def _label_params(args) -> LabelParams:
    try:
        return LabelParams.from_dict(_load_config(args.config))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad label params: {exc}") from exc


def cmd_labels(args) -> int:
    params = _label_params(args)
    bundle = _bundle(args.frame)
    if not bundle.radar:
        raise CliError(EXIT_NO_RADAR, f"{args.frame}: no radar point projects into the image")
    labels = build_labels(bundle.radar, bundle.lidar, params)
    out = Path(args.out) if args.out else Path(args.frame) / "labels.csv"
    io.write_csv(out, LABEL_CSV_HEADER, label_rows(bundle.radar, labels))
    _write_manifest(out.parent, args, [args.frame], [out], None, args.started)
    return EXIT_OK


def _read_labels(path: Path, n_points: int) -> list[PointLabels]:
    try:
        rows = io.read_csv(path, LABEL_CSV_HEADER)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read labels {path}: {exc}") from exc
    if len(rows) != n_points:
        raise CliError(EXIT_CONFIG, f"{path}: {len(rows)} labels for {n_points} radar points")
    return [PointLabels(int(r["conf_label"]), (int(r["du"]), int(r["dv"])), bool(int(r["is_valid"])))
            for r in rows]


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        config = RefinerConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad training config: {exc}") from exc
    dataset = []
    for frame_dir in args.frames:
        bundle = _bundle(frame_dir)
        labels = _read_labels(Path(frame_dir) / "labels.csv", len(bundle.radar))
        if bundle.radar:
            dataset.append(frame_sample(bundle.image, bundle.radar, labels, config.patch_size))
    if not any(s.valid.any() for s in dataset):
        raise CliError(EXIT_CONFIG, "no labeled radar point with LiDAR support in the given frames")
    try:
        params, history = train(dataset, config)
    except TrainingDiverged as exc:
        raise CliError(EXIT_DIVERGED, f"training diverged: {exc}") from exc
    out = Path(args.out)
    save_params(params, out / "params.bin")
    write_history(out / "history.csv", history)
    logger.info("loss %.6f -> %.6f over %d epochs", history[0].total, history[-1].total, config.epochs)
    outputs = [out / "params.bin", out / "params.bin.json", out / "history.csv"]
    _write_manifest(out, args, args.frames, outputs, config.seed, args.started)
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = _load_config(args.config)
    unknown = sorted(set(cfg) - {"tau", "bilinear", "label_params"})
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown align config keys: {unknown}")
    try:
        tau = float(cfg.get("tau", 0.5))
        label_params = LabelParams.from_dict(cfg.get("label_params", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad align config: {exc}") from exc
    if not 0.0 <= tau <= 1.0:
        raise CliError(EXIT_CONFIG, f"tau must lie in [0, 1], got {tau}")
    bilinear = bool(cfg.get("bilinear", False))
    bundle = _bundle(args.frame)
    if args.oracle_screen:
        conf, disp = oracle_outputs(bundle.radar, bundle.lidar, label_params)
    else:
        try:
            params = load_params(args.params)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(EXIT_CONFIG, f"cannot load parameters {args.params}: {exc}") from exc
        if "tau" not in cfg:
            tau = params.config.tau
        conf, disp = refiner_outputs(bundle.image, bundle.radar, params)
    try:
        alignment, anchors = align_frame(bundle.radar, conf, disp, bundle.mono_inv, tau, bilinear)
    except NoFeasibleThreshold as exc:
        raise CliError(EXIT_NO_THRESHOLD, f"alignment failed: {exc}") from exc
    depth, defined, nonpositive = apply_alignment(bundle.mono_inv, alignment)
    out = Path(args.out)
    io.write_pfm(out / "aligned.pfm", depth)
    io.write_csv(out / "anchors.csv", ["u", "v", "depth", "confidence"],
                 [(a.u, a.v, a.depth, a.confidence) for a in anchors])
    report = alignment.to_dict(undefined_pixels=int(np.count_nonzero(~defined)))
    report["nonpositive_pixels"] = nonpositive
    report["anchors"] = len(anchors)
    io.write_json(out / "alignment.json", report)
    outputs = [out / "aligned.pfm", out / "anchors.csv", out / "alignment.json"]
    _write_manifest(out, args, [args.frame] + ([args.params] if args.params else []), outputs, None, args.started)
    return EXIT_OK


def _parse_caps(text: str) -> list[float]:
    try:
        caps = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"bad --caps value {text!r}") from exc
    if not caps:
        raise CliError(EXIT_CONFIG, "--caps is empty")
    return sorted(caps)


def cmd_eval(args) -> int:
    try:
        pred = io.read_pfm(args.pred)
        gt = SparseDepthImage.from_depth(io.read_pfm(args.gt))
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read depth images: {exc}") from exc
    if pred.shape != gt.shape:
        raise CliError(EXIT_CONFIG, f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    caps = _parse_caps(args.caps)
    try:
        reports = evaluate_sweep(pred, gt, caps)
    except EmptyEvaluation as exc:
        raise CliError(EXIT_EMPTY_EVAL, f"evaluation failed: {exc}") from exc
    out = Path(args.out)
    defined = np.isfinite(pred) & (pred > 0) & gt.valid
    error = np.where(defined, np.abs(pred - gt.depth), 0.0)
    io.write_json(out / "eval.json", [r.to_dict() for r in reports])
    io.write_csv(out / "eval.csv", CSV_HEADER, [csv_row(r) for r in reports])
    io.write_pfm(out / "error.pfm", error)
    outputs = [out / "eval.json", out / "eval.csv", out / "error.pfm"]
    _write_manifest(out, args, [args.pred, args.gt], outputs, None, args.started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", default=None, help="JSON config for the subcommand")
    common.add_argument("--out", default=None, help="output directory (labels: output CSV)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="radardepth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic frame bundle")
    p.set_defaults(func=cmd_synth, needs_out=True)

    p = sub.add_parser("labels", parents=[common], help="confidence/displacement labels for a frame")
    p.add_argument("frame")
    p.set_defaults(func=cmd_labels, needs_out=False)

    p = sub.add_parser("train", parents=[common], help="train the refiner on labeled frames")
    p.add_argument("frames", nargs="+")
    p.set_defaults(func=cmd_train, needs_out=True)

    p = sub.add_parser("align", parents=[common], help="screen radar and align monocular inverse depth")
    p.add_argument("frame")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--params", default=None, help="trained refiner parameters (params.bin)")
    g.add_argument("--oracle-screen", action="store_true",
                   help="use LiDAR-derived labels instead of the network")
    p.set_defaults(func=cmd_align, needs_out=True)

    p = sub.add_parser("eval", parents=[common], help="depth metrics against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--caps", default="50,70,80", help="comma-separated range caps in meters")
    p.set_defaults(func=cmd_eval, needs_out=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.started = time.time()
    if args.needs_out and not args.out:
        print(f"radardepth {args.command}: --out is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"radardepth {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
