"""Command-line entry point: ``boxgan <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 training divergence.
Every subcommand writes ``manifest.json`` (argv, config snapshot, seed, version)
into its ``--out`` directory; ``boxgan rerun --manifest <file>`` replays it.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .boxgeom import InvalidBoxError
from .diffmath.gabx import ContainerError
from .pipeline import (CheckpointError, ConfigError, DiagnosisError, DivergenceError, MetricsError, MetricsLog,
                       TrainConfig, augment, diagnose_balance, evaluate_conditioning, load_detector,
                       load_generator, load_state, make_sampler, pretrain_detector, random_box_iou_baseline,
                       train_step1, train_step2)
from .pipeline.diagnose import BalanceThresholds
from .plotting import render_svg
from .scenes import DatasetError, PlacementError, generate_dataset, load_external, parse_labels, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxgan", description="Box-conditioned GAN augmentation toolkit")
    parser.add_argument("--version", action="version", version=f"boxgan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic shapes dataset")
    _common(p)
    p.add_argument("--count", type=int, required=True)

    p = sub.add_parser("pretrain-det", help="train the grid detector")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("train1", help="Step 1: unconditional WGAN-GP")
    _common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("train2", help="Step 2: box-conditioned training with the position loss")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--step1", required=True, help="Step-1 checkpoint (.gabx)")
    p.add_argument("--detector", required=True, help="detector checkpoint (.gabx)")

    p = sub.add_parser("generate", help="generate labeled images for requested boxes")
    _common(p)
    p.add_argument("--ckpt", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--boxes", help="request file, lines 'class_id x1 y1 x2 y2'")
    src.add_argument("--preset", help="request sampler preset: scene, default, hard")
    p.add_argument("--count", type=int, help="images to write (defaults to the number of request lines)")

    p = sub.add_parser("eval", help="measure conditioning with a detector")
    _common(p)
    p.add_argument("--ckpt", help="generator checkpoint; omit for the untrained baseline")
    p.add_argument("--detector", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--baseline-pairs", type=int, default=0,
                   help="also estimate the random-box IoU baseline from this many pairs")

    p = sub.add_parser("diagnose", help="classify training balance from a metrics CSV")
    _common(p)
    p.add_argument("--metrics", required=True)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--gap-slope", type=float, default=BalanceThresholds.gap_slope)
    p.add_argument("--gen-slope", type=float, default=BalanceThresholds.gen_slope)
    p.add_argument("--band", type=float, default=BalanceThresholds.band)

    p = sub.add_parser("plot", help="SVG chart of real/fake scores and the Wasserstein estimate")
    _common(p)
    p.add_argument("--metrics", required=True)
    p.add_argument("--name", default="loss_curve.svg")

    p = sub.add_parser("rerun", help="replay a run from its manifest.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write to this directory instead of the recorded one")
    p.add_argument("--quiet", action="store_true")
    return parser


def _config(args, override: TrainConfig | None) -> TrainConfig:
    cfg = override if override is not None else (TrainConfig.load(args.config) if args.config else TrainConfig())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _manifest(out: Path, argv: list[str], command: str, cfg: TrainConfig, extra: dict | None = None) -> None:
    doc = {
        "argv": argv,
        "command": command,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": __version__,
    }
    if extra:
        doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr, flush=True)


def _dataset(path: str, cfg: TrainConfig):
    if not Path(path).is_dir():
        raise DatasetError(f"dataset directory {path} does not exist")
    data = load_external(path, cfg.scene.image_side)
    if not data:
        raise DatasetError(f"dataset {path} is empty")
    return data


def _read_requests(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    requests = parse_labels(text, path)
    if not requests:
        raise DatasetError(f"{path} holds no requests")
    return requests


def _progress_rows(args, every: int = 100):
    def report(row):
        if row.iter % every == 0:
            _say(args, f"iter {row.iter}: W={row.w_estimate:.4f} gp={row.grad_penalty:.4f} "
                       f"gen={row.gen_loss:.4f} pos={row.pos_loss:.4f}")
    return report


def _cmd_synth(args, cfg, out):
    if args.count < 0:
        raise UsageError("--count must be nonnegative")
    write_dataset(generate_dataset(cfg.scene, args.count, cfg.seed), out)
    _say(args, f"wrote {args.count} scenes to {out}")


def _cmd_pretrain(args, cfg, out):
    data = _dataset(args.data, cfg)

    def report(t, loss):
        if t % 250 == 0:
            _say(args, f"iter {t}: loss={loss:.4f}")

    _, rep = pretrain_detector(data, cfg, out, report)
    _say(args, f"holdout mean IoU {rep.mean_iou:.4f}, class accuracy {rep.class_accuracy:.4f}")


def _cmd_train1(args, cfg, out):
    train_step1(_dataset(args.data, cfg), cfg, out, _progress_rows(args))


def _cmd_train2(args, cfg, out):
    data = _dataset(args.data, cfg)
    detector = load_detector(args.detector, cfg.detector)
    train_step2(load_state(args.step1), data, detector, cfg, out, _progress_rows(args))


def _cmd_generate(args, cfg, out):
    generator = load_generator(args.ckpt, cfg.generator)
    if args.boxes:
        requests = _read_requests(args.boxes)
        for box, cls in requests:
            if cls >= cfg.detector.C:
                raise DatasetError(f"{args.boxes}: class id {cls} outside [0, {cfg.detector.C})")
        count = len(requests) if args.count is None else args.count
    else:
        try:
            requests = make_sampler(args.preset, cfg.scene.image_side, cfg.scene.n_classes)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if args.count is None:
            raise UsageError("--count is required with --preset")
        count = args.count
    if count < 0:
        raise UsageError("--count must be nonnegative")
    augment(generator, requests, count, out, cfg.seed)
    _say(args, f"wrote {count} labeled images to {out}")


def _cmd_eval(args, cfg, out):
    from .netzoo import Generator
    generator = load_generator(args.ckpt, cfg.generator) if args.ckpt else Generator(cfg.generator, seed=cfg.seed)
    detector = load_detector(args.detector, cfg.detector)
    from .pipeline.requests import SceneSampler
    sampler = SceneSampler(cfg.scene)
    rep = evaluate_conditioning(generator, detector, args.n, np.random.default_rng([cfg.seed, 61]), sampler)
    doc = rep.to_dict()
    if args.baseline_pairs > 0:
        doc["random_box_baseline"] = random_box_iou_baseline(sampler, args.baseline_pairs, cfg.seed)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "samples.csv").write_text(rep.table())
    _say(args, f"mean IoU {rep.mean_iou:.4f}, class accuracy {rep.class_accuracy:.4f}")


def _cmd_diagnose(args, cfg, out):
    log = MetricsLog.load(args.metrics)
    th = BalanceThresholds(args.gap_slope, args.gen_slope, args.band)
    regime = diagnose_balance(log, args.window, th)
    (out / "diagnosis.json").write_text(json.dumps({"regime": regime, "window": args.window}, sort_keys=True) + "\n")
    print(regime)


def _cmd_plot(args, cfg, out):
    log = MetricsLog.load(args.metrics)
    if len(log) == 0:
        raise MetricsError(f"{args.metrics}: no data rows to plot")
    (out / args.name).write_text(render_svg(log))
    _say(args, f"wrote {out / args.name}")


COMMANDS = {
    "synth": _cmd_synth,
    "pretrain-det": _cmd_pretrain,
    "train1": _cmd_train1,
    "train2": _cmd_train2,
    "generate": _cmd_generate,
    "eval": _cmd_eval,
    "diagnose": _cmd_diagnose,
    "plot": _cmd_plot,
}

DATA_ERRORS = (ConfigError, DatasetError, PlacementError, CheckpointError, ContainerError, MetricsError,
               DiagnosisError, InvalidBoxError, OSError)


def _strip_config(argv: list[str]) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--config":
            skip = True
            continue
        if a.startswith("--config="):
            continue
        out.append(a)
    return out


def _rerun(args) -> int:
    try:
        doc = json.loads(Path(args.manifest).read_text())
        argv, cfg = list(doc["argv"]), TrainConfig.from_dict(doc["config"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"boxgan: cannot replay {args.manifest}: {exc}", file=sys.stderr)
        return EXIT_DATA
    argv = _strip_config(argv)
    if args.out:
        argv = _strip_flag(argv, "--out") + ["--out", args.out]
    if args.quiet and "--quiet" not in argv:
        argv.append("--quiet")
    return run(argv, config_override=cfg)


def _strip_flag(argv: list[str], flag: str) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == flag:
            skip = True
        elif not a.startswith(flag + "="):
            out.append(a)
    return out


def run(argv: list[str] | None = None, config_override: TrainConfig | None = None) -> int:
    """Execute one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    if args.command == "rerun":
        return _rerun(args)
    try:
        cfg = _config(args, config_override)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _manifest(out, argv, args.command, cfg)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"boxgan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        where = f"; last checkpoint {exc.last_checkpoint}" if exc.last_checkpoint else ""
        print(f"boxgan: training diverged: {exc}{where}", file=sys.stderr)
        return EXIT_DIVERGED
    except DATA_ERRORS as exc:
        print(f"boxgan: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
