"""Command-line entry point.

Exit codes: 0 success, 1 failed gradient check, 2 usage or configuration
error (including missing files), 3 numeric abort during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck
from .adapt import NumericAbort, TrainLog, target_adapt
from .io import (ConfigError, RunConfig, TensorFormatError, export_preview, read_tensor,
                 write_tensor)
from .metrics import evaluate
from .network import NetworkArch, atomic_write, forward, init_params, load_params, save_params
from .resample import GEOEYE, WORLDVIEW, BandShifts, SensorProfile
from .synth import PanWeights, SceneSpec, gen_scene, simulate_pair

log = logging.getLogger("frpan")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _shift(text):
    try:
        dx, dy = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'dx,dy', got {text!r}") from exc
    return dx, dy


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frpan", description="Full-resolution pansharpening toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value run configuration")
        p.add_argument("--preset", choices=(WORLDVIEW, GEOEYE),
                       help="sensor-like beta and learning rate")
        p.add_argument("--seed", type=int)
        return p

    p = command("synth", "generate a synthetic scene and its PAN/MS pair")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("H", "W"))
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--misalign", type=_shift, action="append", metavar="DX,DY",
                   help="per-band high-res misalignment; repeat once per band")
    p.add_argument("--boost", type=float, default=0.0, help="PAN detail boost")

    for name, help_text in (("pretrain", "train from scratch at full resolution"),
                            ("adapt", "target-adapt a network on one image")):
        p = command(name, help_text)
        p.add_argument("--pan", required=True)
        p.add_argument("--ms", required=True)
        p.add_argument("--weights", help="starting checkpoint (default: fresh init)")
        p.add_argument("--out", required=True, help="checkpoint to write")
        p.add_argument("--log", help="JSONL training log")
        p.add_argument("--iters", type=int)
        p.add_argument("--lr", type=float)
        if name == "adapt":
            p.add_argument("--mode", choices=("full-resolution", "reduced-resolution-wald"))
            p.add_argument("--output", help="also write the pansharpened tensor")

    p = command("pansharpen", "run a network forward pass")
    p.add_argument("--pan", required=True)
    p.add_argument("--ms", required=True)
    p.add_argument("--weights", help="checkpoint (default: fresh init)")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", help="PPM preview path")
    p.add_argument("--preview-bands", type=int, nargs=3, default=(2, 1, 0))

    p = command("evaluate", "quality report for a pansharpened image")
    p.add_argument("--pan", required=True)
    p.add_argument("--ms", required=True)
    p.add_argument("--fused", required=True)
    p.add_argument("--truth", help="ground-truth high-resolution MS")
    p.add_argument("--out", help="JSON report path (always printed)")

    p = command("gradcheck", "finite-difference audit of every differentiable op")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--tolerance", type=float, default=gradcheck.TOLERANCE)
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.preset:
        preset = SensorProfile.preset(args.preset)
        cfg.beta, cfg.lr = preset.beta, preset.learning_rate
    for attr in ("seed", "iters", "lr", "mode"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


def _load_pair(args):
    p0 = read_tensor(args.pan)
    m1 = read_tensor(args.ms)
    if p0.shape[0] != 1:
        raise ConfigError(f"{args.pan}: PAN must have one band, found {p0.shape[0]}")
    return m1, p0


def _params(args, bands, seed):
    if args.weights:
        if not Path(args.weights).exists():
            raise FileNotFoundError(f"checkpoint not found: {args.weights}")
        params = load_params(args.weights)
        if params.arch.bands != bands:
            raise ConfigError(f"{args.weights}: network has {params.arch.bands} bands, MS has {bands}")
        return params
    return init_params(NetworkArch.default(bands), seed=seed)


def _write_json(path, payload):
    atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


def _cmd_synth(args, cfg):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = args.size
    if h % cfg.ratio or w % cfg.ratio:
        raise ConfigError(f"size {h}x{w} is not divisible by the ratio {cfg.ratio}")
    profile = cfg.profile(args.bands)
    spec = SceneSpec(seed=cfg.seed, size=(h, w), bands=args.bands,
                     dynamic_range=cfg.dynamic_range)
    weights = PanWeights.uniform(args.bands, args.boost)
    m0 = gen_scene(spec)
    pair = simulate_pair(m0, profile, weights, args.misalign)
    write_tensor(out / "m0.pzt", m0)
    write_tensor(out / "p0.pzt", pair.p0)
    write_tensor(out / "m1.pzt", pair.m1)
    _write_json(out / "synth.json", {
        "seed": cfg.seed, "size": [h, w], "bands": args.bands,
        "pan_weights": weights.weights.tolist(), "boost": weights.boost,
        "ms_nyquist_gains": list(profile.ms_nyquist_gains),
        "pan_nyquist_gain": profile.pan_nyquist_gain,
        "shifts": [list(s) for s in pair.shifts.shifts],
        "files": {"m0": "m0.pzt", "p0": "p0.pzt", "m1": "m1.pzt"},
        "config": cfg.to_dict(),
    })
    print(f"wrote {out}/m0.pzt, p0.pzt, m1.pzt and synth.json")
    return EXIT_OK


def _train(args, cfg, pretraining):
    m1, p0 = _load_pair(args)
    profile = cfg.profile(m1.shape[0])
    params = _params(args, m1.shape[0], cfg.seed)
    iterations = args.iters if args.iters is not None else (
        cfg.pretrain_iters if pretraining else cfg.iters)
    config = cfg.adapt_config(iterations)
    if pretraining:
        config.mode = "full-resolution"
    t0 = time.perf_counter()
    try:
        adapted, train_log, fused = target_adapt(params, m1, p0, profile, config)
    except NumericAbort as exc:
        save_params(args.out, exc.params)
        if args.log:
            atomic_write(args.log, exc.train_log.to_jsonl().encode())
        print(f"numeric abort: {exc}; last good weights saved to {args.out}", file=sys.stderr)
        return EXIT_NUMERIC
    elapsed = time.perf_counter() - t0
    save_params(args.out, adapted)
    if args.log:
        atomic_write(args.log, train_log.to_jsonl().encode())
    if getattr(args, "output", None):
        write_tensor(args.output, fused)
    _write_json(Path(args.out).with_suffix(".json"), _train_report(train_log, cfg, config,
                                                                  elapsed))
    if train_log.losses:
        print(f"{len(train_log)} iterations in {elapsed:.1f} s: total loss "
              f"{train_log.losses[0].total:.4g} -> {train_log.losses[-1].total:.4g}")
    else:
        print("0 iterations: weights unchanged")
    return EXIT_OK


def _train_report(train_log: TrainLog, cfg, config, elapsed):
    shifts = train_log.shifts or BandShifts([])
    return {"iterations": config.iterations, "mode": config.mode, "seconds": elapsed,
            "shifts": [list(s) for s in shifts.shifts],
            "first": train_log.records()[0] if train_log.losses else None,
            "last": train_log.records()[-1] if train_log.losses else None,
            "config": cfg.to_dict()}


def _cmd_pansharpen(args, cfg):
    m1, p0 = _load_pair(args)
    params = _params(args, m1.shape[0], cfg.seed)
    fused = forward(params, m1, p0, cfg.ratio)
    write_tensor(args.out, fused)
    if args.preview:
        export_preview(fused, args.preview_bands, args.preview)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_evaluate(args, cfg):
    m1, p0 = _load_pair(args)
    fused = read_tensor(args.fused)
    truth = read_tensor(args.truth) if args.truth else None
    if fused.shape != (m1.shape[0], *p0.shape[1:]):
        raise ConfigError(f"{args.fused}: shape {fused.shape} does not match the PAN/MS pair")
    report = evaluate(fused, m1, p0, cfg.profile(m1.shape[0]), truth)
    text = report.to_json(config=cfg.to_dict())
    if args.out:
        atomic_write(args.out, (text + "\n").encode())
    print(text)
    return EXIT_OK


def _cmd_gradcheck(args, cfg):
    reports = gradcheck.run_suite(args.instances, args.size, cfg.seed)
    print(gradcheck.format_table(reports, args.tolerance))
    failed = [r.op for r in reports if not r.max_rel_error < args.tolerance]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "pretrain": lambda a, c: _train(a, c, True),
    "adapt": lambda a, c: _train(a, c, False),
    "pansharpen": _cmd_pansharpen,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        return _COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, TensorFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
