"""Command-line entry point: train, infer, eval, verify, count.

A thin shell over the library. Every command prints the fully resolved
config before doing anything else, so a captured log always says what ran.

Exit codes: 0 success, 1 check or runtime failure (a failed verify suite,
divergence, non-finite math), 2 usage error, 3 I/O error.
"""

import argparse
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data
from .checkpoint import load_checkpoint, load_state
from .config import ModelConfig, TrainConfig, configs_from_dict, configs_from_text, format_configs, parse_config_text
from .counting import count_flops, count_params
from .model import build
from .tensor import NonFiniteError
from .trainer import TrainingDiverged, evaluate, train
from .verify import SUITES, run_suite


class CommandError(Exception):
    """Carries the exit code for a failed command."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _usage(message):
    return CommandError(2, message)


def _io_error(message):
    return CommandError(3, message)


# ---------------------------------------------------------------------------
# Config resolution: defaults <- config file <- per-field flags


def _add_override_flags(parser):
    group = parser.add_argument_group("config overrides (any `key = value` config field)")
    for f in fields(ModelConfig) + fields(TrainConfig):
        group.add_argument(
            "--" + f.name.replace("_", "-"),
            dest="cfg_" + f.name,
            metavar="V",
            help=f"override config field {f.name}",
        )


def _read_text(path, what):
    try:
        return Path(path).read_text()
    except OSError as err:
        raise _io_error(f"cannot read {what} {path}: {err}") from None


def _resolve_configs(args):
    raw = {}
    if args.config is not None:
        text = _read_text(args.config, "config file")
        try:
            raw = parse_config_text(text)
        except ValueError as err:
            raise _usage(f"{args.config}: {err}") from None
    for f in fields(ModelConfig) + fields(TrainConfig):
        value = getattr(args, "cfg_" + f.name)
        if value is not None:
            raw[f.name] = value
    try:
        return configs_from_dict(raw)
    except ValueError as err:
        raise _usage(str(err)) from None


def _print_config(text, source):
    print(f"# resolved config ({source})")
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# Shared pieces


def _add_dataset_flags(parser):
    parser.add_argument("--data", metavar="DIR", help="paired dataset: DIR/degraded/*.png + DIR/clean/*.png")
    parser.add_argument("--manifest", metavar="FILE", help="restrict --data to the filenames listed here")
    parser.add_argument("--synthetic", type=int, metavar="N", help="procedural dataset with N pairs")
    parser.add_argument("--size", type=int, default=128, metavar="S", help="synthetic image size (default 128)")
    parser.add_argument("--tag", default="rain", metavar="TAG", help="synthetic degradation tag (default rain)")
    parser.add_argument("--data-seed", type=int, default=0, metavar="K", help="synthetic dataset seed (default 0)")


def _data_error(err):
    # unreadable files surface as ValueError from the loader but are I/O
    msg = str(err)
    return _io_error(msg) if "cannot read image" in msg else _usage(msg)


def _build_dataset(args):
    if (args.data is None) == (args.synthetic is None):
        raise _usage("exactly one of --data and --synthetic is required")
    if args.data is not None:
        try:
            return data.DirectoryPairs(args.data, manifest=args.manifest)
        except (OSError, ValueError) as err:
            raise _io_error(str(err)) from None
    if args.manifest is not None:
        raise _usage("--manifest only applies to --data")
    try:
        data.parse_tag(args.tag)
        return data.SyntheticPairs(args.synthetic, args.size, args.tag, seed=args.data_seed)
    except ValueError as err:
        raise _usage(str(err)) from None


def _load_model(ckpt_path):
    """Checkpoint -> (model in eval mode, embedded config text)."""
    try:
        config_text, records = load_checkpoint(ckpt_path)
    except (OSError, ValueError) as err:
        raise _io_error(f"cannot load checkpoint {ckpt_path}: {err}") from None
    try:
        model_cfg, _ = configs_from_text(config_text)
        model = build(model_cfg, seed=0)
        load_state(model, records)
    except ValueError as err:
        raise _io_error(f"checkpoint {ckpt_path} does not match its own config: {err}") from None
    model.eval()
    return model, config_text


def _format_record(rec):
    parts = [f"step {rec['step'] + 1:>6}", f"loss {rec['loss']:.4f}", f"lr {rec['lr']:.3e}"]
    if "psnr" in rec:
        parts.append(f"eval psnr {rec['psnr']:.2f} ssim {rec['ssim']:.4f}")
    if "skipped" in rec:
        parts.append(f"({rec['skipped']}, step skipped)")
    return "  ".join(parts)


# ---------------------------------------------------------------------------
# Commands


def _cmd_train(args):
    model_cfg, train_cfg = _resolve_configs(args)
    _print_config(format_configs(model_cfg, train_cfg), "train")
    dataset = _build_dataset(args)
    if args.out is not None:
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as err:
            raise _io_error(f"cannot create {args.out}: {err}") from None
    if args.resume is not None:
        # fail before the run starts, with the right exit class
        try:
            load_checkpoint(args.resume)
        except (OSError, ValueError) as err:
            raise _io_error(f"cannot load checkpoint {args.resume}: {err}") from None
    if args.synthetic is not None and args.size < train_cfg.crop:
        raise _usage(f"--size {args.size} is smaller than the training crop {train_cfg.crop}")
    model = build(model_cfg, seed=train_cfg.seed)
    try:
        result = train(
            model,
            dataset,
            train_cfg,
            out_dir=args.out,
            resume=args.resume,
            echo=lambda rec: print(_format_record(rec)),
        )
    except ValueError as err:
        raise _data_error(err) from None
    tail = f"done: {result.steps} steps, final loss {result.final_loss:.4f}"
    if result.best_step >= 0 and math.isfinite(result.best_psnr):
        tail += f", best held-out psnr {result.best_psnr:.2f} at step {result.best_step}"
    if result.skipped:
        tail += f", {result.skipped} skipped step(s)"
    print(tail)
    return 0


def _cmd_infer(args):
    model, config_text = _load_model(args.ckpt)
    _print_config(config_text, f"checkpoint {args.ckpt}")
    src = Path(args.input)
    if src.is_dir():
        paths = sorted(p for p in src.iterdir() if p.suffix.lower() == ".png")
        if not paths:
            raise _io_error(f"no .png files under {src}")
    elif src.is_file():
        paths = [src]
    else:
        raise _io_error(f"input {src} does not exist")
    try:
        os.makedirs(args.output, exist_ok=True)
    except OSError as err:
        raise _io_error(f"cannot create {args.output}: {err}") from None
    for path in paths:
        try:
            img = data.load_image(path)
        except ValueError as err:
            raise _io_error(str(err)) from None
        restored = model.restore(img[None]).data[0]
        out_path = Path(args.output) / path.name
        try:
            data.save_image(np.clip(restored, 0.0, 1.0), out_path)
        except OSError as err:
            raise _io_error(f"cannot write {out_path}: {err}") from None
        print(f"wrote {out_path}")
    return 0


def _cmd_eval(args):
    model, config_text = _load_model(args.ckpt)
    _print_config(config_text, f"checkpoint {args.ckpt}")
    dataset = _build_dataset(args)
    try:
        report = evaluate(model, dataset, luma_only=args.ycbcr)
    except ValueError as err:
        raise _data_error(err) from None
    for line in report.format_lines():
        print(line)
    return 0


def _cmd_verify(args):
    model_cfg, train_cfg = ModelConfig(), TrainConfig()
    _print_config(format_configs(model_cfg, train_cfg), "defaults; checks pin their own shapes")
    results = run_suite(args.suite, echo=print)
    failed = sum(1 for r in results if not r.passed)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_count(args):
    model_cfg, train_cfg = _resolve_configs(args)
    _print_config(format_configs(model_cfg, train_cfg), "count")
    model = build(model_cfg, seed=0)
    print()
    for line in count_params(model).format_lines():
        print(line)
    print()
    for line in count_flops(model, args.hw[0], args.hw[1]).format_lines():
        print(line)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _hw(value):
    parts = value.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected HxW like 256x256, got {value!r}")
    h, w = int(parts[0]), int(parts[1])
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"height and width must be positive, got {value!r}")
    return h, w


def _build_parser():
    parser = argparse.ArgumentParser(prog="hymir", description="Image restoration: train, apply, and check models.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a model, writing checkpoints and a metrics log")
    p.add_argument("--config", metavar="FILE", help="`key = value` config file (defaults apply when omitted)")
    p.add_argument("--out", metavar="DIR", help="where best.ckpt / last.ckpt / metrics.log go (omit for a dry run)")
    p.add_argument("--resume", metavar="CKPT", help="continue from this checkpoint")
    _add_dataset_flags(p)
    _add_override_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="restore images with a trained checkpoint")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--input", required=True, metavar="PATH", help="a .png file or a directory of them")
    p.add_argument("--output", required=True, metavar="DIR", help="restored images land here, same basenames")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="print per-image and mean PSNR / SSIM on a dataset")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--ycbcr", action="store_true", help="score the luma channel instead of RGB")
    _add_dataset_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify", help="run the built-in gradient and oracle suites")
    p.add_argument("--suite", choices=SUITES, default="all")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("count", help="itemized parameter and FLOP report for a config")
    p.add_argument("--config", metavar="FILE")
    p.add_argument("--hw", type=_hw, default=(256, 256), metavar="HxW", help="FLOP input size (default 256x256)")
    _add_override_flags(p)
    p.set_defaults(func=_cmd_count)

    return parser


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except CommandError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (NonFiniteError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
