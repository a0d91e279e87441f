"""Command-line interface.

Subcommands: prepare, split, degrade, train, infer, evaluate, siti, report.
Global flags: --seed, --config <json>, --jobs.  The environment variable
S3PO_DATA_ROOT supplies the default dataset root.  Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datakit, report as report_mod, trainer as trainer_mod
from .degrade import DegradationConfig
from .errors import DataError, NumericError
from .losses import LossConfig
from .metrics import MetricConfig, si_ti
from .model import ModelConfig, S3PO
from .trainer import TrainConfig, load_checkpoint, model_from_checkpoint

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _data_root(args) -> Path:
    root = args.data or os.environ.get("S3PO_DATA_ROOT")
    if not root:
        raise DataError("no dataset root given (pass --data or set S3PO_DATA_ROOT)")
    return Path(root)


def _load_config_file(args) -> dict:
    if not args.config:
        return {}
    path = Path(args.config)
    if not path.is_file():
        raise DataError(f"config file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise DataError(f"config file {path} must contain a JSON object")
    return data


def _dataclass_with_overrides(cls, overrides: dict, context: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise DataError(f"unknown {context} config key(s): {', '.join(unknown)}")
    return overrides


def _build_model_config(args, file_cfg: dict) -> ModelConfig:
    overrides = dict(file_cfg.get("model", {}))
    _dataclass_with_overrides(ModelConfig, overrides, "model")
    for attr, key in [
        ("channels", "base_channels"),
        ("blocks", "num_blocks"),
        ("scale", "scale"),
    ]:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "cyclic", False):
        overrides["cyclic_enabled"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    return ModelConfig(**overrides)


def _build_degradation(args, file_cfg: dict) -> DegradationConfig:
    overrides = dict(file_cfg.get("degradation", {}))
    _dataclass_with_overrides(DegradationConfig, overrides, "degradation")
    mapping = [
        ("mode", "mode"),
        ("scale", "scale"),
        ("sigma", "blur_sigma"),
        ("kernel", "kernel_size"),
        ("pad_h", "horizontal_padding"),
        ("pad_v", "vertical_padding"),
    ]
    for attr, key in mapping:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return DegradationConfig(**overrides)


# --------------------------------------------------------------------------
# subcommand handlers


def _cmd_prepare(args) -> int:
    manifest = datakit.prepare(
        args.input,
        args.output,
        max_frames=args.max_frames,
        target=(args.target_width, args.target_height),
    )
    print(f"prepared {len(manifest.entries)} clips ({len(manifest.skipped)} skipped)")
    return EXIT_OK


def _cmd_split(args) -> int:
    manifest = datakit.load_manifest(_data_root(args))
    seed = args.seed if args.seed is not None else 0
    manifest = datakit.split(manifest, args.test_count, seed)
    train_n = len(manifest.split_ids("train"))
    test_n = len(manifest.split_ids("test"))
    print(f"split: {train_n} train / {test_n} test")
    return EXIT_OK


def _cmd_degrade(args) -> int:
    file_cfg = _load_config_file(args)
    cfg = _build_degradation(args, file_cfg)
    manifest = datakit.load_manifest(_data_root(args))
    manifest = datakit.make_lr_pairs(manifest, cfg)
    done = sum(1 for e in manifest.entries if e.lr_available.get(cfg.mode))
    print(f"degraded {done} clips with {cfg.mode} (errors: {len(manifest.lr_errors)})")
    return EXIT_OK


def _cmd_train(args) -> int:
    file_cfg = _load_config_file(args)
    model_cfg = _build_model_config(args, file_cfg)
    train_overrides = dict(file_cfg.get("train", {}))
    _dataclass_with_overrides(TrainConfig, train_overrides, "train")
    base = trainer_mod.pretrain_config if args.stage == "pretrain" else trainer_mod.adapt_config
    loss_cfg = LossConfig(
        beta=args.beta,
        weighted=(args.stage == "adapt") if args.weighted is None else args.weighted,
    )
    params = dict(
        epochs=args.epochs,
        lr_initial=args.lr,
        loss=loss_cfg,
        degradation=_build_degradation(args, file_cfg),
        seed=args.seed if args.seed is not None else 0,
    )
    if args.batch_size is not None:
        params["batch_size"] = args.batch_size
    params.update(train_overrides)
    train_cfg = base(**params)
    init = load_checkpoint(args.init) if args.init else None
    ckpt = trainer_mod.train(model_cfg, train_cfg, _data_root(args), init=init, out_dir=args.out)
    first = ckpt.loss_history[0] if ckpt.loss_history else float("nan")
    last = ckpt.loss_history[-1] if ckpt.loss_history else float("nan")
    print(
        f"trained {train_cfg.epochs} epochs ({len(ckpt.loss_history)} updates); "
        f"loss {first:.6g} -> {last:.6g}; checkpoint at {Path(args.out) / 'checkpoint'}"
    )
    return EXIT_OK


def _cmd_infer(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not (ckpt_path / "config.json").is_file():
        raise DataError(f"no checkpoint at {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    model = model_from_checkpoint(ckpt, cyclic_enabled=bool(args.cyclic))
    model.eval()
    lr_kind = args.lr_kind
    if lr_kind is None and ckpt.train_config is not None:
        lr_kind = ckpt.train_config.degradation.mode
    lr_kind = lr_kind or "bd"
    input_root = Path(args.input)
    clip_ids = report_mod.discover_clip_ids(input_root)
    out_root = Path(args.output)
    written = 0
    for clip_id in clip_ids:
        lr_dir = None
        base = report_mod.find_clip_frames_dir(input_root, clip_id)
        for cand in [
            input_root / "test" / clip_id / f"lr_{lr_kind}",
            input_root / "train" / clip_id / f"lr_{lr_kind}",
            input_root / clip_id / f"lr_{lr_kind}",
        ]:
            if cand.is_dir():
                lr_dir = cand
                break
        if lr_dir is None:
            lr_dir = base  # plain frame directory: treat frames as the LR input
        if lr_dir is None:
            raise DataError(f"{clip_id}: no lr_{lr_kind} frames under {input_root}")
        frames = datakit.load_clip_frames(lr_dir)
        outputs = model.forward_clip(frames)
        for i, frame in enumerate(outputs):
            datakit.save_frame_png(frame, out_root / clip_id / datakit.FRAME_NAME.format(i))
        written += len(outputs)
    print(f"super-resolved {len(clip_ids)} clips ({written} frames) -> {out_root}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    metric_cfg = MetricConfig(on_luma=not args.rgb)
    reports = report_mod.evaluate_directories(
        args.gt, args.pred, metric_cfg, jobs=max(args.jobs, 1)
    )
    baseline = None
    if args.baseline:
        clip_ids = [r.clip_id for r in reports]
        baseline = report_mod.bicubic_baseline_reports(
            args.gt, args.baseline, args.scale, metric_cfg, clip_ids
        )
    bundle = report_mod.ReportBundle(
        reports=reports,
        baseline_reports=baseline,
        config_echo={
            "gt": str(args.gt),
            "pred": str(args.pred),
            "on_luma": not args.rgb,
            "baseline": args.baseline,
            "scale": args.scale,
        },
        model_name=args.model_name,
    )
    out = Path(args.out)
    report_mod.write_frame_csv(reports, out / f"{args.model_name}_frames.csv")
    if baseline is not None:
        report_mod.write_frame_csv(baseline, out / "bicubic_frames.csv")
    report_mod.write_bundle_json(bundle, out / "report.json")
    means, _ = report_mod.overall_means(reports)
    print(
        f"evaluated {len(reports)} clips: "
        + ", ".join(f"{m}={means[m]:.4f}" for m in ("psnr", "ssim", "ws_psnr", "ws_ssim"))
    )
    return EXIT_OK


def _cmd_siti(args) -> int:
    root = Path(args.data) if args.data else _data_root(args)
    clip_ids = report_mod.discover_clip_ids(root)
    lines = ["clip_id,si,ti"]
    for clip_id in clip_ids:
        frames_dir = report_mod.find_clip_frames_dir(root, clip_id)
        stats = si_ti(datakit.load_clip_frames(frames_dir))
        lines.append(f"{clip_id},{stats.si!r},{stats.ti!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    eval_dir = Path(args.evaluation)
    report_path = eval_dir / "report.json"
    if not report_path.is_file():
        raise DataError(f"no report.json under {eval_dir} (run `s3po evaluate` first)")
    with open(report_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    models = payload.get("models", {})
    if not models:
        raise DataError("empty report bundle")
    rows = {}
    named = {}
    from .metrics import FrameMetrics, MetricReport

    for name, model_data in models.items():
        rows[name] = model_data["overall"]["means"]
        reports = []
        for clip_id, rep in sorted(model_data["clips"].items()):
            per_frame = [FrameMetrics(**fm) for fm in rep["per_frame"]]
            reports.append(MetricReport(clip_id=clip_id, per_frame=per_frame))
        named[name] = reports
    out_dir = Path(args.out) if args.out else eval_dir
    table = report_mod.write_markdown_table(rows, out_dir / "table.md")
    plots = report_mod.write_metric_plots(named, out_dir)
    print(f"wrote {table} and {len(plots)} plots")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s3po",
        description="360-degree video super-resolution: dataset prep, training, "
        "inference, and spherically weighted evaluation.",
    )
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument("--config", type=str, default=None, help="JSON config overrides")
    parser.add_argument("--jobs", type=int, default=1, help="parallel clip workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest raw clips into the dataset layout")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--max-frames", type=int, default=20)
    p.add_argument("--target-width", type=int, default=480)
    p.add_argument("--target-height", type=int, default=360)
    p.set_defaults(handler=_cmd_prepare)

    p = sub.add_parser("split", help="seeded train/test split of a prepared dataset")
    p.add_argument("--data", default=None)
    p.add_argument("--test-count", type=int, required=True)
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("degrade", help="generate LR pairs for every clip")
    p.add_argument("--data", default=None)
    p.add_argument("--mode", choices=["bi", "bd"], default=None)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--kernel", type=int, default=None)
    p.add_argument("--pad-h", dest="pad_h", choices=["wrap", "reflect"], default=None)
    p.add_argument("--pad-v", dest="pad_v", choices=["replicate", "reflect"], default=None)
    p.set_defaults(handler=_cmd_degrade)

    p = sub.add_parser("train", help="train a model on the prepared dataset")
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", choices=["pretrain", "adapt"], default="adapt")
    p.add_argument("--epochs", type=int, default=75)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--weighted", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--mode", choices=["bi", "bd"], default=None, help="degradation mode")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--kernel", type=int, default=None)
    p.add_argument("--init", default=None, help="checkpoint to initialize from")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("infer", help="super-resolve clips with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--cyclic", action="store_true", help="enable the cyclic dual-view variant")
    p.add_argument("--lr-kind", dest="lr_kind", choices=["bi", "bd"], default=None)
    p.set_defaults(handler=_cmd_infer)

    p = sub.add_parser("evaluate", help="compute metric reports for predictions")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", choices=["bi", "bd"], default=None)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--rgb", action="store_true", help="average over RGB instead of luma")
    p.add_argument("--model-name", dest="model_name", default="s3po")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("siti", help="spatial/temporal information per clip")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_siti)

    p = sub.add_parser("report", help="render tables and plots from an evaluation")
    p.add_argument("evaluation", help="directory written by `s3po evaluate`")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
