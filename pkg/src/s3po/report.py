"""Evaluation harness and reporting: metric tables (CSV/JSON/Markdown)
and per-clip bar charts comparing models.

All text outputs are byte-deterministic for identical inputs; plot files
may differ in encoder metadata only.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datakit import frame_files, load_clip_frames
from .degrade import resize_bicubic
from .erp_core import ErpFrame
from .errors import DataError
from .metrics import METRIC_NAMES, MetricConfig, MetricReport, clip_report

_METRIC_LABELS = {
    "psnr": "PSNR (dB)",
    "ssim": "SSIM",
    "ws_psnr": "WS-PSNR (dB)",
    "ws_ssim": "WS-SSIM",
}
_METRIC_FORMATS = {"psnr": "{:.2f}", "ssim": "{:.4f}", "ws_psnr": "{:.2f}", "ws_ssim": "{:.4f}"}


@dataclass
class ReportBundle:
    reports: list[MetricReport]
    baseline_reports: list[MetricReport] | None = None
    table_paths: list[Path] = field(default_factory=list)
    plot_paths: list[Path] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    model_name: str = "s3po"

    def named_reports(self) -> dict[str, list[MetricReport]]:
        named = {self.model_name: self.reports}
        if self.baseline_reports is not None:
            named["bicubic"] = self.baseline_reports
        return named


def find_clip_frames_dir(root, clip_id: str) -> Path | None:
    """Locate a clip's frame directory under flat or dataset layouts."""
    root = Path(root)
    candidates = [
        root / "test" / clip_id / "gt",
        root / "train" / clip_id / "gt",
        root / clip_id / "gt",
        root / clip_id,
    ]
    for cand in candidates:
        if cand.is_dir() and frame_files(cand):
            return cand
    return None


def discover_clip_ids(pred_root) -> list[str]:
    pred_root = Path(pred_root)
    if not pred_root.is_dir():
        raise DataError(f"prediction directory {pred_root} does not exist")
    ids = []
    for child in sorted(pred_root.iterdir()):
        if child.is_dir() and (frame_files(child) or (child / "gt").is_dir()):
            ids.append(child.name)
    if not ids:
        raise DataError(f"no clip directories under {pred_root}")
    return ids


def overall_means(reports: list[MetricReport]) -> tuple[dict[str, float], dict[str, int]]:
    """Mean over clips of the clip means; infinite clip means are excluded
    (count recorded).  An empty finite set yields infinity."""
    means: dict[str, float] = {}
    excluded: dict[str, int] = {}
    for name in METRIC_NAMES:
        values = [r.means[name] for r in reports]
        finite = [v for v in values if math.isfinite(v)]
        excluded[name] = len(values) - len(finite)
        means[name] = float(np.mean(finite)) if finite else math.inf
    return means, excluded


def evaluate_directories(
    gt_root,
    pred_root,
    cfg: MetricConfig | None = None,
    clip_ids: list[str] | None = None,
    jobs: int = 1,
) -> list[MetricReport]:
    """Per-clip metric reports for predictions against ground truth.

    Every clip under ``pred_root`` must have a matching ground-truth clip
    with the same frame count; all offenders are reported at once.
    """
    cfg = cfg or MetricConfig()
    ids = clip_ids if clip_ids is not None else discover_clip_ids(pred_root)
    problems = []
    pairs = []
    for clip_id in ids:
        gt_dir = find_clip_frames_dir(gt_root, clip_id)
        pred_dir = find_clip_frames_dir(pred_root, clip_id)
        if gt_dir is None:
            problems.append(f"{clip_id}: no ground-truth frames under {gt_root}")
            continue
        if pred_dir is None:
            problems.append(f"{clip_id}: no prediction frames under {pred_root}")
            continue
        n_gt, n_pred = len(frame_files(gt_dir)), len(frame_files(pred_dir))
        if n_gt != n_pred:
            problems.append(f"{clip_id}: {n_gt} GT frames vs {n_pred} predictions")
            continue
        pairs.append((clip_id, gt_dir, pred_dir))
    if problems:
        raise DataError("clip mismatches: " + "; ".join(problems))

    def one(pair):
        clip_id, gt_dir, pred_dir = pair
        return clip_report(clip_id, load_clip_frames(gt_dir), load_clip_frames(pred_dir), cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def bicubic_baseline_reports(
    gt_root,
    lr_mode: str,
    scale: int,
    cfg: MetricConfig | None = None,
    clip_ids: list[str] | None = None,
) -> list[MetricReport]:
    """Evaluate plain bicubic upscaling of the stored LR frames."""
    cfg = cfg or MetricConfig()
    gt_root = Path(gt_root)
    if clip_ids is None:
        clip_ids = discover_clip_ids(gt_root)
    reports = []
    for clip_id in clip_ids:
        gt_dir = find_clip_frames_dir(gt_root, clip_id)
        if gt_dir is None:
            raise DataError(f"{clip_id}: no ground-truth frames under {gt_root}")
        lr_dir = gt_dir.parent / f"lr_{lr_mode}"
        if not lr_dir.is_dir():
            raise DataError(f"{clip_id}: no lr_{lr_mode} frames next to {gt_dir}")
        gt_frames = load_clip_frames(gt_dir)
        upscaled = []
        for lr in load_clip_frames(lr_dir):
            up = resize_bicubic(lr.pixels, lr.height * scale, lr.width * scale)
            upscaled.append(ErpFrame(np.clip(up, 0.0, 1.0)))
        reports.append(clip_report(clip_id, gt_frames, upscaled, cfg))
    return reports


# --------------------------------------------------------------------------
# serialization


def _float_repr(v: float) -> str:
    return repr(float(v))


def write_frame_csv(reports: list[MetricReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["clip_id,frame_index,psnr,ssim,ws_psnr,ws_ssim"]
    for report in sorted(reports, key=lambda r: r.clip_id):
        for fm in report.per_frame:
            lines.append(
                f"{report.clip_id},{fm.frame_index},{_float_repr(fm.psnr)},"
                f"{_float_repr(fm.ssim)},{_float_repr(fm.ws_psnr)},{_float_repr(fm.ws_ssim)}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _report_dict(report: MetricReport) -> dict:
    return {
        "means": report.means,
        "excluded_inf": report.excluded_inf,
        "per_frame": [
            {
                "frame_index": fm.frame_index,
                "psnr": fm.psnr,
                "ssim": fm.ssim,
                "ws_psnr": fm.ws_psnr,
                "ws_ssim": fm.ws_ssim,
            }
            for fm in report.per_frame
        ],
    }


def write_bundle_json(bundle: ReportBundle, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    models = {}
    for name, reports in bundle.named_reports().items():
        means, excluded = overall_means(reports)
        models[name] = {
            "clips": {r.clip_id: _report_dict(r) for r in reports},
            "overall": {"means": means, "excluded_inf_clips": excluded},
        }
    payload = {"config": bundle.config_echo, "models": models}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def format_markdown_table(rows: dict[str, dict[str, float]]) -> str:
    """Comparison table with the best value per column bolded (ties all bold).

    Ties are decided on the displayed precision, so two models rounding to
    the same value are both highlighted.
    """
    if not rows:
        raise ValueError("empty table")
    header = "| Model | " + " | ".join(_METRIC_LABELS[m] for m in METRIC_NAMES) + " |"
    rule = "|---" * (len(METRIC_NAMES) + 1) + "|"
    formatted = {
        name: {
            m: ("inf" if math.isinf(values[m]) else _METRIC_FORMATS[m].format(values[m]))
            for m in METRIC_NAMES
        }
        for name, values in rows.items()
    }
    best = {}
    for m in METRIC_NAMES:
        col = [formatted[name][m] for name in rows]
        best[m] = "inf" if "inf" in col else max(col, key=float)
    lines = [header, rule]
    bold_enabled = len(rows) > 1
    for name, values in rows.items():
        cells = []
        for m in METRIC_NAMES:
            cell = formatted[name][m]
            if bold_enabled and cell == best[m]:
                cell = f"**{cell}**"
            cells.append(cell)
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_markdown_table(rows: dict[str, dict[str, float]], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_markdown_table(rows), encoding="utf-8")
    return path


def write_metric_plots(
    named_reports: dict[str, list[MetricReport]], out_dir, prefix: str = "compare"
) -> list[Path]:
    """One grouped bar chart per metric: a bar group per clip, a bar per
    model.  Infinite values are drawn at zero."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_names = list(named_reports)
    clip_ids = sorted({r.clip_id for reports in named_reports.values() for r in reports})
    paths = []
    for metric in METRIC_NAMES:
        fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(clip_ids)), 4.0))
        width = 0.8 / max(len(model_names), 1)
        xs = np.arange(len(clip_ids))
        for i, name in enumerate(model_names):
            by_clip = {r.clip_id: r.means[metric] for r in named_reports[name]}
            heights = [
                by_clip.get(cid, math.nan) if math.isfinite(by_clip.get(cid, math.nan)) else 0.0
                for cid in clip_ids
            ]
            ax.bar(xs + i * width, heights, width=width, label=name)
        ax.set_xticks(xs + width * (len(model_names) - 1) / 2)
        ax.set_xticklabels(clip_ids, rotation=45, ha="right")
        ax.set_ylabel(_METRIC_LABELS[metric])
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{prefix}_{metric}.png"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def render_report(bundle: ReportBundle, out_dir) -> ReportBundle:
    """Write the Markdown table and bar charts for a bundle."""
    if not bundle.reports:
        raise DataError("empty report bundle")
    out_dir = Path(out_dir)
    rows = {}
    for name, reports in bundle.named_reports().items():
        means, _ = overall_means(reports)
        rows[name] = means
    bundle.table_paths.append(write_markdown_table(rows, out_dir / "table.md"))
    bundle.plot_paths.extend(write_metric_plots(bundle.named_reports(), out_dir))
    return bundle
