"""Quality metrics: PSNR, SSIM and their spherically weighted variants,
plus ITU-style SI/TI spatiotemporal complexity statistics.

The weighted metrics multiply per-pixel (or per-window) contributions by
the cosine latitude map so polar oversampling in the equirectangular
projection does not dominate the score.  All metrics operate on single
H x W luma planes in [0, 1] by default and are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .erp_core import DistortionMap, ErpFrame, rgb_to_luma

METRIC_NAMES = ("psnr", "ssim", "ws_psnr", "ws_ssim")


@dataclass
class MetricConfig:
    peak: float = 1.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    on_luma: bool = True

    def __post_init__(self):
        if self.peak <= 0:
            raise ValueError(f"peak must be positive, got {self.peak}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")


@dataclass
class ComplexityStats:
    """Clip-level SI/TI: maxima of the per-frame values."""

    si: float
    ti: float
    per_frame_si: list[float]
    per_frame_ti: list[float]


@dataclass
class FrameMetrics:
    frame_index: int
    psnr: float
    ssim: float
    ws_psnr: float
    ws_ssim: float

    def value(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class MetricReport:
    """Per-clip metric values: one record per frame plus means.

    Infinite PSNR values (identical frames) are excluded from the means;
    the number of exclusions is recorded per metric.  If every frame is
    excluded the mean itself is reported as infinity.
    """

    clip_id: str
    per_frame: list[FrameMetrics]
    means: dict[str, float] = field(default_factory=dict)
    excluded_inf: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.means:
            self.means, self.excluded_inf = _aggregate(self.per_frame)


def _aggregate(per_frame: list[FrameMetrics]) -> tuple[dict[str, float], dict[str, int]]:
    means: dict[str, float] = {}
    excluded: dict[str, int] = {}
    for name in METRIC_NAMES:
        values = [fm.value(name) for fm in per_frame]
        finite = [v for v in values if math.isfinite(v)]
        excluded[name] = len(values) - len(finite)
        means[name] = float(np.mean(finite)) if finite else math.inf
    return means, excluded


def _check_planes(gt: np.ndarray, hr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if gt.shape != hr.shape:
        raise ValueError(f"plane shapes differ: {gt.shape} vs {hr.shape}")
    if gt.ndim != 2:
        raise ValueError(f"expected 2-d planes, got shape {gt.shape}")
    return gt, hr


def psnr(gt: np.ndarray, hr: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the planes are identical."""
    cfg = cfg or MetricConfig()
    gt, hr = _check_planes(gt, hr)
    mse = float(np.mean((gt - hr) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.peak * cfg.peak / mse)


def ws_psnr(
    gt: np.ndarray, hr: np.ndarray, dmap: DistortionMap, cfg: MetricConfig | None = None
) -> float:
    """PSNR with the squared error weighted by the latitude map."""
    cfg = cfg or MetricConfig()
    gt, hr = _check_planes(gt, hr)
    w = dmap.weights
    if w.shape != gt.shape:
        raise ValueError(f"weight map shape {w.shape} does not match planes {gt.shape}")
    wmse = float(np.sum(w * (gt - hr) ** 2) / np.sum(w))
    if wmse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.peak * cfg.peak / wmse)


def _gaussian_window_1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation with a 1-d kernel along both axes, valid mode."""
    k = len(g)
    rows = np.zeros((a.shape[0] - k + 1, a.shape[1]), dtype=np.float64)
    for i, w in enumerate(g):
        rows += w * a[i : i + rows.shape[0], :]
    out = np.zeros((rows.shape[0], a.shape[1] - k + 1), dtype=np.float64)
    for j, w in enumerate(g):
        out += w * rows[:, j : j + out.shape[1]]
    return out


def _ssim_map(gt: np.ndarray, hr: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    if gt.shape[0] < cfg.ssim_window or gt.shape[1] < cfg.ssim_window:
        raise ValueError(
            f"planes {gt.shape} smaller than the {cfg.ssim_window}x{cfg.ssim_window} window"
        )
    c1 = (cfg.k1 * cfg.peak) ** 2
    c2 = (cfg.k2 * cfg.peak) ** 2
    g = _gaussian_window_1d(cfg.ssim_window, cfg.ssim_sigma)
    mu1 = _filter_valid(gt, g)
    mu2 = _filter_valid(hr, g)
    s11 = _filter_valid(gt * gt, g) - mu1 * mu1
    s22 = _filter_valid(hr * hr, g) - mu2 * mu2
    s12 = _filter_valid(gt * hr, g) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return num / den


def ssim(gt: np.ndarray, hr: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """Mean SSIM over valid (unpadded) Gaussian window positions."""
    cfg = cfg or MetricConfig()
    gt, hr = _check_planes(gt, hr)
    return float(np.mean(_ssim_map(gt, hr, cfg)))


def ws_ssim(
    gt: np.ndarray, hr: np.ndarray, dmap: DistortionMap, cfg: MetricConfig | None = None
) -> float:
    """SSIM map averaged with latitude weights sampled at window centers."""
    cfg = cfg or MetricConfig()
    gt, hr = _check_planes(gt, hr)
    if dmap.weights.shape != gt.shape:
        raise ValueError(
            f"weight map shape {dmap.weights.shape} does not match planes {gt.shape}"
        )
    smap = _ssim_map(gt, hr, cfg)
    half = cfg.ssim_window // 2
    centers = dmap.weights[half : half + smap.shape[0], half : half + smap.shape[1]]
    return float(np.sum(smap * centers) / np.sum(centers))


_SOBEL_SCALE = 255.0


def _sobel_magnitude(luma: np.ndarray) -> np.ndarray:
    """3x3 Sobel gradient magnitude on the interior (no boundary padding)."""
    f = luma
    gx = (f[:-2, 2:] + 2.0 * f[1:-1, 2:] + f[2:, 2:]) - (
        f[:-2, :-2] + 2.0 * f[1:-1, :-2] + f[2:, :-2]
    )
    gy = (f[2:, :-2] + 2.0 * f[2:, 1:-1] + f[2:, 2:]) - (
        f[:-2, :-2] + 2.0 * f[:-2, 1:-1] + f[:-2, 2:]
    )
    return np.sqrt(gx * gx + gy * gy)


def si_ti(clip) -> ComplexityStats:
    """Spatial/temporal information indices on 8-bit-scaled luma.

    Per frame, SI is the standard deviation of the Sobel gradient magnitude
    (interior pixels) and TI the standard deviation of the difference with
    the previous frame.  Clip values are the maxima; TI is 0 for single-frame
    clips.  Note TI measures variation of change: a uniform brightness step
    between frames yields TI = 0.
    """
    frames = getattr(clip, "frames", clip)
    if len(frames) == 0:
        raise ValueError("si_ti requires at least one frame")
    lumas = [rgb_to_luma(f) * _SOBEL_SCALE for f in frames]
    per_si = [float(np.std(_sobel_magnitude(l))) for l in lumas]
    per_ti = [
        float(np.std(lumas[i] - lumas[i - 1])) for i in range(1, len(lumas))
    ]
    ti = max(per_ti) if per_ti else 0.0
    return ComplexityStats(si=max(per_si), ti=ti, per_frame_si=per_si, per_frame_ti=per_ti)


def luma_planes(frame: ErpFrame, on_luma: bool = True) -> list[np.ndarray]:
    """Planes a metric is evaluated on: the luma plane, or all 3 channels."""
    if on_luma:
        return [rgb_to_luma(frame)]
    return [frame.pixels[..., c].astype(np.float64) for c in range(3)]


def frame_metrics(
    index: int,
    gt: ErpFrame,
    pred: ErpFrame,
    dmap: DistortionMap,
    cfg: MetricConfig | None = None,
) -> FrameMetrics:
    """All four metrics for one frame pair (mean over planes in RGB mode)."""
    cfg = cfg or MetricConfig()
    gt_planes = luma_planes(gt, cfg.on_luma)
    pred_planes = luma_planes(pred, cfg.on_luma)
    values = {name: [] for name in METRIC_NAMES}
    for g, p in zip(gt_planes, pred_planes):
        values["psnr"].append(psnr(g, p, cfg))
        values["ssim"].append(ssim(g, p, cfg))
        values["ws_psnr"].append(ws_psnr(g, p, dmap, cfg))
        values["ws_ssim"].append(ws_ssim(g, p, dmap, cfg))
    mean = {k: float(np.mean(v)) if all(map(math.isfinite, v)) else math.inf for k, v in values.items()}
    return FrameMetrics(index, mean["psnr"], mean["ssim"], mean["ws_psnr"], mean["ws_ssim"])


def clip_report(
    clip_id: str,
    gt_frames: list[ErpFrame],
    pred_frames: list[ErpFrame],
    cfg: MetricConfig | None = None,
) -> MetricReport:
    """Per-frame metrics and clip means for one clip."""
    cfg = cfg or MetricConfig()
    if len(gt_frames) != len(pred_frames):
        raise ValueError(
            f"clip {clip_id!r}: {len(gt_frames)} GT frames vs {len(pred_frames)} predictions"
        )
    if not gt_frames:
        raise ValueError(f"clip {clip_id!r} is empty")
    from .erp_core import build_distortion_map

    dmap = build_distortion_map(gt_frames[0].height, gt_frames[0].width)
    per_frame = [
        frame_metrics(i, g, p, dmap, cfg)
        for i, (g, p) in enumerate(zip(gt_frames, pred_frames))
    ]
    return MetricReport(clip_id=clip_id, per_frame=per_frame)
