"""Low-resolution synthesis from ground-truth frames.

Two pipelines are provided: bicubic interpolation (BI) and blur
degradation (BD, Gaussian blur followed by decimation).  Frames are
horizontally cyclic, so the horizontal boundary defaults to wrap
padding; the vertical boundary is replicated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .erp_core import ErpFrame

_CUBIC_A = -0.5

_PAD_H = ("wrap", "reflect")
_PAD_V = ("replicate", "reflect")


@dataclass
class DegradationConfig:
    mode: str = "bi"  # "bi" | "bd"
    scale: int = 4
    blur_sigma: float = 1.6
    kernel_size: int = 13
    horizontal_padding: str = "wrap"
    vertical_padding: str = "replicate"

    def __post_init__(self):
        if self.mode not in ("bi", "bd"):
            raise ValueError(f"unknown degradation mode {self.mode!r}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.horizontal_padding not in _PAD_H:
            raise ValueError(f"horizontal_padding must be one of {_PAD_H}")
        if self.vertical_padding not in _PAD_V:
            raise ValueError(f"vertical_padding must be one of {_PAD_V}")


def _cubic(x: np.ndarray) -> np.ndarray:
    """Keys cubic kernel with a = -0.5, support [-2, 2]."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    a = _CUBIC_A
    inner = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    outer = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _fold_indices(idx: np.ndarray, n: int, mode: str) -> np.ndarray:
    """Map out-of-range sample indices into [0, n) per padding mode."""
    if mode == "wrap":
        return np.mod(idx, n)
    if mode == "replicate":
        return np.clip(idx, 0, n - 1)
    if mode == "reflect":
        if n == 1:
            return np.zeros_like(idx)
        period = 2 * (n - 1)
        folded = np.mod(idx, period)
        return np.where(folded >= n, period - folded, folded)
    raise ValueError(f"unknown padding mode {mode!r}")


def _resize_matrix(n_in: int, n_out: int, pad_mode: str) -> np.ndarray:
    """Dense (n_out x n_in) bicubic resampling matrix, antialiased when
    downscaling (kernel stretched by the scale factor), rows normalized."""
    scale = n_in / n_out
    kscale = max(scale, 1.0)
    support = 2.0 * kscale
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    left = np.floor(centers - support).astype(np.int64) + 1
    taps = int(np.ceil(2.0 * support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = _cubic((centers[:, None] - idx) / kscale) / kscale
    w /= w.sum(axis=1, keepdims=True)
    src = _fold_indices(idx, n_in, pad_mode)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(matrix, (np.repeat(np.arange(n_out), taps), src.ravel()), w.ravel())
    return matrix


def resize_bicubic(
    arr: np.ndarray,
    out_h: int,
    out_w: int,
    pad_h: str = "wrap",
    pad_v: str = "replicate",
) -> np.ndarray:
    """Separable bicubic resize of an H x W[x C] array to out_h x out_w."""
    a = np.asarray(arr, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = a.shape[:2]
    m_v = _resize_matrix(h, out_h, pad_v)
    m_h = _resize_matrix(w, out_w, pad_h)
    tmp = np.tensordot(m_v, a, axes=(1, 0))  # (out_h, W[, C])
    out = np.tensordot(m_h, tmp, axes=(1, 1))  # (out_w, out_h[, C])
    return np.swapaxes(out, 0, 1)


def gaussian_kernel_1d(sigma: float, size: int) -> np.ndarray:
    """Normalized 1-d Gaussian kernel; the separable 2-d product sums to 1."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _convolve_axis(a: np.ndarray, kernel: np.ndarray, axis: int, pad_mode: str) -> np.ndarray:
    half = len(kernel) // 2
    np_mode = {"wrap": "wrap", "reflect": "reflect", "replicate": "edge"}[pad_mode]
    pads = [(0, 0)] * a.ndim
    pads[axis] = (half, half)
    padded = np.pad(a, pads, mode=np_mode)
    n = a.shape[axis]
    out = np.zeros(a.shape, dtype=np.float64)
    index = [slice(None)] * a.ndim
    for k, wk in enumerate(kernel):
        index[axis] = slice(k, k + n)
        out += wk * padded[tuple(index)]
    return out


def _check_divisible(frame: ErpFrame, scale: int) -> None:
    if frame.height % scale != 0 or frame.width % scale != 0:
        raise ValueError(
            f"frame {frame.height}x{frame.width} not divisible by scale {scale}"
        )


def degrade_bi(frame: ErpFrame, cfg: DegradationConfig) -> ErpFrame:
    """Antialiased bicubic downsampling by cfg.scale, clamped to [0, 1]."""
    if cfg.mode != "bi":
        raise ValueError(f"degrade_bi called with mode {cfg.mode!r}")
    _check_divisible(frame, cfg.scale)
    out = resize_bicubic(
        frame.pixels,
        frame.height // cfg.scale,
        frame.width // cfg.scale,
        pad_h=cfg.horizontal_padding,
        pad_v=cfg.vertical_padding,
    )
    np.clip(out, 0.0, 1.0, out=out)
    return ErpFrame(out.astype(frame.pixels.dtype, copy=False), frame.colorspace)


def degrade_bd(frame: ErpFrame, cfg: DegradationConfig) -> ErpFrame:
    """Gaussian blur (separable, normalized) then decimation by cfg.scale.

    Decimation keeps every scale-th sample starting at index 0.
    """
    if cfg.mode != "bd":
        raise ValueError(f"degrade_bd called with mode {cfg.mode!r}")
    _check_divisible(frame, cfg.scale)
    kernel = gaussian_kernel_1d(cfg.blur_sigma, cfg.kernel_size)
    blurred = _convolve_axis(frame.pixels, kernel, 0, cfg.vertical_padding)
    blurred = _convolve_axis(blurred, kernel, 1, cfg.horizontal_padding)
    out = np.ascontiguousarray(blurred[:: cfg.scale, :: cfg.scale])
    np.clip(out, 0.0, 1.0, out=out)
    return ErpFrame(out.astype(frame.pixels.dtype, copy=False), frame.colorspace)


def degrade(frame: ErpFrame, cfg: DegradationConfig) -> ErpFrame:
    """Dispatch to the configured degradation pipeline."""
    if cfg.mode == "bi":
        return degrade_bi(frame, cfg)
    return degrade_bd(frame, cfg)
