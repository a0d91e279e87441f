"""Equirectangular geometry and pixel primitives.

Shared building blocks for the rest of the package: the cosine latitude
weight map, cyclic (left/right half) swapping, pixel shuffle/unshuffle,
BT.601 luma conversion and half-pixel bilinear upsampling.  Everything
here is a pure function on numpy arrays and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

COLORSPACES = ("rgb", "ycbcr")

# BT.601 limited-range luma coefficients (8-bit offsets folded in below).
_LUMA_R = 65.481
_LUMA_G = 128.553
_LUMA_B = 24.966


@dataclass
class ErpFrame:
    """One equirectangular video frame as an H x W x 3 float array.

    Pixel values are expected in [0, 1] for ingested content; model
    outputs may transiently leave that range and are only clamped when
    serialized to 8-bit images.
    """

    pixels: np.ndarray
    colorspace: str = "rgb"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"frame pixels must be HxWx3, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.floating):
            raise ValueError(f"frame pixels must be floating point, got {px.dtype}")
        if not np.isfinite(px).all():
            raise ValueError("frame pixels must be finite")
        if self.colorspace not in COLORSPACES:
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_uint8(cls, data: np.ndarray, colorspace: str = "rgb") -> "ErpFrame":
        """Ingest 8-bit image data, normalizing to [0, 1] float32."""
        arr = np.asarray(data)
        if arr.dtype != np.uint8:
            raise ValueError(f"from_uint8 expects uint8 data, got {arr.dtype}")
        return cls(arr.astype(np.float32) / np.float32(255.0), colorspace)

    def to_uint8(self) -> np.ndarray:
        """Serialize to 8-bit, clamping to [0, 1] first."""
        clipped = np.clip(self.pixels, 0.0, 1.0)
        return np.round(clipped * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class DistortionMap:
    """Per-pixel latitude weights; constant along each row, in (0, 1]."""

    weights: np.ndarray = field(repr=False)

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]


def build_distortion_map(height: int, width: int) -> DistortionMap:
    """Cosine-of-latitude weight map for an equirectangular frame.

    Row i (zero-based) gets weight cos((i + 0.5 - height/2) * pi / height),
    repeated across all columns.  The map is vertically symmetric, strictly
    positive, and peaks at the equator rows.
    """
    if height < 1 or width < 1:
        raise ValueError(f"map dimensions must be positive, got {height}x{width}")
    i = np.arange(height, dtype=np.float64)
    row = np.cos((i + 0.5 - height / 2.0) * np.pi / height)
    weights = np.repeat(row[:, None], width, axis=1)
    return DistortionMap(weights)


def cyclic_swap(frame):
    """Swap the left and right halves of a frame or plane.

    Exploits the horizontal continuity of equirectangular content: after the
    swap, the original left/right edges meet in the middle as a continuous
    scene.  The operation is an involution for even widths and is rejected
    for odd widths, where `two equal halves' is undefined.

    Accepts an ErpFrame (returns ErpFrame) or a bare H x W[x C] array.
    """
    if isinstance(frame, ErpFrame):
        return ErpFrame(cyclic_swap(frame.pixels), frame.colorspace)
    a = np.asarray(frame)
    if a.ndim < 2:
        raise ValueError(f"expected at least a 2-d array, got shape {a.shape}")
    w = a.shape[1]
    if w % 2 != 0:
        raise GeometryError(f"cyclic swap requires an even width, got {w}")
    return np.concatenate([a[:, w // 2:], a[:, : w // 2]], axis=1)


def pixel_shuffle(feat: np.ndarray, r: int) -> np.ndarray:
    """Depth-to-space: (H, W, r*r*c) -> (r*H, r*W, c).

    out[y, x, k] = feat[y//r, x//r, k*r*r + (y%r)*r + (x%r)]
    """
    feat = np.asarray(feat)
    if r < 1:
        raise ValueError(f"shuffle factor must be >= 1, got {r}")
    if feat.ndim != 3:
        raise ValueError(f"expected an HxWxC array, got shape {feat.shape}")
    h, w, c_full = feat.shape
    if c_full % (r * r) != 0:
        raise ValueError(f"channel count {c_full} not divisible by r^2 = {r * r}")
    c = c_full // (r * r)
    return (
        feat.reshape(h, w, c, r, r)
        .transpose(0, 3, 1, 4, 2)
        .reshape(h * r, w * r, c)
    )


def pixel_unshuffle(arr: np.ndarray, r: int) -> np.ndarray:
    """Space-to-depth: (H, W, c) -> (H/r, W/r, r*r*c).  Exact inverse of
    :func:`pixel_shuffle`."""
    arr = np.asarray(arr)
    if r < 1:
        raise ValueError(f"shuffle factor must be >= 1, got {r}")
    if arr.ndim != 3:
        raise ValueError(f"expected an HxWxC array, got shape {arr.shape}")
    h, w, c = arr.shape
    if h % r != 0 or w % r != 0:
        raise ValueError(f"spatial dims {h}x{w} not divisible by r = {r}")
    return (
        arr.reshape(h // r, r, w // r, r, c)
        .transpose(0, 2, 4, 1, 3)
        .reshape(h // r, w // r, c * r * r)
    )


def rgb_to_luma(frame: ErpFrame) -> np.ndarray:
    """BT.601 limited-range luma: Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255.

    Returns an H x W float64 plane clamped to [0, 1].
    """
    if frame.colorspace != "rgb":
        raise ValueError(f"luma conversion expects an RGB frame, got {frame.colorspace!r}")
    px = frame.pixels.astype(np.float64, copy=False)
    y = (_LUMA_R * px[..., 0] + _LUMA_G * px[..., 1] + _LUMA_B * px[..., 2] + 16.0) / 255.0
    return np.clip(y, 0.0, 1.0)


def bilinear_upsample_array(arr: np.ndarray, r: int) -> np.ndarray:
    """Bilinear x r upsampling of an H x W x C array, half-pixel centers.

    Sample positions follow the align-corners-off convention
    src = (dst + 0.5) / r - 0.5 with edge clamping.  Output values stay
    within the input range (clipped to [0, 1]).
    """
    arr = np.asarray(arr)
    if r < 1:
        raise ValueError(f"upsample factor must be >= 1, got {r}")
    if r == 1:
        return arr.copy()
    a = arr.astype(np.float64, copy=False)
    h, w = a.shape[:2]

    def axis_samples(n):
        src = (np.arange(n * r, dtype=np.float64) + 0.5) / r - 0.5
        lo = np.floor(src).astype(np.int64)
        frac = src - lo
        i0 = np.clip(lo, 0, n - 1)
        i1 = np.clip(lo + 1, 0, n - 1)
        return i0, i1, frac

    y0, y1, fy = axis_samples(h)
    x0, x1, fx = axis_samples(w)
    fy = fy.reshape((-1,) + (1,) * (a.ndim - 1))
    fx = fx.reshape((1, -1) + (1,) * (a.ndim - 2))
    rows = a[y0] + fy * (a[y1] - a[y0])
    out = rows[:, x0] + fx * (rows[:, x1] - rows[:, x0])
    np.clip(out, 0.0, 1.0, out=out)
    return out.astype(arr.dtype, copy=False)


def bilinear_upsample(frame: ErpFrame, r: int) -> ErpFrame:
    """Bilinear x r upsampling of a frame (see :func:`bilinear_upsample_array`)."""
    return ErpFrame(bilinear_upsample_array(frame.pixels, r), frame.colorspace)
