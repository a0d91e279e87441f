"""Training objectives: plain and spherically weighted smooth-L1.

The weighted form multiplies the per-element smooth-L1 term by the cosine
latitude map, so equatorial errors cost more than polar ones.  Two
reductions are offered: ``sum`` (the raw double sum) and ``weighted_mean``
(divided by channels * sum of weights, which keeps the magnitude
independent of resolution).  The analytic gradient with respect to the
prediction is exposed for verification; the torch variant used during
training computes the identical expression under autograd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .erp_core import DistortionMap, ErpFrame

_REDUCTIONS = ("sum", "weighted_mean")


@dataclass
class LossConfig:
    beta: float = 1.0
    weighted: bool = True
    reduction: str = "weighted_mean"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.reduction not in _REDUCTIONS:
            raise ValueError(f"reduction must be one of {_REDUCTIONS}")


def _as_pixels(x) -> np.ndarray:
    if isinstance(x, ErpFrame):
        return x.pixels
    return np.asarray(x)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: pred {pred.shape} vs gt {gt.shape}")


def _weights_like(arr: np.ndarray, dmap: DistortionMap | None) -> np.ndarray:
    """Latitude weights broadcast over trailing channel dims; ones if absent."""
    if dmap is None:
        return np.ones(arr.shape[:2], dtype=np.float64).reshape(
            arr.shape[:2] + (1,) * (arr.ndim - 2)
        )
    w = dmap.weights
    if w.shape != arr.shape[:2]:
        raise ValueError(
            f"weight map shape {w.shape} does not match spatial dims {arr.shape[:2]}"
        )
    return w.reshape(w.shape + (1,) * (arr.ndim - 2))


def _channels(arr: np.ndarray) -> int:
    return int(np.prod(arr.shape[2:])) if arr.ndim > 2 else 1


def _terms(pred: np.ndarray, gt: np.ndarray, beta: float) -> np.ndarray:
    d = gt - pred
    absd = np.abs(d)
    return np.where(absd < beta, 0.5 * d * d / beta, absd - 0.5 * beta)


def _reduce(weighted_terms: np.ndarray, weights: np.ndarray, channels: int, reduction: str) -> float:
    total = float(np.sum(weighted_terms))
    if reduction == "sum":
        return total
    return total / (channels * float(np.sum(weights)))


def smooth_l1(pred, gt, cfg: LossConfig | None = None) -> float:
    """Unweighted smooth-L1; ``weighted_mean`` reduces to the plain mean."""
    cfg = cfg or LossConfig(weighted=False)
    p = _as_pixels(pred).astype(np.float64, copy=False)
    g = _as_pixels(gt).astype(np.float64, copy=False)
    _check_pair(p, g)
    total = float(np.sum(_terms(p, g, cfg.beta)))
    if cfg.reduction == "sum":
        return total
    return total / p.size


def wss_l1(pred, gt, dmap: DistortionMap, cfg: LossConfig | None = None) -> float:
    """Weighted spherically smooth-L1 between prediction and ground truth."""
    cfg = cfg or LossConfig()
    p = _as_pixels(pred).astype(np.float64, copy=False)
    g = _as_pixels(gt).astype(np.float64, copy=False)
    _check_pair(p, g)
    w = _weights_like(p, dmap)
    return _reduce(_terms(p, g, cfg.beta) * w, dmap.weights, _channels(p), cfg.reduction)


def wss_l1_gradient(pred, gt, dmap: DistortionMap, cfg: LossConfig | None = None) -> np.ndarray:
    """Exact d(loss)/d(pred), matching :func:`wss_l1` branch for branch.

    On the |d| = beta seam the linear-branch value is used; the loss is C1
    there, so both branches agree.
    """
    cfg = cfg or LossConfig()
    p = _as_pixels(pred).astype(np.float64, copy=False)
    g = _as_pixels(gt).astype(np.float64, copy=False)
    _check_pair(p, g)
    w = _weights_like(p, dmap)
    d = g - p
    grad = np.where(np.abs(d) < cfg.beta, -d / cfg.beta, -np.sign(d)) * w
    if cfg.reduction == "weighted_mean":
        psi_sum = float(np.sum(dmap.weights)) if dmap is not None else p.shape[0] * p.shape[1]
        grad = grad / (_channels(p) * psi_sum)
    return grad


def smooth_l1_gradient(pred, gt, cfg: LossConfig | None = None) -> np.ndarray:
    """Exact d(loss)/d(pred) for the unweighted loss."""
    cfg = cfg or LossConfig(weighted=False)
    p = _as_pixels(pred).astype(np.float64, copy=False)
    g = _as_pixels(gt).astype(np.float64, copy=False)
    _check_pair(p, g)
    d = g - p
    grad = np.where(np.abs(d) < cfg.beta, -d / cfg.beta, -np.sign(d))
    if cfg.reduction == "weighted_mean":
        grad = grad / p.size
    return grad


def wss_l1_torch(
    pred: torch.Tensor,
    gt: torch.Tensor,
    psi: torch.Tensor | None,
    beta: float,
    reduction: str = "weighted_mean",
) -> torch.Tensor:
    """Torch form of the weighted loss for CHW tensors (psi: 1xHxW or None).

    Evaluates the same expression as :func:`wss_l1` / :func:`smooth_l1`, so
    autograd through it reproduces the analytic gradient.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    if reduction not in _REDUCTIONS:
        raise ValueError(f"reduction must be one of {_REDUCTIONS}")
    d = gt - pred
    absd = torch.abs(d)
    terms = torch.where(absd < beta, 0.5 * d * d / beta, absd - 0.5 * beta)
    if psi is not None:
        if psi.shape[-2:] != pred.shape[-2:]:
            raise ValueError(
                f"psi spatial shape {tuple(psi.shape[-2:])} does not match {tuple(pred.shape[-2:])}"
            )
        terms = terms * psi
        psi_sum = psi.sum() / psi.numel() * (psi.shape[-1] * psi.shape[-2])
    else:
        psi_sum = pred.new_tensor(float(pred.shape[-1] * pred.shape[-2]))
    total = terms.sum()
    if reduction == "sum":
        return total
    channels = pred.numel() // (pred.shape[-1] * pred.shape[-2])
    return total / (channels * psi_sum)
