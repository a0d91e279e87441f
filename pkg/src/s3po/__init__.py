"""360-degree video super-resolution: recurrent, alignment-free, and
distortion-aware, with spherically weighted losses and metrics."""

from .erp_core import (
    DistortionMap,
    ErpFrame,
    bilinear_upsample,
    build_distortion_map,
    cyclic_swap,
    pixel_shuffle,
    pixel_unshuffle,
    rgb_to_luma,
)
from .degrade import DegradationConfig, degrade, degrade_bd, degrade_bi
from .losses import LossConfig, smooth_l1, wss_l1, wss_l1_gradient
from .metrics import (
    ComplexityStats,
    MetricConfig,
    MetricReport,
    psnr,
    si_ti,
    ssim,
    ws_psnr,
    ws_ssim,
)
from .model import ModelConfig, S3PO, count_parameters, paper_scale_config
from .trainer import (
    Checkpoint,
    TrainConfig,
    adapt_config,
    load_checkpoint,
    lr_at,
    pretrain_config,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ComplexityStats",
    "DegradationConfig",
    "DistortionMap",
    "ErpFrame",
    "LossConfig",
    "MetricConfig",
    "MetricReport",
    "ModelConfig",
    "S3PO",
    "TrainConfig",
    "adapt_config",
    "bilinear_upsample",
    "build_distortion_map",
    "count_parameters",
    "cyclic_swap",
    "degrade",
    "degrade_bd",
    "degrade_bi",
    "load_checkpoint",
    "lr_at",
    "paper_scale_config",
    "pixel_shuffle",
    "pixel_unshuffle",
    "pretrain_config",
    "psnr",
    "rgb_to_luma",
    "save_checkpoint",
    "si_ti",
    "smooth_l1",
    "ssim",
    "train",
    "ws_psnr",
    "ws_ssim",
    "wss_l1",
    "wss_l1_gradient",
]
