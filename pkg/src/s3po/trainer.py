"""Two-stage training: generic pretraining on conventional clips, then
fine-tuning on 360-degree clips with the spherically weighted loss.

One optimizer update per clip (gradient accumulation emulates larger
batches during pretraining, since variable-length 360 clips force a batch
of one).  Checkpoints are plain directories: a strict-schema config.json,
a little-endian float32 weights.bin, and a weights.index.json describing
every stored array; round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .datakit import DatasetManifest, load_clip_frames, load_manifest
from .degrade import DegradationConfig, degrade
from .erp_core import ErpFrame, build_distortion_map
from .errors import CheckpointError, NumericError
from .losses import LossConfig, wss_l1_torch
from .model import (
    ModelConfig,
    RecurrentState,
    S3PO,
    count_parameters,
    load_parameters,
    parameters_dict,
)

_STAGES = ("pretrain", "adapt")
_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    stage: str = "adapt"
    epochs: int = 75
    batch_size: int = 1
    lr_initial: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    unroll_truncation: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.stage not in _STAGES:
            raise ValueError(f"stage must be one of {_STAGES}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_initial <= 0:
            raise ValueError(f"lr_initial must be positive, got {self.lr_initial}")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError(f"lr_decay_factor must be in (0, 1), got {self.lr_decay_factor}")
        if self.lr_decay_every < 1:
            raise ValueError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


def pretrain_config(**overrides) -> TrainConfig:
    """Stage-1 defaults: batch of 8, 70 epochs, plain smooth-L1."""
    kwargs = dict(
        stage="pretrain",
        epochs=70,
        batch_size=8,
        loss=LossConfig(weighted=False),
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def adapt_config(**overrides) -> TrainConfig:
    """Stage-2 defaults: batch of one, 75 epochs, weighted loss."""
    kwargs = dict(stage="adapt", epochs=75, batch_size=1, loss=LossConfig(weighted=True))
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step-decayed learning rate: initial * factor^(epoch // every)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr_initial * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


@dataclass
class TrainingClip:
    """In-memory training sample: low-res inputs and high-res targets."""

    clip_id: str
    lr_frames: list[np.ndarray]
    gt_frames: list[np.ndarray]


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray]
    model_config: ModelConfig
    train_config: TrainConfig | None
    epoch: int
    loss_history: list[float]
    optimizer_step_count: int = 0

    def parameter_count(self) -> int:
        return count_parameters(self.params)


# --------------------------------------------------------------------------
# data access


def _frames_to_arrays(frames: Sequence[ErpFrame]) -> list[np.ndarray]:
    return [f.pixels.astype(np.float32, copy=False) for f in frames]


def load_training_clips(dataset, degradation: DegradationConfig) -> list[TrainingClip]:
    """Materialize train-split clips from a manifest (or pass clips through).

    Uses precomputed low-resolution frames when the manifest says they are
    available; otherwise degrades the ground truth on the fly.
    """
    if isinstance(dataset, (list, tuple)):
        return list(dataset)
    manifest = dataset if isinstance(dataset, DatasetManifest) else load_manifest(dataset)
    clips: list[TrainingClip] = []
    for entry in manifest.entries:
        if entry.split != "train":
            continue
        clip_dir = manifest.clip_dir(entry.clip_id)
        gt_frames = load_clip_frames(clip_dir / "gt")
        lr_dir = clip_dir / f"lr_{degradation.mode}"
        if entry.lr_available.get(degradation.mode) and lr_dir.is_dir():
            lr_frames = load_clip_frames(lr_dir)
        else:
            lr_frames = [degrade(f, degradation) for f in gt_frames]
        clips.append(
            TrainingClip(
                clip_id=entry.clip_id,
                lr_frames=_frames_to_arrays(lr_frames),
                gt_frames=_frames_to_arrays(gt_frames),
            )
        )
    return clips


# --------------------------------------------------------------------------
# training


def _psi_tensor(height: int, width: int, dtype: torch.dtype) -> torch.Tensor:
    weights = build_distortion_map(height, width).weights
    return torch.from_numpy(weights[None, :, :].copy()).to(dtype)


def clip_loss(
    model: S3PO,
    clip: TrainingClip,
    loss_cfg: LossConfig,
    psi: torch.Tensor | None,
    unroll_truncation: int | None = None,
) -> torch.Tensor:
    """Mean over timesteps of the configured loss, on the autograd graph.

    The recurrence feeds the model's own previous output back in; with a
    truncation interval the state is detached every k steps to bound the
    backward pass.
    """
    frames = clip.lr_frames
    state = model.initial_state(frames[0])
    total = None
    for t in range(len(frames)):
        window = [
            frames[max(t - 1, 0)],
            frames[t],
            frames[min(t + 1, len(frames) - 1)],
        ]
        hr, state = model.step(window, state)
        gt = torch.from_numpy(
            np.ascontiguousarray(clip.gt_frames[t].transpose(2, 0, 1))
        ).to(hr.dtype)
        term = wss_l1_torch(
            hr, gt, psi if loss_cfg.weighted else None, loss_cfg.beta, loss_cfg.reduction
        )
        total = term if total is None else total + term
        if unroll_truncation and (t + 1) % unroll_truncation == 0:
            state = RecurrentState(state.hidden.detach(), state.prev_hr.detach())
    return total / len(frames)


def _make_optimizer(model: S3PO, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.lr_initial,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_epsilon,
    )


def _optimizer_arrays(opt: torch.optim.Optimizer, model: S3PO) -> tuple[dict[str, np.ndarray], int]:
    arrays: dict[str, np.ndarray] = {}
    step_count = 0
    for name, p in model.named_parameters():
        state = opt.state.get(p)
        if not state:
            continue
        arrays[f"optim/exp_avg/{name}"] = state["exp_avg"].detach().cpu().numpy().copy()
        arrays[f"optim/exp_avg_sq/{name}"] = state["exp_avg_sq"].detach().cpu().numpy().copy()
        step_count = int(state["step"].item() if torch.is_tensor(state["step"]) else state["step"])
    return arrays, step_count


def _restore_optimizer(opt: torch.optim.Optimizer, model: S3PO, ckpt: Checkpoint) -> None:
    if not ckpt.optimizer_state:
        return
    for name, p in model.named_parameters():
        ea = ckpt.optimizer_state.get(f"optim/exp_avg/{name}")
        eas = ckpt.optimizer_state.get(f"optim/exp_avg_sq/{name}")
        if ea is None or eas is None:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(ckpt.optimizer_step_count)),
            "exp_avg": torch.from_numpy(ea.copy()).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(eas.copy()).to(p.dtype),
        }


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset,
    init: Checkpoint | None = None,
    out_dir: Path | None = None,
) -> Checkpoint:
    """Run the configured schedule and return the final checkpoint.

    ``dataset`` is a manifest (object or path) or a list of TrainingClip.
    When ``out_dir`` is given, a ``train_log.csv`` (epoch, clip_id, loss, lr)
    and the final checkpoint directory are written there.  A non-finite
    loss aborts with a diagnostic checkpoint.
    """
    clips = load_training_clips(dataset, train_cfg.degradation)
    if not clips:
        raise ValueError("training dataset is empty")
    model = S3PO(model_cfg)
    if init is not None:
        load_parameters(model, init.params)
    opt = _make_optimizer(model, train_cfg)
    if init is not None:
        _restore_optimizer(opt, model, init)

    psi_cache: dict[tuple[int, int], torch.Tensor] = {}

    def psi_for(gt: np.ndarray) -> torch.Tensor:
        key = gt.shape[:2]
        if key not in psi_cache:
            psi_cache[key] = _psi_tensor(key[0], key[1], torch.float32)
        return psi_cache[key]

    loss_history: list[float] = []
    log_rows: list[tuple[int, str, float, float]] = []

    def flush_logs_and_build(epoch: int) -> Checkpoint:
        params = parameters_dict(model)
        optim_arrays, step_count = _optimizer_arrays(opt, model)
        ckpt = Checkpoint(
            params=params,
            optimizer_state=optim_arrays,
            model_config=model_cfg,
            train_config=train_cfg,
            epoch=epoch,
            loss_history=list(loss_history),
            optimizer_step_count=step_count,
        )
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "train_log.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", "clip_id", "loss", "lr"])
                for row in log_rows:
                    writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
        return ckpt

    accumulate = train_cfg.batch_size if train_cfg.stage == "pretrain" else 1
    pending = 0
    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([train_cfg.seed % (2**63), epoch]).permutation(len(clips))
        for idx in order:
            clip = clips[idx]
            loss = clip_loss(
                model, clip, train_cfg.loss, psi_for(clip.gt_frames[0]),
                train_cfg.unroll_truncation,
            )
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                ckpt = flush_logs_and_build(epoch)
                if out_dir is not None:
                    save_checkpoint(ckpt, Path(out_dir) / "diagnostic_checkpoint")
                raise NumericError(
                    f"non-finite loss {loss_value} at epoch {epoch}, clip {clip.clip_id!r}"
                )
            (loss / accumulate).backward()
            pending += 1
            if pending == accumulate:
                opt.step()
                opt.zero_grad()
                pending = 0
            loss_history.append(loss_value)
            log_rows.append((epoch, clip.clip_id, loss_value, lr))
        if pending:
            opt.step()
            opt.zero_grad()
            pending = 0

    ckpt = flush_logs_and_build(train_cfg.epochs)
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "checkpoint")
    return ckpt


def evaluate_loss(model_or_cfg, dataset, train_cfg: TrainConfig) -> float:
    """Mean clip loss over the train split without touching parameters."""
    clips = load_training_clips(dataset, train_cfg.degradation)
    if not clips:
        raise ValueError("dataset is empty")
    model = model_or_cfg if isinstance(model_or_cfg, S3PO) else S3PO(model_or_cfg)
    losses = []
    with torch.no_grad():
        for clip in clips:
            h, w = clip.gt_frames[0].shape[:2]
            psi = _psi_tensor(h, w, torch.float32) if train_cfg.loss.weighted else None
            losses.append(float(clip_loss(model, clip, train_cfg.loss, psi)))
    return float(np.mean(losses))


# --------------------------------------------------------------------------
# checkpoint serialization


def _config_to_dict(ckpt: Checkpoint) -> dict:
    return {
        "format_version": _FORMAT_VERSION,
        "model": dataclasses.asdict(ckpt.model_config),
        "train": dataclasses.asdict(ckpt.train_config) if ckpt.train_config else None,
        "epoch": ckpt.epoch,
        "optimizer_step_count": ckpt.optimizer_step_count,
        "loss_history": ckpt.loss_history,
    }


def _strict_dataclass(cls, data: dict, context: str, nested: dict | None = None):
    if not isinstance(data, dict):
        raise CheckpointError(f"{context}: expected an object, got {type(data).__name__}")
    nested = nested or {}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise CheckpointError(f"{context}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(names - set(data))
    if missing:
        raise CheckpointError(f"{context}: missing key(s) {', '.join(missing)}")
    kwargs = {}
    for name in names:
        value = data[name]
        if name in nested and value is not None:
            value = _strict_dataclass(nested[name], value, f"{context}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise CheckpointError(f"{context}: {exc}") from exc


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write the checkpoint directory (config.json, weights.bin, index).

    Arrays are stored as little-endian float32 in index order; loading
    reproduces every float32 array bit for bit.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = [(name, ckpt.params[name]) for name in sorted(ckpt.params)]
    named += [(name, ckpt.optimizer_state[name]) for name in sorted(ckpt.optimizer_state)]
    index = []
    offset = 0
    blobs = []
    for name, arr in named:
        data = np.ascontiguousarray(np.asarray(arr), dtype="<f4").tobytes()
        index.append(
            {
                "name": name,
                "shape": list(np.asarray(arr).shape),
                "byte_offset": offset,
                "byte_length": len(data),
            }
        )
        blobs.append(data)
        offset += len(data)
    (path / "weights.bin").write_bytes(b"".join(blobs))
    with open(path / "weights.index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
    with open(path / "config.json", "w", encoding="utf-8") as fh:
        json.dump(_config_to_dict(ckpt), fh, sort_keys=True, indent=1)
    return path


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint directory; malformed content raises CheckpointError."""
    path = Path(path)
    config_path = path / "config.json"
    if not config_path.is_file():
        raise CheckpointError(f"{path}: missing config.json")
    with open(config_path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise CheckpointError(f"{config_path}: expected a JSON object")
    expected_keys = {
        "format_version",
        "model",
        "train",
        "epoch",
        "optimizer_step_count",
        "loss_history",
    }
    unknown = sorted(set(config) - expected_keys)
    if unknown:
        raise CheckpointError(f"{config_path}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(expected_keys - set(config))
    if missing:
        raise CheckpointError(f"{config_path}: missing key(s) {', '.join(missing)}")
    if config["format_version"] != _FORMAT_VERSION:
        raise CheckpointError(
            f"{config_path}: unsupported format_version {config['format_version']!r}"
        )
    model_cfg = _strict_dataclass(ModelConfig, config["model"], "config.json model")
    train_cfg = None
    if config["train"] is not None:
        train_cfg = _strict_dataclass(
            TrainConfig,
            config["train"],
            "config.json train",
            nested={"loss": LossConfig, "degradation": DegradationConfig},
        )
        if isinstance(train_cfg.unroll_truncation, float):
            train_cfg.unroll_truncation = int(train_cfg.unroll_truncation)

    index_path = path / "weights.index.json"
    if not index_path.is_file():
        raise CheckpointError(f"{path}: missing weights.index.json")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    if not isinstance(index, list):
        raise CheckpointError(f"{index_path}: expected a JSON array")
    blob = (path / "weights.bin").read_bytes() if (path / "weights.bin").is_file() else None
    if blob is None:
        raise CheckpointError(f"{path}: missing weights.bin")

    params: dict[str, np.ndarray] = {}
    optim: dict[str, np.ndarray] = {}
    entry_keys = {"name", "shape", "byte_offset", "byte_length"}
    for i, entry in enumerate(index):
        if not isinstance(entry, dict) or set(entry) != entry_keys:
            raise CheckpointError(f"{index_path}: entry {i} must have keys {sorted(entry_keys)}")
        name = entry["name"]
        shape = tuple(entry["shape"])
        length = entry["byte_length"]
        offset = entry["byte_offset"]
        expected = int(np.prod(shape, dtype=np.int64)) * 4
        if length != expected:
            raise CheckpointError(
                f"{index_path}: tensor {name!r} byte_length {length} does not match shape {shape}"
            )
        if offset < 0 or offset + length > len(blob):
            raise CheckpointError(
                f"weights.bin truncated: tensor {name!r} spans [{offset}, {offset + length}) "
                f"but the file has {len(blob)} bytes"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=offset).reshape(shape)
        target = optim if name.startswith("optim/") else params
        target[name] = arr.copy()

    return Checkpoint(
        params=params,
        optimizer_state=optim,
        model_config=model_cfg,
        train_config=train_cfg,
        epoch=config["epoch"],
        loss_history=list(config["loss_history"]),
        optimizer_step_count=config["optimizer_step_count"],
    )


def model_from_checkpoint(ckpt: Checkpoint, **config_overrides) -> S3PO:
    """Instantiate a model and load the checkpoint parameters into it."""
    cfg = dataclasses.replace(ckpt.model_config, **config_overrides)
    model = S3PO(cfg)
    load_parameters(model, ckpt.params)
    return model
