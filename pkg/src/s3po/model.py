"""Recurrent 360-degree video super-resolution network.

Per timestep the network consumes a sliding window of three consecutive
low-resolution frames plus the recurrent state (hidden features and the
previous super-resolved output), and emits the next super-resolved frame:

  window -> local feature extraction -> spatial/channel attention -> G_local
  state  -> global fusion ------------------------------------------> G_global
  (G_local, G_global) -> dual-duct residual refinement -> h_t, LF_t, GF_t
  (LF_t, GF_t) -> per-duct pixel-shuffle residues -> merge -> + bilinear base

No alignment or motion compensation is used.  All switches needed for the
reduced variants (attention off, hidden state off, mutual exchange off,
cyclic dual-view) are plain config flags on the same parameter set.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .erp_core import ErpFrame, bilinear_upsample_array
from .errors import GeometryError

# Channel width documented for the full-size configuration; chosen so the
# total parameter count lands on the published model complexity.
PAPER_SCALE_CHANNELS = 104


@dataclass
class ModelConfig:
    base_channels: int = 32
    num_blocks: int = 10
    scale: int = 4
    attention_enabled: bool = True
    hidden_state_enabled: bool = True
    mutual_exchange_enabled: bool = True
    cyclic_enabled: bool = False
    # Literal-equation mode omits the sigmoid on the channel-attention map.
    channel_attention_sigmoid: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")


def paper_scale_config(**overrides) -> ModelConfig:
    """Full-size configuration (see README for the parameter budget)."""
    kwargs = dict(base_channels=PAPER_SCALE_CHANNELS, num_blocks=10, scale=4)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


@dataclass
class RecurrentState:
    """Recurrent carry: hidden features (C,H,W) and previous HR frame (3,rH,rW)."""

    hidden: torch.Tensor
    prev_hr: torch.Tensor


def _to_chw(frame, dtype: torch.dtype) -> torch.Tensor:
    arr = frame.pixels if isinstance(frame, ErpFrame) else np.asarray(frame)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).to(dtype)


def _to_hwc(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(1, 2, 0)


def _swap_halves(t: torch.Tensor) -> torch.Tensor:
    w = t.shape[-1]
    if w % 2 != 0:
        raise GeometryError(f"cyclic treatment requires an even width, got {w}")
    return torch.roll(t, w // 2, dims=-1)


class FeatureExtractor(nn.Module):
    """Two-stage local feature extraction from an unaligned 3-frame window.

    Stage one sums per-frame ReLU features into a joint feature and adds a
    per-frame projection on top (the correlated features); stage two fuses
    the prev+target and next+target concatenations back to base width.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv_prev = nn.Conv2d(3, channels, 3, padding=1)
        self.conv_cur = nn.Conv2d(3, channels, 3, padding=1)
        self.conv_next = nn.Conv2d(3, channels, 3, padding=1)
        self.conv_corr = nn.Conv2d(3, channels, 3, padding=1)
        self.conv_branch_prev = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.conv_branch_next = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, f_prev, f_cur, f_next):
        joint = (
            F.relu(self.conv_prev(f_prev))
            + F.relu(self.conv_cur(f_cur))
            + F.relu(self.conv_next(f_next))
        )
        corr_prev = joint + self.conv_corr(f_prev)
        corr_cur = joint + self.conv_corr(f_cur)
        corr_next = joint + self.conv_corr(f_next)
        local1 = torch.cat([corr_prev, corr_cur], dim=0)
        local2 = torch.cat([corr_next, corr_cur], dim=0)
        return F.relu(self.conv_branch_prev(local1)) + F.relu(self.conv_branch_next(local2))


class AttentionBlock(nn.Module):
    """Spatial then channel attention over the extracted local features."""

    def __init__(self, channels: int, channel_sigmoid: bool = True):
        super().__init__()
        self.conv_spatial = nn.Conv2d(2, 1, 3, padding=1)
        self.ca_conv1 = nn.Conv2d(channels, channels, 1)
        self.ca_conv2 = nn.Conv2d(channels, channels, 1)
        self.channel_sigmoid = channel_sigmoid

    def _ca(self, descriptor):
        return self.ca_conv2(F.relu(self.ca_conv1(descriptor)))

    def forward(self, feat):
        pooled = torch.cat(
            [feat.amax(dim=0, keepdim=True), feat.mean(dim=0, keepdim=True)], dim=0
        )
        spatial_map = torch.sigmoid(self.conv_spatial(pooled))
        sa_feat = spatial_map * feat
        desc_max = sa_feat.amax(dim=(1, 2), keepdim=True)
        desc_avg = sa_feat.mean(dim=(1, 2), keepdim=True)
        channel_map = self._ca(desc_max) + self._ca(desc_avg)
        if self.channel_sigmoid:
            channel_map = torch.sigmoid(channel_map)
        return channel_map * sa_feat


class GlobalFusion(nn.Module):
    """Fuses the target frame with the hidden state and the space-to-depth
    transform of the previous HR output."""

    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.conv = nn.Conv2d(3 + channels + 3 * scale * scale, channels, 3, padding=1)
        self.scale = scale

    def forward(self, f_cur, hidden, prev_hr):
        unshuffled = F.pixel_unshuffle(prev_hr, self.scale)
        return F.relu(self.conv(torch.cat([f_cur, hidden, unshuffled], dim=0)))


class RefineUnit(nn.Module):
    """R(x) = conv(relu(conv(x)))."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv2(F.relu(self.conv1(x)))


class DualDuctBlock(nn.Module):
    """Residual block refining local and global ducts with mutual exchange.

    out_local  = local_in  + R(local_in)  + R(global_in)
    out_global = global_in + R(global_in) + R(local_in)

    With exchange disabled, the cross terms are dropped.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.local_from_local = RefineUnit(channels)
        self.local_from_global = RefineUnit(channels)
        self.global_from_global = RefineUnit(channels)
        self.global_from_local = RefineUnit(channels)

    def forward(self, local_in, global_in, exchange: bool = True):
        out_local = local_in + self.local_from_local(local_in)
        out_global = global_in + self.global_from_global(global_in)
        if exchange:
            out_local = out_local + self.local_from_global(global_in)
            out_global = out_global + self.global_from_local(local_in)
        return out_local, out_global


class RefineStack(nn.Module):
    """Chain of dual-duct blocks plus the hidden/LF/GF head convolutions."""

    def __init__(self, channels: int, num_blocks: int):
        super().__init__()
        self.blocks = nn.ModuleList(DualDuctBlock(channels) for _ in range(num_blocks))
        self.conv_hidden_local = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv_hidden_global = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv_lf = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv_gf = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, g_local, g_global, exchange: bool = True):
        ff_local, ff_global = g_local, g_global
        for block in self.blocks:
            ff_local, ff_global = block(ff_local, ff_global, exchange)
        hidden = F.relu(self.conv_hidden_local(ff_local)) + F.relu(
            self.conv_hidden_global(ff_global)
        )
        return hidden, self.conv_lf(ff_local), self.conv_gf(ff_global)


class Upsampler(nn.Module):
    """Per-duct conv + pixel shuffle, then a two-conv merge of the residues."""

    def __init__(self, channels: int, scale: int):
        super().__init__()
        self.conv_local = nn.Conv2d(channels, 3 * scale * scale, 3, padding=1)
        self.conv_global = nn.Conv2d(channels, 3 * scale * scale, 3, padding=1)
        self.merge1 = nn.Conv2d(6, channels, 3, padding=1)
        self.merge2 = nn.Conv2d(channels, 3, 3, padding=1)
        self.scale = scale

    def forward(self, lf, gf):
        res_local = F.pixel_shuffle(self.conv_local(lf), self.scale)
        res_global = F.pixel_shuffle(self.conv_global(gf), self.scale)
        return self.merge2(self.merge1(torch.cat([res_local, res_global], dim=0)))


class S3PO(nn.Module):
    """The full recurrent super-resolver.

    Tensors are unbatched CHW; training at the published schedule processes
    one clip at a time, so batching is handled by gradient accumulation in
    the trainer rather than by a batch dimension here.
    """

    def __init__(self, cfg: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.extractor = FeatureExtractor(c)
        self.attention = AttentionBlock(c, cfg.channel_attention_sigmoid)
        self.fusion = GlobalFusion(c, cfg.scale)
        self.refine = RefineStack(c, cfg.num_blocks)
        self.upsampler = Upsampler(c, cfg.scale)
        self._dtype = dtype
        self.to(dtype)
        self.reset_parameters(cfg.seed)

    # ---- parameters ----------------------------------------------------

    def reset_parameters(self, seed: int) -> None:
        """Fan-in-scaled uniform init, reproducible and order-independent.

        Each convolution draws from a generator keyed by (seed, module
        name), so renaming-free code changes cannot reshuffle other layers'
        values.
        """
        for name, module in self.named_modules():
            if not isinstance(module, nn.Conv2d):
                continue
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            rng = np.random.default_rng([seed % (2**63), zlib.crc32(name.encode())])
            weight = rng.uniform(-bound, bound, size=tuple(module.weight.shape))
            bias = rng.uniform(-bound, bound, size=tuple(module.bias.shape))
            with torch.no_grad():
                module.weight.copy_(torch.from_numpy(weight))
                module.bias.copy_(torch.from_numpy(bias))

    def zero_parameters(self) -> None:
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()

    # ---- per-stage ops ---------------------------------------------------

    def extract_local_features(self, window: Sequence[torch.Tensor]) -> torch.Tensor:
        f_prev, f_cur, f_next = window
        if not (f_prev.shape == f_cur.shape == f_next.shape):
            raise ValueError(
                f"window frames must share a shape, got "
                f"{tuple(f_prev.shape)}, {tuple(f_cur.shape)}, {tuple(f_next.shape)}"
            )
        return self.extractor(f_prev, f_cur, f_next)

    def apply_attention(self, feat: torch.Tensor) -> torch.Tensor:
        if not self.cfg.attention_enabled:
            return feat
        return self.attention(feat)

    def fuse_global(self, f_cur: torch.Tensor, state: RecurrentState) -> torch.Tensor:
        hidden = state.hidden
        if not self.cfg.hidden_state_enabled:
            hidden = torch.zeros_like(hidden)
        expected_hr = (3, f_cur.shape[1] * self.cfg.scale, f_cur.shape[2] * self.cfg.scale)
        if tuple(state.prev_hr.shape) != expected_hr:
            raise ValueError(
                f"previous HR shape {tuple(state.prev_hr.shape)} does not match {expected_hr}"
            )
        if hidden.shape[1:] != f_cur.shape[1:]:
            raise ValueError(
                f"hidden shape {tuple(hidden.shape)} does not match frame {tuple(f_cur.shape)}"
            )
        return self.fusion(f_cur, hidden, state.prev_hr)

    def refine_stack(self, g_local: torch.Tensor, g_global: torch.Tensor):
        return self.refine(g_local, g_global, self.cfg.mutual_exchange_enabled)

    def reconstruct_hr(self, lf: torch.Tensor, gf: torch.Tensor, f_cur) -> torch.Tensor:
        """Residue from the two ducts plus the bilinear base of the target.

        The bilinear base is computed outside the graph (the target frame is
        input data), so a zero-parameter network returns it exactly.  No
        clamping here; outputs are clamped only when serialized.
        """
        residue = self.upsampler(lf, gf)
        arr = f_cur.pixels if isinstance(f_cur, ErpFrame) else np.asarray(f_cur)
        base = bilinear_upsample_array(arr, self.cfg.scale)
        base_t = torch.from_numpy(np.ascontiguousarray(base.transpose(2, 0, 1))).to(self._dtype)
        return residue + base_t

    # ---- recurrence ------------------------------------------------------

    def initial_state(self, first_frame) -> RecurrentState:
        """Zero hidden features; previous HR seeded with the bilinear base."""
        arr = first_frame.pixels if isinstance(first_frame, ErpFrame) else np.asarray(first_frame)
        h, w = arr.shape[:2]
        hidden = torch.zeros(
            (self.cfg.base_channels, h, w), dtype=self._dtype
        )
        base = bilinear_upsample_array(arr, self.cfg.scale)
        prev_hr = torch.from_numpy(np.ascontiguousarray(base.transpose(2, 0, 1))).to(self._dtype)
        return RecurrentState(hidden=hidden, prev_hr=prev_hr)

    def _local_branch(self, tensors: Sequence[torch.Tensor]) -> torch.Tensor:
        g_local = self.apply_attention(self.extract_local_features(tensors))
        if self.cfg.cyclic_enabled:
            swapped = [_swap_halves(t) for t in tensors]
            g_swapped = self.apply_attention(self.extract_local_features(swapped))
            g_local = g_local + _swap_halves(g_swapped)
        return g_local

    def step(self, window, state: RecurrentState):
        """One recurrent step: (3-frame window, state) -> (HR tensor, state).

        Window entries are ErpFrames or HxWx3 arrays; outputs stay on the
        autograd graph so the trainer can backpropagate through time.
        """
        tensors = [_to_chw(f, self._dtype) for f in window]
        g_local = self._local_branch(tensors)
        g_global = self.fuse_global(tensors[1], state)
        hidden, lf, gf = self.refine_stack(g_local, g_global)
        hr = self.reconstruct_hr(lf, gf, window[1])
        return hr, RecurrentState(hidden=hidden, prev_hr=hr)

    def step_frames(self, window, state: RecurrentState):
        """Like :meth:`step` but returns the HR frame as an ErpFrame."""
        hr, new_state = self.step(window, state)
        return ErpFrame(_to_hwc(hr).astype(np.float64)), new_state

    def forward_clip(self, clip) -> list[ErpFrame]:
        """Super-resolve a whole clip with edge-replicated window padding.

        Works online with one frame of lookahead: frame t is produced from
        (t-1, t, t+1), with the first and last frames replicated at the clip
        boundaries.  Returns unclamped HR frames.
        """
        frames = getattr(clip, "frames", clip)
        if len(frames) == 0:
            raise ValueError("forward_clip requires at least one frame")
        outputs = []
        state = self.initial_state(frames[0])
        with torch.no_grad():
            for t in range(len(frames)):
                window = [
                    frames[max(t - 1, 0)],
                    frames[t],
                    frames[min(t + 1, len(frames) - 1)],
                ]
                hr, state = self.step(window, state)
                outputs.append(ErpFrame(_to_hwc(hr).astype(np.float64)))
        return outputs

    forward = forward_clip


# ---- parameter set helpers ------------------------------------------------


def parameters_dict(model: S3PO) -> dict[str, np.ndarray]:
    """Named parameter arrays (detached copies, native dtype)."""
    return {name: p.detach().cpu().numpy().copy() for name, p in model.named_parameters()}


def load_parameters(model: S3PO, params: Mapping[str, np.ndarray]) -> None:
    """Load named arrays into the model; reports every offending name."""
    model_params = dict(model.named_parameters())
    missing = sorted(set(model_params) - set(params))
    unexpected = sorted(set(params) - set(model_params))
    mismatched = sorted(
        name
        for name in set(params) & set(model_params)
        if tuple(model_params[name].shape) != tuple(np.asarray(params[name]).shape)
    )
    problems = []
    if missing:
        problems.append(f"missing: {', '.join(missing)}")
    if unexpected:
        problems.append(f"unexpected: {', '.join(unexpected)}")
    if mismatched:
        details = ", ".join(
            f"{n} (checkpoint {tuple(np.asarray(params[n]).shape)} vs model "
            f"{tuple(model_params[n].shape)})"
            for n in mismatched
        )
        problems.append(f"shape mismatch: {details}")
    if problems:
        raise ValueError("parameter set incompatible with model: " + "; ".join(problems))
    with torch.no_grad():
        for name, p in model_params.items():
            p.copy_(torch.from_numpy(np.asarray(params[name])).to(p.dtype))


def count_parameters(params) -> int:
    """Total scalar count of a parameter set (mapping or module)."""
    if isinstance(params, nn.Module):
        return sum(p.numel() for p in params.parameters())
    return int(sum(np.asarray(a).size for a in params.values()))
