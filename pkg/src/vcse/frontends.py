"""Learnable encoders and the decoder that map between waveforms, lips, phonetic
features and the shared 256-channel latent frame space.

Shapes follow the PyTorch convention: waveforms are (B, L), lip sequences are
(B, T_v, 120, 120) uint8, latent frames are (B, N, F).
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig

VIDEO_FPS = 25
LIP_SIZE = 120

# conv layers per residual stage, keyed by the nominal network depth
# (stem + block convs + output projection)
RESNET_BLOCKS = {18: (2, 2, 2, 2), 10: (1, 1, 1, 1), 6: (1, 1), 4: (1,)}


def upsample_frames(x: torch.Tensor, factor: int, n_frames: int | None = None) -> torch.Tensor:
    """Nearest-frame repetition along the last axis, then crop/edge-pad to ``n_frames``."""
    x = x.repeat_interleave(factor, dim=-1)
    if n_frames is not None:
        x = match_frames(x, n_frames)
    return x


def match_frames(x: torch.Tensor, n_frames: int) -> torch.Tensor:
    have = x.shape[-1]
    if have > n_frames:
        return x[..., :n_frames]
    if have < n_frames:
        return torch.cat([x, x[..., -1:].expand(*x.shape[:-1], n_frames - have)], dim=-1)
    return x


def rate_factor(source_rate: float, target_rate: float) -> int:
    ratio = target_rate / source_rate
    if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"target rate {target_rate} is not an integer multiple of {source_rate}")
    return int(round(ratio))


class AudioEncoder(nn.Module):
    """1-D conv analysis front: kernel 40, stride 20, ReLU. 16 kHz in, 800 frames/s out."""

    def __init__(self, n_channels: int = 256, kernel: int = 40, stride: int = 20):
        super().__init__()
        self.kernel, self.stride = kernel, stride
        self.conv = nn.Conv1d(1, n_channels, kernel, stride=stride, bias=False)

    @property
    def frame_rate(self) -> float:
        return 16000 / self.stride

    def n_frames(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] == 0:
            raise ValueError("cannot encode an empty waveform")
        n = x.shape[-1]
        pad = self.stride * self.n_frames(n) - n + (self.kernel - self.stride)
        x = F.pad(x.unsqueeze(1), (0, pad))
        return F.relu(self.conv(x))


class AudioDecoder(nn.Module):
    """Bias-free transposed conv inverting the encoder geometry: F frames -> 20*F samples."""

    def __init__(self, n_channels: int = 256, kernel: int = 40, stride: int = 20):
        super().__init__()
        self.n_channels = n_channels
        self.stride = stride
        self.deconv = nn.ConvTranspose1d(n_channels, 1, kernel, stride=stride, bias=False)

    def forward(self, w: torch.Tensor, length: int | None = None) -> torch.Tensor:
        if w.shape[1] != self.n_channels:
            raise ValueError(f"decoder expects {self.n_channels} channels, got {w.shape[1]}")
        out = self.deconv(w).squeeze(1)[..., : w.shape[-1] * self.stride]
        return out if length is None else out[..., :length]


class FrameGroupNorm(nn.GroupNorm):
    """GroupNorm over (B, C, T, H, W) with statistics taken per frame, never across time."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, h, w = x.shape
        y = super().forward(x.transpose(1, 2).reshape(b * t, c, h, w))
        return y.reshape(b, t, c, h, w).transpose(1, 2)


def image_norm(kind: str, channels: int, dims: int = 2) -> nn.Module:
    """BatchNorm (running statistics) or GroupNorm (per-sample, identical in train and eval)."""
    if kind == "batch":
        return nn.BatchNorm2d(channels) if dims == 2 else nn.BatchNorm3d(channels)
    if kind == "group":
        groups = math.gcd(channels, 8)
        return nn.GroupNorm(groups, channels) if dims == 2 else FrameGroupNorm(groups, channels)
    raise ValueError(f"unknown norm {kind!r}; choose 'batch' or 'group'")


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1, norm: str = "batch"):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = image_norm(norm, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = image_norm(norm, c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), image_norm(norm, c_out))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class VisualEncoder(nn.Module):
    """3-D conv stem followed by a per-frame residual CNN with global pooling.

    The stem replicates edge frames instead of zero padding in time, so a
    static lip image produces a temporally constant embedding.
    """

    def __init__(
        self,
        n_channels: int = 256,
        layers: int = 18,
        stem_channels: int = 64,
        widths: tuple[int, ...] = (64, 128, 256, 512),
        stem_stride: int = 2,
        norm: str = "batch",
    ):
        super().__init__()
        if layers not in RESNET_BLOCKS:
            raise ValueError(f"unsupported residual depth {layers}; choose from {sorted(RESNET_BLOCKS)}")
        blocks = RESNET_BLOCKS[layers]
        if len(widths) < len(blocks):
            widths = tuple(widths) + (widths[-1],) * (len(blocks) - len(widths))
        self.stem = nn.Sequential(
            nn.Conv3d(1, stem_channels, (5, 7, 7), stride=(1, stem_stride, stem_stride), padding=(0, 3, 3), bias=False),
            image_norm(norm, stem_channels, dims=3),
            nn.ReLU(),
            nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        )
        trunk, c_in = [], stem_channels
        for i, (n_blocks, width) in enumerate(zip(blocks, widths)):
            for b in range(n_blocks):
                trunk.append(BasicBlock(c_in, width, 2 if (i > 0 and b == 0) else 1, norm))
                c_in = width
        self.trunk = nn.Sequential(*trunk)
        self.proj = nn.Linear(c_in, n_channels)

    def forward(self, lips: torch.Tensor, target_frame_rate: float | None = None, n_frames: int | None = None):
        """(B, T_v, H, W) uint8 or float -> (B, N, T_v * factor)."""
        if lips.shape[-2:] != (LIP_SIZE, LIP_SIZE):
            raise ValueError(f"lip frames must be {LIP_SIZE}x{LIP_SIZE}, got {tuple(lips.shape[-2:])}")
        x = lips.float() / 255.0 if lips.dtype == torch.uint8 else lips.float()
        b, t = x.shape[:2]
        x = x.unsqueeze(1)
        x = torch.cat([x[:, :, :1].expand(-1, -1, 2, -1, -1), x, x[:, :, -1:].expand(-1, -1, 2, -1, -1)], dim=2)
        x = self.stem(x)  # (B, C, T, h, w)
        x = x.transpose(1, 2).reshape(b * t, *x.shape[1:2], *x.shape[3:])
        x = self.trunk(x).mean(dim=(2, 3))
        emb = self.proj(x).reshape(b, t, -1).transpose(1, 2)
        if target_frame_rate is not None:
            emb = upsample_frames(emb, rate_factor(VIDEO_FPS, target_frame_rate), n_frames)
        return emb


class ContextEncoder(nn.Module):
    """Five dilated conv blocks (kernel 5, dilation 2^d) with BN + ReLU, then a linear layer."""

    def __init__(self, in_channels: int = 256, n_channels: int = 256, n_blocks: int = 5, kernel: int = 5):
        super().__init__()
        self.in_channels = in_channels
        layers = []
        for d in range(n_blocks):
            dilation = 2**d
            layers += [
                nn.Conv1d(in_channels if d == 0 else n_channels, n_channels, kernel,
                          dilation=dilation, padding=dilation * (kernel - 1) // 2),
                nn.BatchNorm1d(n_channels),
                nn.ReLU(),
            ]
        self.blocks = nn.Sequential(*layers)
        self.proj = nn.Linear(n_channels, n_channels)
        self.kernel, self.n_blocks = kernel, n_blocks

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * sum(2**d for d in range(self.n_blocks))

    def forward(self, c: torch.Tensor, feature_rate: float = 25.0, target_frame_rate: float | None = None,
                n_frames: int | None = None) -> torch.Tensor:
        """(B, 256, T_c) phonetic features -> (B, N, T_c * factor)."""
        if c.shape[1] != self.in_channels:
            raise ValueError(f"context encoder expects {self.in_channels} channels, got {c.shape[1]}")
        h = self.blocks(c)
        h = self.proj(h.transpose(1, 2)).transpose(1, 2)
        if target_frame_rate is not None:
            h = upsample_frames(h, rate_factor(feature_rate, target_frame_rate), n_frames)
        return h


def build_audio_pair(cfg: ModelConfig) -> tuple[AudioEncoder, AudioDecoder]:
    return (AudioEncoder(cfg.n_channels, cfg.encoder_kernel, cfg.encoder_stride),
            AudioDecoder(cfg.n_channels, cfg.encoder_kernel, cfg.encoder_stride))


def build_visual_encoder(cfg: ModelConfig) -> VisualEncoder:
    return VisualEncoder(cfg.n_channels, cfg.resnet_layers, cfg.visual_stem_channels,
                         cfg.visual_widths, cfg.visual_stem_stride, cfg.visual_norm)


def build_context_encoder(cfg: ModelConfig) -> ContextEncoder:
    return ContextEncoder(256, cfg.n_channels, cfg.context_blocks, cfg.context_kernel)
