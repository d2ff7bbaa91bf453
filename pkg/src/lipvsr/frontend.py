"""Enhanced ResNet3D visual frontend.

Stem Conv3D -> four residual stages whose first block halves H and W with a
strided convolution -> spatial average pooling.  All temporal strides are 1
and temporal padding is causal, so output frame ``t`` only sees input frames
``<= t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import SUPPORTED_CROPS, ConfigError, FrontendConfig
from .errors import ShapeError


@dataclass
class FeatureSequence:
    values: torch.Tensor  # B x T x D
    lengths: torch.Tensor  # B, int64

    def __post_init__(self):
        if self.values.dim() != 3:
            raise ShapeError(f"expected B x T x D features, got {tuple(self.values.shape)}")
        if self.lengths.shape != (self.values.size(0),):
            raise ShapeError("lengths must have one entry per batch item")
        if int(self.lengths.max()) > self.values.size(1):
            raise ShapeError("lengths exceed the time dimension")

    @property
    def mask(self) -> torch.Tensor:
        """B x T boolean, True at valid frames."""
        t = torch.arange(self.values.size(1), device=self.values.device)
        return t[None, :] < self.lengths[:, None]


class CausalConv3d(nn.Module):
    """Conv3d with left-only temporal padding and symmetric spatial padding."""

    def __init__(self, in_ch, out_ch, kernel, spatial_stride=1, bias=False):
        super().__init__()
        kt, kh, kw = kernel
        self.pad = (kw // 2, kw // 2, kh // 2, kh // 2, kt - 1, 0)
        self.conv = nn.Conv3d(
            in_ch, out_ch, kernel, stride=(1, spatial_stride, spatial_stride), bias=bias
        )

    def forward(self, x):
        return self.conv(F.pad(x, self.pad))


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, downsample: bool):
        super().__init__()
        if not downsample and in_channels != out_channels:
            raise ShapeError(
                f"identity shortcut needs equal channels, got {in_channels} -> {out_channels}"
            )
        if downsample and out_channels < in_channels:
            raise ShapeError("downsampling block may not reduce channels")
        stride = 2 if downsample else 1
        self.conv1 = CausalConv3d(in_channels, out_channels, (3, 3, 3), stride)
        self.bn1 = nn.BatchNorm3d(out_channels)
        self.conv2 = CausalConv3d(out_channels, out_channels, (3, 3, 3))
        self.bn2 = nn.BatchNorm3d(out_channels)
        self.act1 = nn.ReLU()
        self.act2 = nn.ReLU()
        if downsample:
            self.shortcut = nn.Sequential(
                nn.Conv3d(in_channels, out_channels, 1, stride=(1, 2, 2), bias=False),
                nn.BatchNorm3d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.act1(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.act2(out + self.shortcut(x))


def basic_block_forward(
    x: torch.Tensor, downsample: bool, out_channels: int, block: BasicBlock | None = None
) -> torch.Tensor:
    """Run ``x`` (B x Cin x T x H x W) through a basic block, fresh unless one is given."""
    if block is None:
        block = BasicBlock(x.size(1), out_channels, downsample).to(x.dtype)
    return block(x)


class VisualFrontend(nn.Module):
    def __init__(self, config: FrontendConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.stem = CausalConv3d(config.input_channels, config.stem_channels, config.stem_kernel)
        self.stem_bn = nn.BatchNorm3d(config.stem_channels)
        self.stem_act = nn.ReLU()
        stages = []
        in_ch = config.stem_channels
        for depth, out_ch in zip(config.block_depths, config.block_channels):
            blocks = [BasicBlock(in_ch, out_ch, downsample=True)]
            blocks += [BasicBlock(out_ch, out_ch, downsample=False) for _ in range(depth - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def forward(self, video: torch.Tensor, lengths: torch.Tensor | None = None) -> FeatureSequence:
        """``video`` is B x T x C x H x W; returns B x T x D features."""
        if video.dim() != 5:
            raise ShapeError(f"expected B x T x C x H x W, got {tuple(video.shape)}")
        b, t, c, h, w = video.shape
        if h != w:
            raise ShapeError(f"frames must be square, got {h}x{w}")
        if h not in SUPPORTED_CROPS:
            raise ConfigError("data.crop", f"crop {h} not in {SUPPORTED_CROPS}")
        if c != self.config.input_channels:
            raise ShapeError(f"expected {self.config.input_channels} channels, got {c}")
        if lengths is None:
            lengths = torch.full((b,), t, dtype=torch.long)
        x = video.transpose(1, 2)  # B x C x T x H x W
        x = self.stem_act(self.stem_bn(self.stem(x)))
        for stage in self.stages:
            x = stage(x)
        x = x.mean(dim=(3, 4))  # B x D x T
        return FeatureSequence(x.transpose(1, 2), lengths.to(torch.long))


def frontend_forward(
    video: torch.Tensor,
    config: FrontendConfig,
    lengths: torch.Tensor | None = None,
    module: VisualFrontend | None = None,
) -> FeatureSequence:
    if module is None:
        module = VisualFrontend(config).to(video.dtype)
    return module(video, lengths)
