from __future__ import annotations
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .arch_spec import ArchitectureSpec
from .errors import InvalidArgumentError
from .imageset import MultiScaleImageSet
from .layers import HE_GAIN, EqualizedConv2d, EqualizedLinear, lrelu, pixnorm

# (block, operation, shape) rows appended when tracing a forward pass
Trace = List[Tuple[int, str, Tuple[int, ...]]]


def sample_latent(batch_size: int, latent_dim: int = 512,
                  generator: Optional[torch.Generator] = None) -> Tensor:
    """Standard-normal latents followed by hypersphere normalization (RMS 1 per row)."""
    if batch_size < 1:
        raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
    z = torch.randn(batch_size, latent_dim, generator=generator)
    return normalize_latent(z)


def normalize_latent(z: Tensor) -> Tensor:
    return pixnorm(z)


class InitialBlock(nn.Module):
    """Latent -> 4x4 volume (dense '4x4 conv') -> 3x3 conv."""

    def __init__(self, latent_dim: int, channels: int, equalized: bool = True) -> None:
        super().__init__()
        self.channels = channels
        self.dense = EqualizedLinear(latent_dim, channels * 16, bias_features=channels,
                                     gain=HE_GAIN / 4, equalized=equalized)
        self.conv = EqualizedConv2d(channels, channels, 3, padding=1, equalized=equalized)

    def forward(self, z: Tensor, trace: Optional[Trace] = None) -> Tensor:
        z = pixnorm(z)
        if trace is not None:
            trace.append((1, "Latent Vector", (z.shape[1], 1, 1)))
        x = self.dense(z).view(z.shape[0], self.channels, 4, 4)
        x = pixnorm(lrelu(x))
        if trace is not None:
            trace.append((1, "Conv 4 x 4", tuple(x.shape[1:])))
        x = pixnorm(lrelu(self.conv(x)))
        if trace is not None:
            trace.append((1, "Conv 3 x 3", tuple(x.shape[1:])))
        return x


class UpBlock(nn.Module):
    """2x nearest upsample followed by two 3x3 convs, each with LReLU and PixNorm."""

    def __init__(self, index: int, in_channels: int, out_channels: int, equalized: bool = True) -> None:
        super().__init__()
        self.index = index
        self.conv1 = EqualizedConv2d(in_channels, out_channels, 3, padding=1, equalized=equalized)
        self.conv2 = EqualizedConv2d(out_channels, out_channels, 3, padding=1, equalized=equalized)

    def forward(self, x: Tensor, trace: Optional[Trace] = None) -> Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        if trace is not None:
            trace.append((self.index, "Upsample", tuple(x.shape[1:])))
        x = pixnorm(lrelu(self.conv1(x)))
        if trace is not None:
            trace.append((self.index, "Conv 3 x 3", tuple(x.shape[1:])))
        x = pixnorm(lrelu(self.conv2(x)))
        if trace is not None:
            trace.append((self.index, "Conv 3 x 3", tuple(x.shape[1:])))
        return x


class MultiScaleGenerator(nn.Module):
    """Emits one RGB image per resolution of the schedule; the top entry is the final output."""

    def __init__(self, spec: ArchitectureSpec) -> None:
        super().__init__()
        self.spec = spec
        eq = spec.equalized_lr
        blocks: List[nn.Module] = []
        heads: List[nn.Module] = []
        for i, (cin, cout) in enumerate(spec.gen_channels, start=1):
            if i == 1:
                blocks.append(InitialBlock(cin, cout, equalized=eq))
            else:
                blocks.append(UpBlock(i, cin, cout, equalized=eq))
            heads.append(EqualizedConv2d(cout, 3, 1, gain=1.0, equalized=eq))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.ModuleList(heads)

    def rgb_heads(self) -> Dict[int, nn.Module]:
        return dict(zip(self.spec.resolutions, self.to_rgb))

    def forward(self, z: Tensor, trace: Optional[Trace] = None) -> MultiScaleImageSet:
        if z.dim() != 2 or z.shape[1] != self.spec.latent_dim:
            raise InvalidArgumentError(
                f"latent batch must have shape (batch, {self.spec.latent_dim}), got {tuple(z.shape)}")
        out: MultiScaleImageSet = {}
        x = z
        for r, block, head in zip(self.spec.resolutions, self.blocks, self.to_rgb):
            x = block(x, trace)
            out[r] = head(x)
            if trace is not None:
                trace.append((len(out), "ToRGB", tuple(out[r].shape[1:])))
        return out
