from __future__ import annotations
from typing import List, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .arch_spec import ArchitectureSpec, CombineKind, lin_cat_width
from .errors import InvalidArgumentError
from .generator import Trace
from .imageset import MultiScaleImageSet, check_image_set
from .layers import EqualizedConv2d, EqualizedLinear, lrelu, minibatch_stddev


class Combine(nn.Module):
    """Merge an incoming RGB image with the straight-path activations.

    simple:  [rgb; a]
    lin_cat: [r'(rgb); a], r' a 1x1 conv to half the path width
    cat_lin: r'([rgb; a]), r' a 1x1 conv back to the path width
    """

    def __init__(self, kind: CombineKind, path_channels: int, equalized: bool = True) -> None:
        super().__init__()
        self.kind = CombineKind(kind)
        self.path_channels = path_channels
        self.proj: Optional[nn.Module] = None
        if self.kind is CombineKind.LIN_CAT:
            self.proj = EqualizedConv2d(3, lin_cat_width(path_channels), 1, gain=1.0, equalized=equalized)
        elif self.kind is CombineKind.CAT_LIN:
            self.proj = EqualizedConv2d(path_channels + 3, path_channels, 1, gain=1.0, equalized=equalized)

    @property
    def out_channels(self) -> int:
        if self.kind is CombineKind.SIMPLE:
            return self.path_channels + 3
        if self.kind is CombineKind.LIN_CAT:
            return self.path_channels + lin_cat_width(self.path_channels)
        return self.path_channels

    def forward(self, rgb: Tensor, a: Tensor) -> Tensor:
        if rgb.shape[0] != a.shape[0] or rgb.shape[2:] != a.shape[2:]:
            raise InvalidArgumentError(
                f"combine: image {tuple(rgb.shape)} does not align with activations {tuple(a.shape)}")
        if self.kind is CombineKind.SIMPLE:
            return torch.cat([rgb, a], dim=1)
        if self.kind is CombineKind.LIN_CAT:
            return torch.cat([self.proj(rgb), a], dim=1)
        return self.proj(torch.cat([rgb, a], dim=1))


def combine(kind: CombineKind, rgb: Tensor, a: Tensor, layer: Optional[Combine] = None) -> Tensor:
    """Functional form; `layer` supplies the projection parameters for lin_cat / cat_lin."""
    kind = CombineKind(kind)
    if kind is CombineKind.SIMPLE:
        return Combine(kind, a.shape[1])(rgb, a)
    if layer is None or layer.kind is not kind:
        raise InvalidArgumentError(f"combine '{kind.value}' needs its projection layer")
    return layer(rgb, a)


class DiscriminatorBlock(nn.Module):
    def __init__(self, index: int, resolution: int, width: int, path: int, out: int,
                 combine_layer: Optional[Combine], last: bool, equalized: bool = True) -> None:
        super().__init__()
        self.index = index
        self.resolution = resolution
        self.last = last
        self.combine = combine_layer
        self.conv1 = EqualizedConv2d(width + 1, path, 3, padding=1, equalized=equalized)
        if last:
            self.conv2 = EqualizedConv2d(path, out, 4, padding=0, equalized=equalized)
            self.critic = EqualizedLinear(out, 1, gain=1.0, equalized=equalized)
        else:
            self.conv2 = EqualizedConv2d(path, out, 3, padding=1, equalized=equalized)
            self.critic = None

    def forward(self, x: Tensor, rgb: Optional[Tensor], trace: Optional[Trace] = None) -> Tensor:
        if self.combine is not None:
            x = self.combine(rgb, x)
            if trace is not None:
                trace.append((self.index, "Combine", tuple(x.shape[1:])))
        x = minibatch_stddev(x)
        if trace is not None:
            trace.append((self.index, "MinBatchStd", tuple(x.shape[1:])))
        x = lrelu(self.conv1(x))
        if trace is not None:
            trace.append((self.index, "Conv 3 x 3", tuple(x.shape[1:])))
        x = lrelu(self.conv2(x))
        if self.last:
            if trace is not None:
                trace.append((self.index, "Conv 4 x 4", tuple(x.shape[1:])))
            x = self.critic(x.flatten(1))
            if trace is not None:
                trace.append((self.index, "Fully Connected", (1, 1, 1)))
            return x.squeeze(1)
        if trace is not None:
            trace.append((self.index, "Conv 3 x 3", tuple(x.shape[1:])))
        x = F.avg_pool2d(x, 2)
        if trace is not None:
            trace.append((self.index, "AvgPool", tuple(x.shape[1:])))
        return x


class MultiScaleDiscriminator(nn.Module):
    """Single critic over the whole image set: top image via from-RGB, the rest merged per block."""

    def __init__(self, spec: ArchitectureSpec) -> None:
        super().__init__()
        self.spec = spec
        eq = spec.equalized_lr
        top_path, _ = spec.disc_channels[0]
        self.from_rgb = EqualizedConv2d(3, top_path, 1, gain=1.0, equalized=eq)
        blocks: List[nn.Module] = []
        for i, r in enumerate(reversed(spec.resolutions), start=1):
            path, out = spec.disc_block_channels(r)
            layer = Combine(spec.combine_kind, path, equalized=eq) if spec.is_combined(r) else None
            blocks.append(DiscriminatorBlock(i, r, spec.combined_width(r), path, out, layer,
                                             last=(r == 4), equalized=eq))
        self.blocks = nn.ModuleList(blocks)

    @property
    def input_scales(self) -> List[int]:
        return sorted(self.spec.connection_mask)

    def forward(self, images: MultiScaleImageSet, trace: Optional[Trace] = None) -> Tensor:
        check_image_set(images, self.spec.connection_mask, name="discriminator input")
        top = self.spec.final_resolution
        x = self.from_rgb(images[top])
        if trace is not None:
            trace.append((1, "FromRGB", tuple(x.shape[1:])))
        for block in self.blocks:
            rgb = images.get(block.resolution) if block.combine is not None else None
            x = block(x, rgb, trace)
        return x
