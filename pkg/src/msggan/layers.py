from __future__ import annotations
import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

PIXNORM_EPS = 1e-8
LRELU_SLOPE = 0.2
HE_GAIN = math.sqrt(2.0)


def pixnorm(x: Tensor, eps: float = PIXNORM_EPS) -> Tensor:
    """Per-location channel RMS normalization; also the latent hypersphere normalization."""
    return x * x.square().mean(dim=1, keepdim=True).add(eps).rsqrt()


def minibatch_stddev(x: Tensor) -> Tensor:
    """Append one feature map holding the batch-averaged per-feature standard deviation."""
    n, _, h, w = x.shape
    var = x.var(dim=0, unbiased=False)
    # constant features contribute exactly 0, with a zero gradient instead of inf
    positive = (var > 0) & (x != x[:1]).any(dim=0)
    safe = torch.where(positive, var, torch.ones_like(var))
    std = torch.where(positive, safe.sqrt(), torch.zeros_like(var)).mean()
    feat = std.reshape(1, 1, 1, 1).expand(n, 1, h, w)
    return torch.cat([x, feat], dim=1)


def lrelu(x: Tensor) -> Tensor:
    return F.leaky_relu(x, LRELU_SLOPE)


class EqualizedConv2d(nn.Module):
    """Conv whose weights are stored as N(0, 1) draws and scaled by the He constant at use time.

    With `equalized=False` the He constant is baked into the initial weights instead.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, padding: int = 0,
                 gain: float = HE_GAIN, equalized: bool = True) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        he = gain / math.sqrt(fan_in)
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        if equalized:
            self.scale = he
        else:
            with torch.no_grad():
                self.weight.mul_(he)
            self.scale = 1.0

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)

    def extra_repr(self) -> str:
        return (f"{self.in_channels}, {self.out_channels}, kernel_size={tuple(self.weight.shape[2:])}, "
                f"padding={self.padding}, scale={self.scale:.5g}")


class EqualizedLinear(nn.Module):
    def __init__(self, in_features: int, out_features: int, bias_features: Optional[int] = None,
                 gain: float = HE_GAIN, equalized: bool = True) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        he = gain / math.sqrt(in_features)
        self.weight = nn.Parameter(torch.randn(out_features, in_features))
        # bias_features < out_features shares one bias per channel of a reshaped output
        self.bias = nn.Parameter(torch.zeros(bias_features or out_features))
        if equalized:
            self.scale = he
        else:
            with torch.no_grad():
                self.weight.mul_(he)
            self.scale = 1.0

    def forward(self, x: Tensor) -> Tensor:
        y = F.linear(x, self.weight * self.scale)
        if self.bias.numel() == self.out_features:
            return y + self.bias
        per = self.out_features // self.bias.numel()
        return y + self.bias.repeat_interleave(per)

    def extra_repr(self) -> str:
        return f"{self.in_features}, {self.out_features}, bias={self.bias.numel()}, scale={self.scale:.5g}"
