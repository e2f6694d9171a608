from __future__ import annotations
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import Tensor, nn
from torchvision.utils import make_grid

from .data import to_unit_range
from .errors import ConfigError, InvalidArgumentError, NumericError
from .imageset import MultiScaleImageSet

PSD_TOLERANCE = 1e-7
TRACE_CLAMP = 1e-6
STOCHASTIC_TOLERANCE = 1e-5
DEFAULT_IS_SPLITS = 10
SNAPSHOT_PATTERN = "epoch_*.npz"
# Stability MSE is computed on images mapped to [0, 1].
STABILITY_PIXEL_RANGE = "[0,1]"


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def feature_stats(features: Union[np.ndarray, Tensor]) -> FeatureStats:
    x = features.detach().cpu().double().numpy() if isinstance(features, Tensor) else np.asarray(features, np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgumentError(f"feature_stats needs an n x d matrix with n >= 2, got shape {x.shape}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return FeatureStats(mean=mean, cov=cov)


def _check_psd(cov: np.ndarray, name: str) -> None:
    if not np.allclose(cov, cov.T, atol=1e-9):
        raise NumericError(f"{name} covariance is not symmetric")
    lo = float(np.linalg.eigvalsh(cov).min()) if cov.size else 0.0
    if lo < -PSD_TOLERANCE * max(1.0, float(np.abs(cov).max())):
        raise NumericError(f"{name} covariance is not PSD (min eigenvalue {lo:.3g})")


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    tr((S_a S_b)^(1/2)) is taken from the symmetric form S_a^(1/2) S_b S_a^(1/2),
    whose eigenvalues equal those of S_a S_b.
    """
    if a.dim != b.dim or a.cov.shape != b.cov.shape:
        raise InvalidArgumentError(f"feature dimension mismatch ({a.dim} vs {b.dim})")
    _check_psd(a.cov, "first")
    _check_psd(b.cov, "second")
    diff = a.mean - b.mean
    root_a = _sqrt_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_covmean = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_covmean)
    if value < 0:
        if value < -TRACE_CLAMP:
            raise NumericError(f"negative Frechet distance {value:.3g}")
        value = 0.0
    return value


def inception_score(probs: Union[np.ndarray, Tensor], splits: int = DEFAULT_IS_SPLITS) -> Tuple[float, float]:
    """Split-averaged exp(E KL(p(y|x) || p(y))); each split keeps at least one row per class when n allows."""
    p = probs.detach().cpu().double().numpy() if isinstance(probs, Tensor) else np.asarray(probs, np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise InvalidArgumentError(f"expected an n x C probability matrix, got shape {p.shape}")
    if (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, atol=STOCHASTIC_TOLERANCE):
        raise InvalidArgumentError("rows must be non-negative and sum to 1")
    n, classes = p.shape
    splits = max(1, min(splits, n // classes))
    scores = []
    for part in np.array_split(p, splits, axis=0):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(math.exp(kl.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


class RandomProjectionExtractor(nn.Module):
    """Fixed, untrained conv features for the FID-proxy; not comparable to published FID."""

    label = "fid_proxy"

    def __init__(self, seed: int = 1234, features: int = 256, classes: int = 10, input_size: int = 32) -> None:
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.input_size = input_size
        self.conv1 = nn.Conv2d(3, 32, 3, padding=1)
        self.conv2 = nn.Conv2d(32, 64, 3, padding=1)
        self.conv3 = nn.Conv2d(64, features // 4, 3, padding=1)
        self.head = nn.Linear(features, classes)
        with torch.no_grad():
            for m in (self.conv1, self.conv2, self.conv3, self.head):
                fan_in = m.weight[0].numel()
                m.weight.copy_(torch.randn(m.weight.shape, generator=g) * math.sqrt(2.0 / fan_in))
                m.bias.zero_()
        self.requires_grad_(False)
        self.eval()

    def forward(self, images: Tensor) -> Tensor:
        """images in [-1, 1], any square resolution -> batch x features."""
        x = F.interpolate(images, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False)
        x = F.avg_pool2d(F.leaky_relu(self.conv1(x), 0.2), 2)
        x = F.avg_pool2d(F.leaky_relu(self.conv2(x), 0.2), 2)
        x = F.leaky_relu(self.conv3(x), 0.2)
        return F.adaptive_avg_pool2d(x, 2).flatten(1)

    def class_probs(self, images: Tensor) -> Tensor:
        return F.softmax(self.head(self(images)), dim=1)


class InceptionExtractor(nn.Module):
    """Pretrained Inception-v3 pool features and class probabilities (downloads weights on first use)."""

    label = "fid"

    def __init__(self) -> None:
        super().__init__()
        from torchvision.models import Inception_V3_Weights, inception_v3
        self.net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        self.net.eval()
        self.requires_grad_(False)
        self._pool: Optional[Tensor] = None
        self.net.avgpool.register_forward_hook(lambda _m, _i, out: setattr(self, "_pool", out))

    def _run(self, images: Tensor) -> Tensor:
        x = F.interpolate(to_unit_range(images), size=(299, 299), mode="bilinear", align_corners=False)
        mean = x.new_tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = x.new_tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        return self.net((x - mean) / std)

    def forward(self, images: Tensor) -> Tensor:
        self._run(images)
        return self._pool.flatten(1)

    def class_probs(self, images: Tensor) -> Tensor:
        return F.softmax(self._run(images), dim=1)


def make_extractor(name: str, seed: int = 1234) -> nn.Module:
    if name == "random_projection":
        return RandomProjectionExtractor(seed=seed)
    if name == "inception":
        return InceptionExtractor()
    raise ConfigError("metric_extractor", f"unknown extractor {name!r}")


@torch.no_grad()
def extract(extractor: nn.Module, images: Tensor, batch_size: int = 64, probs: bool = False) -> Tensor:
    device = next(extractor.parameters()).device
    out = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size].to(device, torch.float32)
        out.append((extractor.class_probs(chunk) if probs else extractor(chunk)).double().cpu())
    return torch.cat(out, dim=0)


@torch.no_grad()
def generate_images(generator: nn.Module, latents: Tensor, batch_size: int = 64) -> Tensor:
    device = next(generator.parameters()).device
    top = generator.spec.final_resolution
    out = []
    for i in range(0, len(latents), batch_size):
        out.append(generator(latents[i:i + batch_size].to(device))[top].float().cpu())
    return torch.cat(out, dim=0)


def fid_between(extractor: nn.Module, images_a: Tensor, images_b: Tensor) -> float:
    return frechet_distance(feature_stats(extract(extractor, images_a)), feature_stats(extract(extractor, images_b)))


# --- stability snapshots -------------------------------------------------------------------------

def save_snapshot(path: Union[str, Path], epoch: int, images: MultiScaleImageSet, latents: Tensor) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"scale_{r}": to_unit_range(x.detach().float().cpu()).numpy().astype("<f4") for r, x in images.items()}
    arrays["latents"] = latents.detach().float().cpu().numpy().astype("<f4")
    arrays["epoch"] = np.asarray(epoch, dtype="<i8")
    with p.open("wb") as f:
        np.savez(f, **arrays)
    return p


def _load_snapshot(path: Path) -> Tuple[int, np.ndarray, Dict[int, np.ndarray]]:
    with np.load(path) as z:
        epoch = int(z["epoch"])
        latents = z["latents"]
        scales = {int(k.split("_", 1)[1]): z[k] for k in z.files if k.startswith("scale_")}
    return epoch, latents, scales


StabilityCurve = Dict[int, Dict[int, float]]  # epoch -> scale -> mse


def stability_curve(snapshot_dir: Union[str, Path]) -> StabilityCurve:
    """Per-scale MSE between fixed-latent images at the start of consecutive epochs."""
    paths = sorted(Path(snapshot_dir).glob(SNAPSHOT_PATTERN))
    if len(paths) < 2:
        raise InvalidArgumentError(f"need >= 2 epochs of snapshots, found {len(paths)} in {snapshot_dir}")
    snaps = sorted((_load_snapshot(p) for p in paths), key=lambda s: s[0])
    curve: StabilityCurve = {}
    for (e0, z0, imgs0), (e1, z1, imgs1) in zip(snaps, snaps[1:]):
        if z0.shape != z1.shape or not np.array_equal(z0, z1):
            raise InvalidArgumentError(f"latent set differs between epochs {e0} and {e1}")
        if set(imgs0) != set(imgs1):
            raise InvalidArgumentError(f"scale set differs between epochs {e0} and {e1}")
        curve[e1] = {r: float(np.mean((imgs1[r].astype(np.float64) - imgs0[r].astype(np.float64)) ** 2))
                     for r in sorted(imgs1)}
    return curve


def write_stability_csv(curve: StabilityCurve, path: Union[str, Path]) -> Path:
    p = Path(path)
    with p.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "scale", "mse"])
        for epoch in sorted(curve):
            for r in sorted(curve[epoch]):
                w.writerow([epoch, r, repr(curve[epoch][r])])
    return p


def plot_stability(curve: StabilityCurve, path: Union[str, Path]) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = sorted(curve)
    scales = sorted(next(iter(curve.values())))
    fig, axes = plt.subplots(1, len(scales), figsize=(3 * len(scales), 2.8), squeeze=False)
    for ax, r in zip(axes[0], scales):
        ax.plot(epochs, [curve[e][r] for e in epochs])
        ax.set_title(f"{r}x{r}")
        ax.set_xlabel("epoch")
    axes[0][0].set_ylabel(f"MSE (pixels in {STABILITY_PIXEL_RANGE})")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def curve_slope(curve: StabilityCurve, scale: int, tail_fraction: float = 1.0 / 3.0) -> float:
    epochs = sorted(curve)
    tail = epochs[-max(2, int(round(len(epochs) * tail_fraction))):]
    if len(tail) < 2:
        return float("nan")
    ys = [curve[e][scale] for e in tail]
    return float(np.polyfit(np.asarray(tail, np.float64), np.asarray(ys, np.float64), 1)[0])


# --- sample grids --------------------------------------------------------------------------------

def _save_png(grid: Tensor, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = grid.mul(255.0).round().clamp(0, 255).to(torch.uint8).permute(1, 2, 0).numpy()
    Image.fromarray(arr).save(path, format="PNG")
    return path


def grid_images(images: MultiScaleImageSet) -> Tensor:
    """One row per sample, one column per scale; coarse scales nearest-upscaled to the top size."""
    scales = sorted(images)
    top = scales[-1]
    cols = [F.interpolate(to_unit_range(images[r].detach().float().cpu()), size=(top, top), mode="nearest")
            for r in scales]
    tiles = torch.stack(cols, dim=1).flatten(0, 1)
    return make_grid(tiles, nrow=len(scales), padding=2, pad_value=1.0)


@torch.no_grad()
def sample_grid(generator: nn.Module, latents: Tensor, path: Union[str, Path]) -> List[Path]:
    """Writes `<path>` (multi-scale grid) and `<stem>_top.png` (top scale only)."""
    p = Path(path)
    device = next(generator.parameters()).device
    images = generator(latents.to(device))
    written = [_save_png(grid_images(images), p)]
    top = to_unit_range(images[max(images)].detach().float().cpu())
    nrow = int(math.ceil(math.sqrt(len(top))))
    written.append(_save_png(make_grid(top, nrow=nrow, padding=2, pad_value=1.0), p.with_name(p.stem + "_top.png")))
    return written

