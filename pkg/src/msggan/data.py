from __future__ import annotations
import pickle
import tarfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np
import requests
import torch
import torch.nn.functional as F
from matplotlib.colors import hsv_to_rgb
from PIL import Image
from torch import Tensor
from torch.utils.data import DataLoader, Dataset

from .arch_spec import resolution_schedule
from .console import Printer, or_silent
from .errors import ConfigError, DatasetError, InvalidArgumentError
from .imageset import MultiScaleImageSet

CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
CIFAR10_DIR = "cifar-10-batches-py"
CIFAR10_BATCHES = [f"data_batch_{i}" for i in range(1, 6)] + ["test_batch"]
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
DOWNLOAD_TIMEOUT_S = 60
TOY_MAX_RESOLUTION = 128


def from_uint8(images: Tensor) -> Tensor:
    """uint8 [0, 255] -> float [-1, 1]."""
    return images.float().div(127.5).sub(1.0)


def to_unit_range(images: Tensor) -> Tensor:
    """[-1, 1] -> [0, 1], clamped; used only at I/O boundaries."""
    return images.add(1.0).mul(0.5).clamp(0.0, 1.0)


def to_uint8(images: Tensor) -> Tensor:
    return to_unit_range(images).mul(255.0).round().to(torch.uint8)


def build_pyramid(images: Tensor, schedule: Sequence[int]) -> MultiScaleImageSet:
    """Successive 2x2 box downsampling of a top-resolution batch to every schedule level."""
    levels = sorted(schedule)
    top = levels[-1]
    if images.dim() != 4 or images.shape[2] != top or images.shape[3] != top:
        raise InvalidArgumentError(f"expected a batch at {top}x{top}, got {tuple(images.shape)}")
    out: MultiScaleImageSet = {top: images}
    x = images
    r = top
    while r > levels[0]:
        x = F.avg_pool2d(x, 2)
        r //= 2
        out[r] = x
    return {r: out[r] for r in levels}


@dataclass(frozen=True)
class ToyDatasetParams:
    resolution: int = 32
    size: int = 512
    shapes: Sequence[str] = ("circle", "square", "triangle")
    min_scale: float = 0.2  # primitive half-extent as a fraction of the image side
    max_scale: float = 0.45
    background: float = 0.1


@dataclass(frozen=True)
class DatasetSource:
    kind: str  # synthetic | image_folder | cifar10_archive
    resolution: int
    size: Optional[int] = None
    root: Optional[str] = None
    seed: int = 0
    download: bool = False
    toy: Optional[ToyDatasetParams] = None


@dataclass
class RealBatch:
    full: Tensor
    pyramid: MultiScaleImageSet = field(default_factory=dict)

    @property
    def batch_size(self) -> int:
        return int(self.full.shape[0])

    def to(self, device: torch.device) -> "RealBatch":
        return RealBatch(self.full.to(device), {r: x.to(device) for r, x in self.pyramid.items()})


def synthesize_toy_dataset(params: ToyDatasetParams, seed: int = 0) -> DatasetSource:
    resolution_schedule(params.resolution)
    if params.resolution > TOY_MAX_RESOLUTION:
        raise ConfigError("final_resolution", f"toy datasets support power-of-two resolutions <= {TOY_MAX_RESOLUTION}")
    return DatasetSource(kind="synthetic", resolution=params.resolution, size=params.size, seed=seed, toy=params)


def render_toy_images(params: ToyDatasetParams, seed: int) -> np.ndarray:
    """Coloured geometric primitives with random shape, position, scale and hue; uint8 N x 3 x R x R."""
    rng = np.random.default_rng(seed)
    n, res = params.size, params.resolution
    kinds = rng.integers(0, len(params.shapes), size=n)
    scale = rng.uniform(params.min_scale, params.max_scale, size=n)
    cx = rng.uniform(scale, 1.0 - scale)
    cy = rng.uniform(scale, 1.0 - scale)
    hue = rng.uniform(0.0, 1.0, size=n)
    fg = hsv_to_rgb(np.stack([hue, np.full(n, 0.85), np.full(n, 0.95)], axis=1))  # n x 3
    bg_hue = (hue + 0.5) % 1.0
    bg = hsv_to_rgb(np.stack([bg_hue, np.full(n, 0.3), np.full(n, params.background)], axis=1))

    coords = (np.arange(res) + 0.5) / res
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dx = xx[None] - cx[:, None, None]
    dy = yy[None] - cy[:, None, None]
    s = scale[:, None, None]
    masks = {
        "circle": dx ** 2 + dy ** 2 <= s ** 2,
        "square": (np.abs(dx) <= s * 0.8) & (np.abs(dy) <= s * 0.8),
        # upward triangle: inside the band and under both slanted edges
        "triangle": (dy <= s * 0.8) & (dy >= -s * 0.8) & (np.abs(dx) <= (dy + s * 0.8) * 0.6),
    }
    stack = np.stack([masks[name] for name in params.shapes], axis=0)  # K x n x R x R
    mask = stack[kinds, np.arange(n)][:, None]  # n x 1 x R x R
    img = np.where(mask, fg[:, :, None, None], bg[:, :, None, None])
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _download_cifar10(root: Path, log: Printer) -> None:
    root.mkdir(parents=True, exist_ok=True)
    archive = root / "cifar-10-python.tar.gz"
    log(f"data.download: {CIFAR10_URL}")
    resp = requests.get(CIFAR10_URL, stream=True, timeout=DOWNLOAD_TIMEOUT_S)
    resp.raise_for_status()
    with archive.open("wb") as f:
        for chunk in resp.iter_content(chunk_size=1 << 20):
            f.write(chunk)
    extract_archive(archive, root)


def extract_archive(archive: Path, root: Path) -> None:
    """Unpack a tar archive under `root`; members that would land outside it are rejected."""
    dest = root.resolve()
    try:
        with tarfile.open(archive, "r:*") as tar:
            if hasattr(tarfile, "data_filter"):
                tar.extractall(dest, filter="data")
                return
            for member in tar.getmembers():
                target = (dest / member.name).resolve()
                if not (member.isfile() or member.isdir()) or not target.is_relative_to(dest):
                    raise DatasetError(f"unsafe archive member {member.name!r} in {archive}")
            tar.extractall(dest)
    except tarfile.TarError as e:
        raise DatasetError(f"cannot extract {archive}: {e}") from e


def load_cifar10(root: Path, download: bool = False, log: Optional[Printer] = None) -> np.ndarray:
    log = or_silent(log)
    base = root / CIFAR10_DIR if (root / CIFAR10_DIR).is_dir() else root
    if not all((base / name).exists() for name in CIFAR10_BATCHES):
        if not download:
            raise DatasetError(f"CIFAR-10 batches not found under {root} (set dataset_download to fetch them)")
        _download_cifar10(root, log)
        base = root / CIFAR10_DIR
    chunks = []
    for name in CIFAR10_BATCHES:
        with (base / name).open("rb") as f:
            entry = pickle.load(f, encoding="bytes")
        chunks.append(np.asarray(entry[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32))
    return np.concatenate(chunks, axis=0)


def center_crop_resize(img: Image.Image, resolution: int) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if side != resolution:
        img = img.resize((resolution, resolution), Image.BICUBIC)
    return img


class ImageFolder(Dataset):
    """Decodes PNG/JPEG files; unreadable files yield None and are dropped by the loader."""

    def __init__(self, root: Path, resolution: int) -> None:
        self.resolution = resolution
        self.paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, idx: int):
        path = self.paths[idx]
        try:
            with Image.open(path) as img:
                arr = np.asarray(center_crop_resize(img.convert("RGB"), self.resolution), dtype=np.uint8)
        except Exception as e:
            return str(path), None, str(e)
        return str(path), arr.transpose(2, 0, 1).copy(), None


def load_image_folder(root: Path, resolution: int, num_workers: int = 0, limit: Optional[int] = None,
                      warn: Optional[Printer] = None) -> np.ndarray:
    warn = or_silent(warn)
    if not root.is_dir():
        raise DatasetError(f"image folder not found: {root}")
    ds = ImageFolder(root, resolution)
    loader = DataLoader(ds, batch_size=64, shuffle=False, num_workers=num_workers, collate_fn=list)
    images: List[np.ndarray] = []
    for chunk in loader:
        for path, arr, err in chunk:
            if arr is None:
                warn(f"data.skip: {path} ({err})")
                continue
            images.append(arr)
            if limit is not None and len(images) >= limit:
                break
        if limit is not None and len(images) >= limit:
            break
    if not images:
        raise DatasetError(f"no readable images under {root}")
    return np.stack(images, axis=0)


def load_images(source: DatasetSource, num_workers: int = 0, log: Optional[Printer] = None,
                warn: Optional[Printer] = None) -> np.ndarray:
    """All images of a source as uint8 N x 3 x R x R."""
    if source.kind == "synthetic":
        params = source.toy or ToyDatasetParams(resolution=source.resolution, size=source.size or 512)
        data = render_toy_images(params, source.seed)
    elif source.kind == "cifar10_archive":
        if source.resolution != 32:
            raise ConfigError("final_resolution", "cifar10_archive images are 32x32")
        data = load_cifar10(Path(source.root or "."), source.download, log)
        if source.size is not None:
            data = data[: source.size]
    elif source.kind == "image_folder":
        data = load_image_folder(Path(source.root or "."), source.resolution, num_workers, source.size, warn)
    else:
        raise ConfigError("dataset_kind", f"unknown dataset kind {source.kind!r}")
    if len(data) == 0:
        raise DatasetError(f"dataset '{source.kind}' is empty")
    return data


class BatchStream:
    """Repeatable, seed-deterministic batches of normalized images with their pyramids.

    Epoch `e` is a fixed permutation derived from (shuffle_seed, e); incomplete
    trailing batches are dropped so every epoch has `len(self)` batches.
    """

    def __init__(self, images: np.ndarray, batch_size: int, shuffle_seed: int = 0,
                 scales: Optional[Iterable[int]] = None) -> None:
        if batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {batch_size}")
        if len(images) < batch_size:
            raise DatasetError(f"dataset has {len(images)} images, fewer than one batch of {batch_size}")
        self.images = torch.from_numpy(np.ascontiguousarray(images))
        self.batch_size = batch_size
        self.shuffle_seed = shuffle_seed
        self.resolution = int(images.shape[-1])
        self.schedule = resolution_schedule(self.resolution)
        self.scales = sorted(scales) if scales is not None else list(self.schedule)
        self._perm_epoch: Optional[int] = None
        self._perm: Optional[Tensor] = None

    def __len__(self) -> int:
        return len(self.images) // self.batch_size

    @property
    def num_images(self) -> int:
        return len(self.images)

    def permutation(self, epoch: int) -> Tensor:
        if self._perm_epoch != epoch:
            g = torch.Generator().manual_seed(self.shuffle_seed * 1_000_003 + epoch)
            self._perm = torch.randperm(len(self.images), generator=g)
            self._perm_epoch = epoch
        return self._perm

    def batch(self, epoch: int, index: int) -> RealBatch:
        if not 0 <= index < len(self):
            raise InvalidArgumentError(f"batch index {index} outside epoch of {len(self)} batches")
        idx = self.permutation(epoch)[index * self.batch_size:(index + 1) * self.batch_size]
        return self.make_batch(self.images[idx])

    def position(self, batches_consumed: int):
        """(epoch, index) of the next batch after `batches_consumed` batches."""
        return divmod(batches_consumed, len(self))

    def make_batch(self, raw: Tensor) -> RealBatch:
        full = from_uint8(raw)
        pyramid = build_pyramid(full, self.schedule)
        return RealBatch(full=full, pyramid={r: pyramid[r] for r in self.scales})

    def epoch(self, epoch: int, start: int = 0) -> Iterator[RealBatch]:
        for i in range(start, len(self)):
            yield self.batch(epoch, i)

    def __iter__(self) -> Iterator[RealBatch]:
        return self.epoch(0)

    def sample(self, n: int, generator: Optional[torch.Generator] = None) -> Tensor:
        """n normalized full-resolution images (without replacement when possible)."""
        if n <= len(self.images):
            idx = torch.randperm(len(self.images), generator=generator)[:n]
        else:
            idx = torch.randint(len(self.images), (n,), generator=generator)
        return from_uint8(self.images[idx])


def load_dataset(source: DatasetSource, batch_size: int, shuffle_seed: int = 0,
                 scales: Optional[Iterable[int]] = None, num_workers: int = 0,
                 log: Optional[Printer] = None, warn: Optional[Printer] = None) -> BatchStream:
    images = load_images(source, num_workers=num_workers, log=log, warn=warn)
    if images.shape[-1] != source.resolution:
        raise DatasetError(f"dataset resolution {images.shape[-1]} != configured {source.resolution}")
    or_silent(log)(f"data.loaded kind={source.kind} images={len(images)} resolution={source.resolution}")
    return BatchStream(images, batch_size, shuffle_seed, scales)


def source_from_config(cfg) -> DatasetSource:
    if cfg.dataset_kind == "synthetic":
        params = ToyDatasetParams(resolution=cfg.final_resolution, size=cfg.dataset_size or 512)
        return synthesize_toy_dataset(params, seed=cfg.seed)
    return DatasetSource(kind=cfg.dataset_kind, resolution=cfg.final_resolution, size=cfg.dataset_size,
                         root=cfg.dataset_root, seed=cfg.seed, download=cfg.dataset_download)
