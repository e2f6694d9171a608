from __future__ import annotations
from typing import Dict, Iterable, Optional

from torch import Tensor

from .errors import InvalidArgumentError

# resolution -> batch x 3 x r x r
MultiScaleImageSet = Dict[int, Tensor]


def check_image_set(images: MultiScaleImageSet, expected: Optional[Iterable[int]] = None,
                    name: str = "images") -> int:
    """Validate keys, shapes and a shared batch size; returns the batch size."""
    if not images:
        raise InvalidArgumentError(f"{name}: empty image set")
    if expected is not None:
        want = set(expected)
        got = set(images)
        if got != want:
            missing = sorted(want - got)
            extra = sorted(got - want)
            raise InvalidArgumentError(f"{name}: scale mismatch (missing={missing}, unexpected={extra})")
    batch = None
    for r, x in images.items():
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != r or x.shape[3] != r:
            raise InvalidArgumentError(f"{name}[{r}]: expected shape (batch, 3, {r}, {r}), got {tuple(x.shape)}")
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise InvalidArgumentError(f"{name}: batch mismatch ({batch} vs {x.shape[0]} at scale {r})")
    return int(batch)


def select_scales(images: MultiScaleImageSet, scales: Iterable[int]) -> MultiScaleImageSet:
    keep = set(scales)
    missing = sorted(keep - set(images))
    if missing:
        raise InvalidArgumentError(f"missing scales {missing}")
    return {r: images[r] for r in sorted(keep)}
