from __future__ import annotations
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from .errors import ConfigError

# Output channels of generator blocks 1..9 (resolutions 4..1024).
GENERATOR_TABLE: Tuple[int, ...] = (512, 512, 512, 512, 256, 128, 64, 32, 16)
MAX_TABLE_RESOLUTION = 4 * 2 ** (len(GENERATOR_TABLE) - 1)

# Ablation groups, defined against the 1024 schedule.
ABLATION_GROUPS: Dict[str, Tuple[int, ...]] = {
    "coarse": (4, 8),
    "middle": (16, 32),
    "fine": (64, 128, 256, 512, 1024),
}

CRITIC_HIDDEN = 512


class CombineKind(str, Enum):
    SIMPLE = "simple"
    LIN_CAT = "lin_cat"
    CAT_LIN = "cat_lin"


class LossKind(str, Enum):
    WGAN_GP = "wgan_gp"
    NONSAT_GP = "nonsat_gp"


class ConnectionMode(str, Enum):
    NONE = "none"
    COARSE = "coarse"
    MIDDLE = "middle"
    FINE = "fine"
    ALL = "all"


def _is_power_of_two(n: int) -> bool:
    return isinstance(n, int) and not isinstance(n, bool) and n > 0 and (n & (n - 1)) == 0


def resolution_schedule(final_resolution: int) -> List[int]:
    if not _is_power_of_two(final_resolution) or final_resolution < 4:
        raise ConfigError("final_resolution", f"{final_resolution!r} must be a power of two >= 4")
    return [2 ** e for e in range(2, int(math.log2(final_resolution)) + 1)]


def _capped(c: int, cap: Optional[int]) -> int:
    return c if cap is None else min(c, cap)


def _table_channels(resolution: int, cap: Optional[int]) -> int:
    return _capped(GENERATOR_TABLE[int(math.log2(resolution)) - 2], cap)


def generator_channel_schedule(final_resolution: int, latent_dim: int = 512,
                               channel_cap: Optional[int] = None) -> List[Tuple[int, int]]:
    """(in, out) channels per generator block, block 1 (4x4) first."""
    schedule = resolution_schedule(final_resolution)
    if final_resolution > MAX_TABLE_RESOLUTION:
        raise ConfigError("final_resolution", f"no channel schedule beyond {MAX_TABLE_RESOLUTION}")
    pairs: List[Tuple[int, int]] = []
    prev = latent_dim
    for r in schedule:
        out = _table_channels(r, channel_cap)
        pairs.append((prev, out))
        prev = out
    return pairs


def discriminator_channel_schedule(final_resolution: int,
                                   channel_cap: Optional[int] = None) -> List[Tuple[int, int]]:
    """(path, out) channels per discriminator block, top resolution first.

    `path` is the straight-path width entering the block (the from-RGB width
    for the top block); `out` is the width after the block's second conv.
    """
    schedule = resolution_schedule(final_resolution)
    if final_resolution > MAX_TABLE_RESOLUTION:
        raise ConfigError("final_resolution", f"no channel schedule beyond {MAX_TABLE_RESOLUTION}")
    pairs = []
    for r in reversed(schedule):
        path = _table_channels(r, channel_cap)
        out = _table_channels(r // 2, channel_cap) if r > 4 else _capped(CRITIC_HIDDEN, channel_cap)
        pairs.append((path, out))
    return pairs


def connection_mask(mode: str, schedule: Iterable[int]) -> FrozenSet[int]:
    res = list(schedule)
    if not res:
        raise ConfigError("connection_mode", "empty resolution schedule")
    top = res[-1]
    try:
        kind = ConnectionMode(str(mode).lower())
    except ValueError:
        raise ConfigError("connection_mode", f"{mode!r} is not one of {', '.join(m.value for m in ConnectionMode)}")
    if kind is ConnectionMode.ALL:
        return frozenset(res)
    if kind is ConnectionMode.NONE:
        return frozenset([top])
    group = ABLATION_GROUPS[kind.value]
    missing = [r for r in group if r not in res]
    if missing:
        raise ConfigError("connection_mode",
                          f"mode '{kind.value}' needs resolutions {list(group)}, schedule lacks {missing}")
    return frozenset(group) | {top}


@dataclass(frozen=True)
class ArchitectureSpec:
    final_resolution: int
    latent_dim: int
    gen_channels: Tuple[Tuple[int, int], ...]
    disc_channels: Tuple[Tuple[int, int], ...]
    combine_kind: CombineKind
    connection_mask: FrozenSet[int]
    loss_kind: LossKind
    channel_cap: Optional[int] = None
    equalized_lr: bool = True

    def __post_init__(self):
        schedule = resolution_schedule(self.final_resolution)
        if len(self.gen_channels) != len(schedule) or len(self.disc_channels) != len(schedule):
            raise ConfigError("final_resolution", "channel schedules do not match the resolution schedule")
        stray = sorted(set(self.connection_mask) - set(schedule))
        if stray:
            raise ConfigError("connection_mode", f"resolutions {stray} are not in the schedule")
        if self.final_resolution not in self.connection_mask:
            raise ConfigError("connection_mode", "the top resolution must always be connected")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim", "must be >= 1")

    @property
    def resolutions(self) -> List[int]:
        return resolution_schedule(self.final_resolution)

    @property
    def num_blocks(self) -> int:
        return len(self.resolutions)

    def gen_out_channels(self, resolution: int) -> int:
        return self.gen_channels[self.resolutions.index(resolution)][1]

    def disc_block_channels(self, resolution: int) -> Tuple[int, int]:
        return self.disc_channels[list(reversed(self.resolutions)).index(resolution)]

    def is_combined(self, resolution: int) -> bool:
        """True when block `resolution` merges an incoming image via combine."""
        return resolution != self.final_resolution and resolution in self.connection_mask

    def combined_width(self, resolution: int) -> int:
        path, _ = self.disc_block_channels(resolution)
        if not self.is_combined(resolution):
            return path
        if self.combine_kind is CombineKind.SIMPLE:
            return path + 3
        if self.combine_kind is CombineKind.LIN_CAT:
            return path + lin_cat_width(path)
        return path

    def to_dict(self) -> Dict[str, object]:
        return {
            "final_resolution": self.final_resolution,
            "latent_dim": self.latent_dim,
            "gen_channels": [list(p) for p in self.gen_channels],
            "disc_channels": [list(p) for p in self.disc_channels],
            "combine_kind": self.combine_kind.value,
            "connection_mask": sorted(self.connection_mask),
            "loss_kind": self.loss_kind.value,
            "channel_cap": self.channel_cap,
            "equalized_lr": self.equalized_lr,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "ArchitectureSpec":
        return cls(
            final_resolution=int(data["final_resolution"]),
            latent_dim=int(data["latent_dim"]),
            gen_channels=tuple(tuple(p) for p in data["gen_channels"]),
            disc_channels=tuple(tuple(p) for p in data["disc_channels"]),
            combine_kind=CombineKind(data["combine_kind"]),
            connection_mask=frozenset(int(r) for r in data["connection_mask"]),
            loss_kind=LossKind(data["loss_kind"]),
            channel_cap=data.get("channel_cap"),
            equalized_lr=bool(data.get("equalized_lr", True)),
        )


def lin_cat_width(path_channels: int) -> int:
    return max(1, path_channels // 2)


def resolve_architecture(final_resolution: int, latent_dim: int = 512, combine_kind: str = "simple",
                         connection_mode: str = "all", loss_kind: str = "wgan_gp",
                         channel_cap: Optional[int] = None, equalized_lr: bool = True) -> ArchitectureSpec:
    schedule = resolution_schedule(final_resolution)
    try:
        combine = CombineKind(str(combine_kind).lower())
    except ValueError:
        raise ConfigError("combine_kind", f"{combine_kind!r} is not one of {', '.join(k.value for k in CombineKind)}")
    try:
        loss = LossKind(str(loss_kind).lower())
    except ValueError:
        raise ConfigError("loss_kind", f"{loss_kind!r} is not one of {', '.join(k.value for k in LossKind)}")
    return ArchitectureSpec(
        final_resolution=final_resolution,
        latent_dim=latent_dim,
        gen_channels=tuple(generator_channel_schedule(final_resolution, latent_dim, channel_cap)),
        disc_channels=tuple(discriminator_channel_schedule(final_resolution, channel_cap)),
        combine_kind=combine,
        connection_mask=connection_mask(connection_mode, schedule),
        loss_kind=loss,
        channel_cap=channel_cap,
        equalized_lr=equalized_lr,
    )


class ParameterCount(NamedTuple):
    generator: int
    discriminator: int

    @property
    def total(self) -> int:
        return self.generator + self.discriminator


def _conv(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def parameter_count(spec: ArchitectureSpec) -> ParameterCount:
    gen = 0
    for i, (cin, cout) in enumerate(spec.gen_channels):
        if i == 0:
            # dense latent -> 4x4 volume, one bias per channel
            gen += cin * cout * 16 + cout
        else:
            gen += _conv(cin, cout, 3)
        gen += _conv(cout, cout, 3)
        gen += _conv(cout, 3, 1)

    disc = 0
    top_path, _ = spec.disc_channels[0]
    disc += _conv(3, top_path, 1)
    for r, (path, out) in zip(reversed(spec.resolutions), spec.disc_channels):
        if spec.is_combined(r):
            if spec.combine_kind is CombineKind.LIN_CAT:
                disc += _conv(3, lin_cat_width(path), 1)
            elif spec.combine_kind is CombineKind.CAT_LIN:
                disc += _conv(path + 3, path, 1)
        width = spec.combined_width(r)
        disc += _conv(width + 1, path, 3)
        if r > 4:
            disc += _conv(path, out, 3)
        else:
            disc += _conv(path, out, 4)
            disc += out + 1
    return ParameterCount(gen, disc)


class TableRow(NamedTuple):
    block: int
    operation: str
    activation: str
    shape: Tuple[int, int, int]


def generator_table(spec: ArchitectureSpec) -> List[TableRow]:
    rows: List[TableRow] = []
    for i, (r, (cin, cout)) in enumerate(zip(spec.resolutions, spec.gen_channels), start=1):
        if i == 1:
            rows.append(TableRow(i, "Latent Vector", "Norm", (cin, 1, 1)))
            rows.append(TableRow(i, "Conv 4 x 4", "LReLU", (cout, 4, 4)))
        else:
            rows.append(TableRow(i, "Upsample", "-", (cin, r, r)))
            rows.append(TableRow(i, "Conv 3 x 3", "LReLU", (cout, r, r)))
        rows.append(TableRow(i, "Conv 3 x 3", "LReLU", (cout, r, r)))
        rows.append(TableRow(i, "ToRGB", "-", (3, r, r)))
    return rows


def discriminator_table(spec: ArchitectureSpec) -> List[TableRow]:
    rows: List[TableRow] = []
    top = spec.final_resolution
    for i, r in enumerate(reversed(spec.resolutions), start=1):
        path, out = spec.disc_block_channels(r)
        if r == top:
            rows.append(TableRow(i, "Raw RGB images", "-", (3, r, r)))
            rows.append(TableRow(i, "FromRGB", "-", (path, r, r)))
        elif spec.is_combined(r):
            rows.append(TableRow(i, "Raw RGB images", "-", (3, r, r)))
            rows.append(TableRow(i, f"Combine/{spec.combine_kind.value}", "-", (spec.combined_width(r), r, r)))
        width = spec.combined_width(r)
        rows.append(TableRow(i, "MinBatchStd", "-", (width + 1, r, r)))
        rows.append(TableRow(i, "Conv 3 x 3", "LReLU", (path, r, r)))
        if r > 4:
            rows.append(TableRow(i, "Conv 3 x 3", "LReLU", (out, r, r)))
            rows.append(TableRow(i, "AvgPool", "-", (out, r // 2, r // 2)))
        else:
            rows.append(TableRow(i, "Conv 4 x 4", "LReLU", (out, 1, 1)))
            rows.append(TableRow(i, "Fully Connected", "Linear", (1, 1, 1)))
    return rows


def format_table(rows: List[TableRow]) -> str:
    lines = [f"{'Block':>5}  {'Operation':<18} {'Act.':<7} Output Shape"]
    last = None
    for row in rows:
        block = f"{row.block}." if row.block != last else ""
        last = row.block
        c, h, w = row.shape
        lines.append(f"{block:>5}  {row.operation:<18} {row.activation:<7} {c} x {h} x {w}")
    return "\n".join(lines)


def architecture_summary(spec: ArchitectureSpec) -> str:
    counts = parameter_count(spec)
    parts = [
        f"final_resolution={spec.final_resolution} latent_dim={spec.latent_dim} "
        f"combine={spec.combine_kind.value} loss={spec.loss_kind.value} "
        f"connections={sorted(spec.connection_mask)}",
        "",
        "Generator",
        format_table(generator_table(spec)),
        "",
        "Discriminator",
        format_table(discriminator_table(spec)),
        "",
        f"parameters: generator={counts.generator:,} discriminator={counts.discriminator:,}",
    ]
    return "\n".join(parts)
