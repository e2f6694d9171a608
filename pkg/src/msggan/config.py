from __future__ import annotations
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch

from .errors import ConfigError

DEVICE_ENV = "MSGGAN_DEVICE"
CONFIG_FILENAME = "config.json"

DATASET_KINDS = ("synthetic", "image_folder", "cifar10_archive")
COMBINE_KINDS = ("simple", "lin_cat", "cat_lin")
CONNECTION_MODES = ("none", "coarse", "middle", "fine", "all")
LOSS_KINDS = ("wgan_gp", "nonsat_gp")
EXTRACTORS = ("random_projection", "inception")


# Defaults for every accepted key; appconfig.json and user files may only override these.
def _default_config() -> Dict[str, Any]:
    return {
        "dataset_kind": "synthetic",  # synthetic | image_folder | cifar10_archive
        "dataset_root": None,
        "dataset_size": None,  # null: 512 synthetic images, or every image of the source
        "dataset_download": False,
        "final_resolution": 32,
        "latent_dim": 512,
        "channel_cap": None,  # null keeps the full channel tables
        "equalized_lr": True,
        "combine_kind": "simple",  # simple | lin_cat | cat_lin
        "connection_mode": "all",  # none | coarse | middle | fine | all
        "loss_kind": "wgan_gp",  # wgan_gp | nonsat_gp
        "lr": 0.003,
        "rmsprop_alpha": 0.99,
        "rmsprop_eps": 1e-8,
        "batch_size": 16,
        "disc_updates_per_step": 1,
        "budget": 100000,  # real images shown
        "seed": 0,
        "output_dir": "runs/default",
        "metric_extractor": "random_projection",
        "checkpoint_every": 1000,  # steps; 0 keeps only the initial and final checkpoints
        "log_every": 50,
        "eval_every": 1000,
        "eval_samples": 512,
        "gp_weight": 10.0,
        "drift": 0.001,
        "r1_gamma": 10.0,
        "r1_one_sided": False,
        "per_scale_alpha": False,
        "gen_ema_beta": 0.0,  # 0 disables generator averaging
        "num_workers": 0,
        "deterministic": True,
        "device": "auto",
    }


_ENUMS = {
    "dataset_kind": DATASET_KINDS,
    "combine_kind": COMBINE_KINDS,
    "connection_mode": CONNECTION_MODES,
    "loss_kind": LOSS_KINDS,
    "metric_extractor": EXTRACTORS,
}

_POSITIVE_INTS = ("final_resolution", "latent_dim", "batch_size", "disc_updates_per_step",
                  "eval_samples")
_NON_NEGATIVE_INTS = ("budget", "checkpoint_every", "log_every", "eval_every", "num_workers")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_kind: str
    dataset_root: Optional[str]
    dataset_size: Optional[int]
    dataset_download: bool
    final_resolution: int
    latent_dim: int
    channel_cap: Optional[int]
    equalized_lr: bool
    combine_kind: str
    connection_mode: str
    loss_kind: str
    lr: float
    rmsprop_alpha: float
    rmsprop_eps: float
    batch_size: int
    disc_updates_per_step: int
    budget: int
    seed: int
    output_dir: str
    metric_extractor: str
    checkpoint_every: int
    log_every: int
    eval_every: int
    eval_samples: int
    gp_weight: float
    drift: float
    r1_gamma: float
    r1_one_sided: bool
    per_scale_alpha: bool
    gen_ema_beta: float
    num_workers: int
    deterministic: bool
    device: str

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        merged = _default_config()
        for k, v in data.items():
            if k not in merged:
                raise ConfigError(k, "unknown key")
            merged[k] = v
        return cls(**_coerce(merged))

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def architecture(self):
        # Local import: arch_spec depends on the enum constants above.
        from .arch_spec import resolve_architecture
        return resolve_architecture(
            final_resolution=self.final_resolution,
            latent_dim=self.latent_dim,
            combine_kind=self.combine_kind,
            connection_mode=self.connection_mode,
            loss_kind=self.loss_kind,
            channel_cap=self.channel_cap,
            equalized_lr=self.equalized_lr,
        )

    def torch_device(self) -> torch.device:
        name = (self.device or "auto").lower()
        if name == "auto":
            return torch.device("cuda" if torch.cuda.is_available() else "cpu")
        try:
            dev = torch.device(name)
        except RuntimeError as e:
            raise ConfigError("device", str(e)) from e
        if dev.type == "cuda" and not torch.cuda.is_available():
            raise ConfigError("device", f"'{name}' requested but CUDA is not available (set {DEVICE_ENV}=cpu)")
        return dev


def _coerce(data: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(data)
    for k, choices in _ENUMS.items():
        v = out[k]
        if not isinstance(v, str) or v.lower() not in choices:
            raise ConfigError(k, f"{v!r} is not one of {', '.join(choices)}")
        out[k] = v.lower()
    for k in _POSITIVE_INTS + _NON_NEGATIVE_INTS + ("seed",):
        v = out[k]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(k, f"expected an integer, got {v!r}")
    for k in _POSITIVE_INTS:
        if out[k] < 1:
            raise ConfigError(k, "must be >= 1")
    for k in _NON_NEGATIVE_INTS:
        if out[k] < 0:
            raise ConfigError(k, "must be >= 0")
    for k in ("lr", "rmsprop_alpha", "rmsprop_eps", "gp_weight", "drift", "r1_gamma", "gen_ema_beta"):
        v = out[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(k, f"expected a number, got {v!r}")
        if v < 0:
            raise ConfigError(k, "must be >= 0")
        out[k] = float(v)
    if out["gen_ema_beta"] >= 1.0:
        raise ConfigError("gen_ema_beta", "must be < 1")
    for k in ("dataset_download", "equalized_lr", "r1_one_sided", "per_scale_alpha", "deterministic"):
        if not isinstance(out[k], bool):
            raise ConfigError(k, f"expected true/false, got {out[k]!r}")
    cap = out["channel_cap"]
    if cap is not None and (isinstance(cap, bool) or not isinstance(cap, int) or cap < 2):
        raise ConfigError("channel_cap", "must be null or an integer >= 2")
    size = out["dataset_size"]
    if size is not None and (isinstance(size, bool) or not isinstance(size, int) or size < 1):
        raise ConfigError("dataset_size", "must be null or an integer >= 1")
    for k in ("dataset_root", "output_dir", "device"):
        if out[k] is not None and not isinstance(out[k], str):
            raise ConfigError(k, f"expected a string, got {out[k]!r}")
    if out["dataset_kind"] != "synthetic" and not out["dataset_root"]:
        raise ConfigError("dataset_root", f"required for dataset_kind '{out['dataset_kind']}'")
    return out


def env_overrides(data: Dict[str, Any]) -> Dict[str, Any]:
    dev = os.getenv(DEVICE_ENV)
    if dev:
        data["device"] = dev
    return data


def load_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None,
                output_dir: Optional[str] = None) -> ExperimentConfig:
    """Read a flat JSON config, reject unknown keys, apply env and CLI overrides, validate."""
    data: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        try:
            with p.open("r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError("--config", f"file not found: {p}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("--config", f"not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("--config", "top level must be a JSON object")
    data = env_overrides(dict(data))
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    cfg = ExperimentConfig.from_dict(data)
    # Architecture errors surface before any work starts.
    cfg.architecture()
    return cfg


def write_config(cfg: ExperimentConfig, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / CONFIG_FILENAME
    p.write_text(cfg.to_json() + "\n", encoding="utf-8")
    return p
