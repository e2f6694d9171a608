from __future__ import annotations
import io
import json
import zipfile
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
from torch import nn

from .arch_spec import ArchitectureSpec
from .config import ExperimentConfig, env_overrides
from .errors import CheckpointVersionError, ConfigError, MsgGanError
from .state import TrainingState, build_state

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
# Fixed entry timestamp so identical payloads produce identical archives.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _f32(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().to(torch.float32).numpy().astype("<f4")


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _model_blocks(prefix: str, model: nn.Module) -> Dict[str, np.ndarray]:
    return {f"{prefix}/{name}": _f32(p) for name, p in model.named_parameters()}


def _optimizer_blocks(prefix: str, model: nn.Module, opt: torch.optim.Optimizer):
    blocks: Dict[str, np.ndarray] = {}
    steps: Dict[str, int] = {}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        blocks[f"{prefix}/{name}/square_avg"] = _f32(st["square_avg"])
        steps[name] = int(st["step"])
    return blocks, steps


def checkpoint_payload(state: TrainingState):
    """(manifest, blocks) describing the full training state."""
    blocks: Dict[str, np.ndarray] = {}
    blocks.update(_model_blocks("gen", state.generator))
    blocks.update(_model_blocks("disc", state.discriminator))
    if state.gen_ema is not None:
        blocks.update(_model_blocks("gen_ema", state.gen_ema))
    gen_opt_blocks, gen_steps = _optimizer_blocks("opt_gen", state.generator, state.gen_opt)
    disc_opt_blocks, disc_steps = _optimizer_blocks("opt_disc", state.discriminator, state.disc_opt)
    blocks.update(gen_opt_blocks)
    blocks.update(disc_opt_blocks)
    blocks["fixed_eval_latents"] = _f32(state.fixed_eval_latents)
    blocks["rng"] = state.rng.get_state().numpy().astype(np.uint8)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": state.spec.to_dict(),
        "config": state.config.to_dict(),
        "config_hash": state.config.config_hash(),
        "counters": {"step": state.step, "real_images_shown": state.real_images_shown},
        "optimizer_steps": {"gen": gen_steps, "disc": disc_steps},
        "blocks": sorted(blocks),
    }
    return manifest, blocks


def write_archive(path: Union[str, Path], manifest: dict, blocks: Dict[str, np.ndarray]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, MANIFEST, json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(blocks):
            _write_entry(zf, f"{name}.npy", _npy_bytes(blocks[name]))
    tmp.replace(p)
    return p


def save_checkpoint(state: TrainingState, path: Union[str, Path]) -> Path:
    manifest, blocks = checkpoint_payload(state)
    return write_archive(path, manifest, blocks)


def read_archive(path: Union[str, Path]):
    p = Path(path)
    if not p.is_file():
        raise MsgGanError(f"checkpoint not found: {p}")
    with zipfile.ZipFile(p, "r") as zf:
        manifest = json.loads(zf.read(MANIFEST).decode("utf-8"))
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(version, FORMAT_VERSION)
        blocks = {name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
                  for name in manifest["blocks"]}
    return manifest, blocks


def _load_model(prefix: str, model: nn.Module, blocks: Dict[str, np.ndarray]) -> None:
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"{prefix}/{name}"
            if key not in blocks:
                raise MsgGanError(f"checkpoint lacks parameter block '{key}'")
            src = torch.from_numpy(blocks[key].copy())
            if src.shape != p.shape:
                raise MsgGanError(f"block '{key}' has shape {tuple(src.shape)}, model expects {tuple(p.shape)}")
            p.copy_(src.to(p.dtype))


def _load_optimizer(prefix: str, model: nn.Module, opt: torch.optim.Optimizer,
                    blocks: Dict[str, np.ndarray], steps: Dict[str, int]) -> None:
    sd = opt.state_dict()
    restored = {}
    for i, (name, _p) in enumerate(model.named_parameters()):
        key = f"{prefix}/{name}/square_avg"
        if key in blocks:
            restored[i] = {"step": torch.tensor(float(steps[name])),
                           "square_avg": torch.from_numpy(blocks[key].copy())}
    sd["state"] = restored
    opt.load_state_dict(sd)


def load_checkpoint(path: Union[str, Path], config: Optional[ExperimentConfig] = None,
                    device: Optional[torch.device] = None) -> TrainingState:
    """Rebuild a TrainingState; `config` may change run-level fields (budget, cadence) but not the architecture."""
    manifest, blocks = read_archive(path)
    # MSGGAN_DEVICE applies to saved configs as well.
    saved_config = ExperimentConfig.from_dict(env_overrides(dict(manifest["config"])))
    config = config or saved_config
    spec = ArchitectureSpec.from_dict(manifest["spec"])
    if config.architecture() != spec:
        raise ConfigError("final_resolution", "config architecture does not match the checkpoint")
    state = build_state(config, seed=saved_config.seed, device=device)
    _load_model("gen", state.generator, blocks)
    _load_model("disc", state.discriminator, blocks)
    if state.gen_ema is not None:
        _load_model("gen_ema" if "gen_ema" in {k.split("/", 1)[0] for k in blocks} else "gen", state.gen_ema, blocks)
    _load_optimizer("opt_gen", state.generator, state.gen_opt, blocks, manifest["optimizer_steps"]["gen"])
    _load_optimizer("opt_disc", state.discriminator, state.disc_opt, blocks, manifest["optimizer_steps"]["disc"])
    state.fixed_eval_latents = torch.from_numpy(blocks["fixed_eval_latents"].copy())
    state.rng.set_state(torch.from_numpy(blocks["rng"].copy()))
    state.step = int(manifest["counters"]["step"])
    state.real_images_shown = int(manifest["counters"]["real_images_shown"])
    return state
