from __future__ import annotations
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import torch

from .arch_spec import architecture_summary
from .checkpoint import load_checkpoint
from .config import COMBINE_KINDS, CONNECTION_MODES, ExperimentConfig
from .console import Printer, or_silent
from .data import load_dataset, source_from_config
from .errors import ConfigError
from .generator import sample_latent
from .metrics import (STABILITY_PIXEL_RANGE, curve_slope, extract, fid_between,
                      generate_images, inception_score, make_extractor, plot_stability, sample_grid,
                      stability_curve, write_stability_csv)
from .training import (SUMMARY_FILENAME, RunSummary, TrainResult, format_summary, lr_sweep, run_many, train,
                       write_summary)

PathLike = Union[str, Path]


def cmd_train(config: ExperimentConfig, resume_from: Optional[PathLike] = None,
              printer: Optional[Printer] = None, warn: Optional[Printer] = None) -> TrainResult:
    """Train and write artifacts; a divergence is re-raised after its checkpoint is on disk."""
    result = train(config, resume_from=resume_from, printer=printer, warn=warn)
    if result.divergence is not None:
        raise result.divergence
    or_silent(printer)(f"train.artifacts checkpoint={result.checkpoint} metrics={result.metrics_path}")
    return result


def cmd_sample(checkpoint: PathLike, n: int, seed: int, out_dir: PathLike,
               printer: Optional[Printer] = None) -> List[Path]:
    if n < 1:
        raise ConfigError("--n", "must be >= 1")
    state = load_checkpoint(checkpoint)
    latents = sample_latent(n, state.spec.latent_dim, generator=torch.Generator().manual_seed(seed))
    written = sample_grid(state.eval_generator, latents, Path(out_dir) / f"samples_seed{seed}_n{n}.png")
    for p in written:
        or_silent(printer)(f"sample.wrote {p}")
    return written


def cmd_evaluate(checkpoint: PathLike, n: int = 512, config: Optional[ExperimentConfig] = None,
                 extractor: Optional[str] = None, seed: int = 0, out_dir: Optional[PathLike] = None,
                 printer: Optional[Printer] = None, warn: Optional[Printer] = None) -> Dict[str, float]:
    """FID-proxy (or exact FID with the inception extractor) and IS of `n` generated images vs the dataset."""
    if n < 2:
        raise ConfigError("--n", "need at least 2 images for feature statistics")
    log = or_silent(printer)
    state = load_checkpoint(checkpoint)
    data_cfg = config or state.config
    stream = load_dataset(source_from_config(data_cfg), batch_size=1, shuffle_seed=data_cfg.seed,
                          num_workers=data_cfg.num_workers, log=printer, warn=warn)
    ext = make_extractor(extractor or data_cfg.metric_extractor).to(state.device)
    g = torch.Generator().manual_seed(seed)
    real = stream.sample(n, g)
    fake = generate_images(state.eval_generator, sample_latent(n, state.spec.latent_dim, generator=g))
    score = fid_between(ext, real, fake)
    is_mean, is_std = inception_score(extract(ext, fake, probs=True))
    result = {ext.label: score, "is_mean": is_mean, "is_std": is_std,
              "step": float(state.step), "samples": float(n)}
    log(f"eval.result step={state.step} {ext.label}={score:.4f} is={is_mean:.3f}+-{is_std:.3f}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"evaluation_step{state.step:08d}.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                                                   encoding="utf-8")
    return result


def cmd_stability(run_dir: PathLike, printer: Optional[Printer] = None) -> Dict[int, float]:
    """Write stability.csv and stability.png for a run; returns the tail slope per scale."""
    log = or_silent(printer)
    run = Path(run_dir)
    curve = stability_curve(run / "snapshots")
    csv_path = write_stability_csv(curve, run / "stability.csv")
    plot_stability(curve, run / "stability.png")
    slopes = {r: curve_slope(curve, r) for r in sorted(next(iter(curve.values())))}
    log(f"stability.wrote {csv_path} epochs={len(curve) + 1} pixels={STABILITY_PIXEL_RANGE}")
    for r, s in slopes.items():
        log(f"stability.slope scale={r} slope={s:.3e}")
    return slopes


def _dedupe(values: Sequence[str], name: str, allowed: Sequence[str], warn: Printer) -> List[str]:
    out: List[str] = []
    for v in values:
        key = str(v).lower()
        if key not in allowed:
            raise ConfigError(name, f"{v!r} is not one of {', '.join(allowed)}")
        if key in out:
            warn(f"{name}.duplicate {key} dropped")
            continue
        out.append(key)
    if not out:
        raise ConfigError(name, "need at least one value")
    return out


def _report(rows: List[RunSummary], root: Path, printer: Optional[Printer]) -> List[RunSummary]:
    write_summary(rows, root / SUMMARY_FILENAME)
    table = format_summary(rows)
    (root / "summary.txt").write_text(table + "\n", encoding="utf-8")
    log = or_silent(printer)
    for line in table.splitlines():
        log(line)
    return rows


def cmd_ablate(config: ExperimentConfig, modes: Sequence[str], out_dir: Optional[PathLike] = None,
               printer: Optional[Printer] = None, warn: Optional[Printer] = None) -> List[RunSummary]:
    """One run per connection mode under the shared seed."""
    modes = _dedupe(modes, "modes", CONNECTION_MODES, or_silent(warn))
    root = Path(out_dir or config.output_dir)
    runs = []
    for mode in modes:
        cfg = config.replace(connection_mode=mode, output_dir=str(root / f"mode_{mode}"))
        cfg.architecture()
        runs.append((mode, cfg))
    return _report(run_many(runs, printer=printer, warn=warn), root, printer)


def cmd_sweep_combine(config: ExperimentConfig, kinds: Sequence[str], out_dir: Optional[PathLike] = None,
                      printer: Optional[Printer] = None, warn: Optional[Printer] = None) -> List[RunSummary]:
    kinds = _dedupe(kinds, "kinds", COMBINE_KINDS, or_silent(warn))
    root = Path(out_dir or config.output_dir)
    runs = [(kind, config.replace(combine_kind=kind, output_dir=str(root / f"combine_{kind}"))) for kind in kinds]
    return _report(run_many(runs, printer=printer, warn=warn), root, printer)


def cmd_sweep_lr(config: ExperimentConfig, lrs: Sequence[float], out_dir: Optional[PathLike] = None,
                 printer: Optional[Printer] = None, warn: Optional[Printer] = None) -> List[RunSummary]:
    root = Path(out_dir or config.output_dir)
    rows = lr_sweep(config, lrs, root, printer=printer, warn=warn)
    table = format_summary(rows)
    (root / "summary.txt").write_text(table + "\n", encoding="utf-8")
    for line in table.splitlines():
        or_silent(printer)(line)
    return rows


def cmd_arch(config: ExperimentConfig) -> str:
    return architecture_summary(config.architecture())
