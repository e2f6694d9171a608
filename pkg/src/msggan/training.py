from __future__ import annotations
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import torch
from torch import Tensor

from .arch_spec import LossKind
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, write_config
from .console import Printer, or_silent
from .data import BatchStream, RealBatch, load_dataset, source_from_config
from .errors import InvalidArgumentError, MsgGanError, TrainingDivergenceError
from .generator import sample_latent
from .imageset import MultiScaleImageSet, check_image_set, select_scales
from .losses import LossReport, nonsat_disc_loss, nonsat_gen_loss, wgan_gen_loss, wgan_gp_disc_loss
from .metrics import (FeatureStats, extract, feature_stats, frechet_distance, generate_images,
                      make_extractor, sample_grid, save_snapshot)
from .state import EVAL_SEED_OFFSET, TrainingState, build_state

METRICS_FILENAME = "metrics.csv"
SCALE_STATS_FILENAME = "scale_stats.csv"
SUMMARY_FILENAME = "summary.csv"
METRICS_COLUMNS = ("step", "real_images_shown", "gen_loss", "disc_loss", "penalty")
SCALE_STATS_COLUMNS = ("step", "scale", "rgb_grad_norm", "penalty")
SUMMARY_COLUMNS = ("label", "status", "steps", "real_images_shown", "final_metric", "output_dir", "detail")


def init_training(config: ExperimentConfig, seed: Optional[int] = None,
                  device: Optional[torch.device] = None) -> TrainingState:
    if config.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
    return build_state(config, seed=seed, device=device)


# --- one optimization step -----------------------------------------------------------------------

def _disc_report(state: TrainingState, real: MultiScaleImageSet, fake: MultiScaleImageSet) -> LossReport:
    cfg = state.config
    if state.spec.loss_kind is LossKind.WGAN_GP:
        return wgan_gp_disc_loss(state.discriminator, real, fake, gp_weight=cfg.gp_weight, drift=cfg.drift,
                                 per_scale_alpha=cfg.per_scale_alpha, generator=state.rng)
    return nonsat_disc_loss(state.discriminator, real, fake, gamma=cfg.r1_gamma, one_sided=cfg.r1_one_sided)


def _gen_loss(state: TrainingState, fake: MultiScaleImageSet) -> Tensor:
    if state.spec.loss_kind is LossKind.WGAN_GP:
        return wgan_gen_loss(state.discriminator, fake)
    return nonsat_gen_loss(state.discriminator, fake)


def _check_real(state: TrainingState, real: RealBatch) -> None:
    top = state.spec.final_resolution
    if real.full.dim() != 4 or tuple(real.full.shape[1:]) != (3, top, top):
        raise InvalidArgumentError(f"real batch must be (batch, 3, {top}, {top}), got {tuple(real.full.shape)}")
    if real.batch_size != state.config.batch_size:
        raise InvalidArgumentError(f"real batch has {real.batch_size} images, config batch_size is {state.config.batch_size}")
    check_image_set(real.pyramid, state.spec.connection_mask, name="real pyramid")


def _head_grad_norms(state: TrainingState) -> Dict[int, float]:
    norms = {}
    for r, head in state.generator.rgb_heads().items():
        grads = [p.grad.detach().flatten() for p in head.parameters() if p.grad is not None]
        norms[r] = float(torch.cat(grads).norm()) if grads else 0.0
    return norms


@torch.no_grad()
def _update_ema(state: TrainingState) -> None:
    beta = state.config.gen_ema_beta
    for p_ema, p in zip(state.gen_ema.parameters(), state.generator.parameters()):
        p_ema.lerp_(p, 1.0 - beta)


def train_step(state: TrainingState, real: Union[RealBatch, Sequence[RealBatch]]) -> Tuple[TrainingState, LossReport]:
    """`disc_updates_per_step` discriminator updates (one per real batch), then one generator update."""
    batches = [real] if isinstance(real, RealBatch) else list(real)
    if len(batches) != state.config.disc_updates_per_step:
        raise InvalidArgumentError(
            f"expected {state.config.disc_updates_per_step} real batches per step, got {len(batches)}")
    mask = state.spec.connection_mask
    latent_dim = state.spec.latent_dim
    G, D = state.generator, state.discriminator

    report = None
    for rb in batches:
        _check_real(state, rb)
        rb = rb.to(state.device)
        z = sample_latent(rb.batch_size, latent_dim, generator=state.rng).to(state.device)
        with torch.no_grad():
            fake = select_scales(G(z), mask)
        report = _disc_report(state, rb.pyramid, fake)
        if not report.is_finite():
            raise TrainingDivergenceError(state.step, "discriminator loss is not finite")
        state.disc_opt.zero_grad(set_to_none=True)
        report.disc_loss.backward()
        state.disc_opt.step()
        state.real_images_shown += rb.batch_size

    # Generator update: critic parameters frozen so their grads stay untouched.
    D.requires_grad_(False)
    try:
        z = sample_latent(state.config.batch_size, latent_dim, generator=state.rng).to(state.device)
        gen_loss = _gen_loss(state, select_scales(G(z), mask))
        if not bool(torch.isfinite(gen_loss)):
            raise TrainingDivergenceError(state.step, "generator loss is not finite")
        state.gen_opt.zero_grad(set_to_none=True)
        gen_loss.backward()
        norms = _head_grad_norms(state)
        state.gen_opt.step()
    finally:
        D.requires_grad_(True)
    if state.gen_ema is not None:
        _update_ema(state)
    state.step += 1

    report = LossReport(
        disc_loss=report.disc_loss.detach(),
        penalty=report.penalty.detach(),
        per_scale_penalties={r: v.detach() for r, v in report.per_scale_penalties.items()},
        gen_loss=gen_loss.detach(),
        rgb_grad_norms=norms,
    )
    return state, report


# --- run loop ------------------------------------------------------------------------------------

class CsvLog:
    """Append-only CSV; the header is written once, when the file is created."""

    def __init__(self, path: Path, columns: Sequence[str], append: bool = False) -> None:
        self.path = path
        self.columns = list(columns)
        if not (append and path.exists()):
            with path.open("w", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow(self.columns)

    def write(self, row: Dict[str, object]) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow([_cell(row.get(c)) for c in self.columns])


def _cell(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


@dataclass
class TrainResult:
    state: TrainingState
    output_dir: Path
    checkpoint: Path
    metrics_path: Path
    metric_label: str
    final_metric: Optional[float] = None
    divergence: Optional[TrainingDivergenceError] = None
    snapshots: List[Path] = field(default_factory=list)


class _Evaluator:
    """Frechet distance of generated images to the training set under a fixed extractor."""

    def __init__(self, state: TrainingState, stream: BatchStream) -> None:
        cfg = state.config
        self.extractor = make_extractor(cfg.metric_extractor).to(state.device)
        self.label = self.extractor.label
        g = torch.Generator().manual_seed(cfg.seed + EVAL_SEED_OFFSET)
        self.real_stats: FeatureStats = feature_stats(extract(self.extractor, stream.sample(cfg.eval_samples, g)))
        self.latents = sample_latent(cfg.eval_samples, state.spec.latent_dim, generator=g)

    def __call__(self, state: TrainingState) -> float:
        fake = generate_images(state.eval_generator, self.latents)
        return frechet_distance(self.real_stats, feature_stats(extract(self.extractor, fake)))


def _checkpoint_path(out: Path, step: int) -> Path:
    return out / "checkpoints" / f"step_{step:08d}.zip"


def _snapshot(state: TrainingState, out: Path, epoch: int) -> Path:
    gen = state.eval_generator
    latents = state.fixed_eval_latents.to(state.device)
    with torch.no_grad():
        images = {r: x.detach().cpu().clone() for r, x in gen(latents).items()}
    sample_grid(gen, state.fixed_eval_latents, out / "grids" / f"epoch_{epoch:04d}.png")
    return save_snapshot(out / "snapshots" / f"epoch_{epoch:04d}.npz", epoch, images, state.fixed_eval_latents)


def train(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None,
          resume_from: Optional[Union[str, Path]] = None, printer: Optional[Printer] = None,
          warn: Optional[Printer] = None) -> TrainResult:
    """Train until `budget` real images have been shown; a divergence is checkpointed and returned, not raised."""
    log = or_silent(printer)
    warn = or_silent(warn)
    out = Path(out_dir or config.output_dir)
    if resume_from is None and (out / METRICS_FILENAME).exists():
        raise MsgGanError(f"{out} already holds a run; pick another --out or resume from its checkpoint")
    for sub in ("checkpoints", "grids", "snapshots"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_config(config, out)

    if resume_from is not None:
        state = load_checkpoint(resume_from, config=config)
        log(f"train.resume step={state.step} real_images_shown={state.real_images_shown} from={resume_from}")
    else:
        state = init_training(config)
    mask = sorted(state.spec.connection_mask)
    stream = load_dataset(source_from_config(config), config.batch_size, shuffle_seed=config.seed,
                          scales=mask, num_workers=config.num_workers, log=log, warn=warn)
    evaluate = _Evaluator(state, stream)
    append = resume_from is not None
    metrics = CsvLog(out / METRICS_FILENAME, METRICS_COLUMNS + (evaluate.label,), append=append)
    scale_stats = CsvLog(out / SCALE_STATS_FILENAME, SCALE_STATS_COLUMNS, append=append)
    log(f"train.start out={out} scales={mask} batches_per_epoch={len(stream)} budget={config.budget}")

    last_ckpt = _checkpoint_path(out, state.step)
    if state.step == 0:
        save_checkpoint(state, last_ckpt)
    result = TrainResult(state=state, output_dir=out, checkpoint=last_ckpt,
                         metrics_path=metrics.path, metric_label=evaluate.label)
    if state.real_images_shown >= config.budget:
        log("train.done nothing to do (budget reached)")
        return result

    n = config.disc_updates_per_step
    try:
        while state.real_images_shown < config.budget:
            batches = []
            for k in range(state.batches_consumed, state.batches_consumed + n):
                epoch, index = stream.position(k)
                if index == 0:
                    result.snapshots.append(_snapshot(state, out, epoch))
                    log(f"train.epoch epoch={epoch} step={state.step}")
                batches.append(stream.batch(epoch, index))
            state, report = train_step(state, batches)

            row = dict(report.as_row(), step=state.step, real_images_shown=state.real_images_shown)
            if config.eval_every and state.step % config.eval_every == 0:
                row[evaluate.label] = evaluate(state)
            if config.log_every and state.step % config.log_every == 0:
                metrics.write(row)
                for r in mask:
                    scale_stats.write({"step": state.step, "scale": r,
                                       "rgb_grad_norm": report.rgb_grad_norms.get(r, 0.0),
                                       "penalty": float(report.per_scale_penalties[r])})
                log(f"train.step step={state.step} shown={state.real_images_shown} "
                    f"d_loss={row['disc_loss']:.4f} g_loss={row['gen_loss']:.4f} penalty={row['penalty']:.4f}")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                last_ckpt = save_checkpoint(state, _checkpoint_path(out, state.step))
    except TrainingDivergenceError as e:
        warn(f"train.diverged step={e.step} {e}")
        result.divergence = e
        result.checkpoint = save_checkpoint(state, out / "checkpoints" / f"diverged_{state.step:08d}.zip")
        return result

    result.final_metric = evaluate(state)
    metrics.write({"step": state.step, "real_images_shown": state.real_images_shown,
                   evaluate.label: result.final_metric})
    final = _checkpoint_path(out, state.step)
    result.checkpoint = final if final == last_ckpt and final.exists() else save_checkpoint(state, final)
    log(f"train.done step={state.step} shown={state.real_images_shown} {evaluate.label}={result.final_metric:.4f}")
    return result


# --- sweeps --------------------------------------------------------------------------------------

@dataclass
class RunSummary:
    label: str
    status: str  # ok | diverged | failed
    output_dir: str
    steps: int = 0
    real_images_shown: int = 0
    final_metric: Optional[float] = None
    detail: str = ""

    def as_row(self) -> Dict[str, object]:
        return {"label": self.label, "status": self.status, "steps": self.steps,
                "real_images_shown": self.real_images_shown, "final_metric": self.final_metric,
                "output_dir": self.output_dir, "detail": self.detail}


def run_many(runs: Iterable[Tuple[str, ExperimentConfig]], printer: Optional[Printer] = None,
             warn: Optional[Printer] = None) -> List[RunSummary]:
    """Train each labelled config in turn; a failing run is recorded and its siblings continue."""
    log = or_silent(printer)
    warn = or_silent(warn)
    rows = []
    for label, cfg in runs:
        log(f"sweep.run label={label} out={cfg.output_dir}")
        try:
            res = train(cfg, printer=printer, warn=warn)
        except (MsgGanError, RuntimeError, OSError) as e:
            warn(f"sweep.failed label={label} {type(e).__name__}: {e}")
            rows.append(RunSummary(label=label, status="failed", output_dir=cfg.output_dir, detail=str(e)))
            continue
        rows.append(RunSummary(
            label=label,
            status="diverged" if res.divergence is not None else "ok",
            output_dir=str(res.output_dir),
            steps=res.state.step,
            real_images_shown=res.state.real_images_shown,
            final_metric=res.final_metric,
            detail=str(res.divergence or ""),
        ))
    return rows


def write_summary(rows: Sequence[RunSummary], path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.exists():
        p.unlink()
    table = CsvLog(p, SUMMARY_COLUMNS)
    for row in rows:
        table.write(row.as_row())
    return p


def format_summary(rows: Sequence[RunSummary], metric_label: str = "final_metric") -> str:
    header = ("label", "status", "steps", metric_label)
    body = [(r.label, r.status, str(r.steps), "-" if r.final_metric is None else f"{r.final_metric:.4f}")
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in body]
    return "\n".join(lines)


def lr_sweep(config: ExperimentConfig, lrs: Sequence[float], out_dir: Optional[Union[str, Path]] = None,
             printer: Optional[Printer] = None, warn: Optional[Printer] = None) -> List[RunSummary]:
    """Independent runs per learning rate under one shared seed."""
    if not lrs:
        raise InvalidArgumentError("lr_sweep needs at least one learning rate")
    root = Path(out_dir or config.output_dir)
    runs = [(f"lr={lr:g}", config.replace(lr=float(lr), output_dir=str(root / f"lr_{lr:g}"))) for lr in lrs]
    rows = run_many(runs, printer=printer, warn=warn)
    write_summary(rows, root / SUMMARY_FILENAME)
    return rows
