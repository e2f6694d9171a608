from __future__ import annotations
import copy
from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor

from .arch_spec import ArchitectureSpec
from .config import ExperimentConfig
from .discriminator import MultiScaleDiscriminator
from .generator import MultiScaleGenerator, sample_latent

FIXED_EVAL_LATENTS = 36
# Offsets keep the fixed-latent and evaluation streams independent of the training stream.
FIXED_LATENT_SEED_OFFSET = 7919
EVAL_SEED_OFFSET = 104729


@dataclass
class TrainingState:
    config: ExperimentConfig
    spec: ArchitectureSpec
    generator: MultiScaleGenerator
    discriminator: MultiScaleDiscriminator
    gen_opt: torch.optim.Optimizer
    disc_opt: torch.optim.Optimizer
    rng: torch.Generator
    fixed_eval_latents: Tensor
    device: torch.device
    step: int = 0
    real_images_shown: int = 0
    gen_ema: Optional[MultiScaleGenerator] = None

    @property
    def eval_generator(self) -> MultiScaleGenerator:
        return self.gen_ema if self.gen_ema is not None else self.generator

    @property
    def batches_consumed(self) -> int:
        return self.step * self.config.disc_updates_per_step


def make_optimizer(params, config: ExperimentConfig) -> torch.optim.Optimizer:
    return torch.optim.RMSprop(params, lr=config.lr, alpha=config.rmsprop_alpha, eps=config.rmsprop_eps)


def build_state(config: ExperimentConfig, seed: Optional[int] = None,
                device: Optional[torch.device] = None) -> TrainingState:
    """Fresh networks (weights ~ N(0, 1), zero biases), zeroed optimizer moments, seeded streams."""
    seed = config.seed if seed is None else seed
    spec = config.architecture()
    device = device or config.torch_device()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        generator = MultiScaleGenerator(spec)
        discriminator = MultiScaleDiscriminator(spec)
    generator.to(device)
    discriminator.to(device)
    gen_ema = None
    if config.gen_ema_beta > 0:
        gen_ema = copy.deepcopy(generator).requires_grad_(False)
    fixed = sample_latent(FIXED_EVAL_LATENTS, spec.latent_dim,
                          generator=torch.Generator().manual_seed(seed + FIXED_LATENT_SEED_OFFSET))
    return TrainingState(
        config=config,
        spec=spec,
        generator=generator,
        discriminator=discriminator,
        gen_opt=make_optimizer(generator.parameters(), config),
        disc_opt=make_optimizer(discriminator.parameters(), config),
        rng=torch.Generator().manual_seed(seed),
        fixed_eval_latents=fixed,
        device=device,
        gen_ema=gen_ema,
    )
