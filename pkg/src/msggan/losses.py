from __future__ import annotations
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import InvalidArgumentError
from .imageset import MultiScaleImageSet, check_image_set

Critic = Callable[[MultiScaleImageSet], Tensor]

DEFAULT_GP_WEIGHT = 10.0
DEFAULT_DRIFT = 0.001
DEFAULT_R1_GAMMA = 10.0


@dataclass
class LossReport:
    disc_loss: Tensor
    penalty: Tensor
    per_scale_penalties: Dict[int, Tensor]
    gen_loss: Optional[Tensor] = None
    rgb_grad_norms: Dict[int, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        return {
            "gen_loss": float(self.gen_loss) if self.gen_loss is not None else float("nan"),
            "disc_loss": float(self.disc_loss),
            "penalty": float(self.penalty),
        }

    def is_finite(self) -> bool:
        vals = [self.disc_loss, self.penalty] + ([self.gen_loss] if self.gen_loss is not None else [])
        return all(bool(torch.isfinite(v).all()) for v in vals)


def _check_aligned(real: MultiScaleImageSet, fake: MultiScaleImageSet) -> int:
    b_real = check_image_set(real, name="real")
    b_fake = check_image_set(fake, expected=real.keys(), name="fake")
    if b_real != b_fake:
        raise InvalidArgumentError(f"real/fake batch mismatch ({b_real} vs {b_fake})")
    return b_real


def scale_gradients(scores: Tensor, inputs: MultiScaleImageSet, create_graph: bool = True) -> Dict[int, Tensor]:
    """d(sum scores)/d(input) per scale; scales the critic ignores get zero gradients."""
    scales = sorted(inputs)
    if not scores.requires_grad:
        return {r: torch.zeros_like(inputs[r]) for r in scales}
    grads = torch.autograd.grad(outputs=scores.sum(), inputs=[inputs[r] for r in scales],
                                create_graph=create_graph, allow_unused=True)
    return {r: (g if g is not None else torch.zeros_like(inputs[r])) for r, g in zip(scales, grads)}


def _per_sample_norm(g: Tensor) -> Tensor:
    return g.flatten(1).norm(2, dim=1)


def _mean_of(values: Dict[int, Tensor]) -> Tensor:
    return torch.stack([values[r] for r in sorted(values)]).mean()


def interpolate_sets(real: MultiScaleImageSet, fake: MultiScaleImageSet, alpha: Dict[int, Tensor]) -> MultiScaleImageSet:
    out = {}
    for r in sorted(real):
        a = alpha[r].to(real[r]).view(-1, 1, 1, 1)
        out[r] = (a * real[r].detach() + (1 - a) * fake[r].detach()).requires_grad_(True)
    return out


def draw_alpha(batch: int, scales: List[int], per_scale: bool = False,
               generator: Optional[torch.Generator] = None) -> Dict[int, Tensor]:
    """One uniform alpha per sample, shared across scales unless `per_scale`."""
    if per_scale:
        return {r: torch.rand(batch, generator=generator) for r in scales}
    shared = torch.rand(batch, generator=generator)
    return {r: shared for r in scales}


def multiscale_gradient_penalty(critic: Critic, real: MultiScaleImageSet, fake: MultiScaleImageSet,
                                alpha: Optional[Dict[int, Tensor]] = None, per_scale_alpha: bool = False,
                                generator: Optional[torch.Generator] = None) -> Dict[int, Tensor]:
    batch = _check_aligned(real, fake)
    scales = sorted(real)
    if alpha is None:
        alpha = draw_alpha(batch, scales, per_scale_alpha, generator)
    mixed = interpolate_sets(real, fake, alpha)
    grads = scale_gradients(critic(mixed), mixed)
    return {r: (_per_sample_norm(grads[r]) - 1.0).square().mean() for r in scales}


def wgan_gp_disc_loss(critic: Critic, real: MultiScaleImageSet, fake: MultiScaleImageSet,
                      gp_weight: float = DEFAULT_GP_WEIGHT, drift: float = DEFAULT_DRIFT,
                      alpha: Optional[Dict[int, Tensor]] = None, per_scale_alpha: bool = False,
                      generator: Optional[torch.Generator] = None) -> LossReport:
    _check_aligned(real, fake)
    d_real = critic(real)
    d_fake = critic(fake)
    per_scale = multiscale_gradient_penalty(critic, real, fake, alpha, per_scale_alpha, generator)
    penalty = _mean_of(per_scale)
    loss = d_fake.mean() - d_real.mean() + gp_weight * penalty + drift * d_real.square().mean()
    return LossReport(disc_loss=loss, penalty=penalty, per_scale_penalties=per_scale)


def wgan_gen_loss(critic: Critic, fake: MultiScaleImageSet) -> Tensor:
    return -critic(fake).mean()


def real_gradient_penalty(critic: Critic, real: MultiScaleImageSet, one_sided: bool = False) -> Dict[int, Tensor]:
    """Per-scale penalty on real inputs: zero-centered ||g||^2, or max(0, ||g|| - 1)^2 when one-sided."""
    check_image_set(real, name="real")
    leaf = {r: x.detach().requires_grad_(True) for r, x in real.items()}
    grads = scale_gradients(critic(leaf), leaf)
    out = {}
    for r in sorted(leaf):
        norm = _per_sample_norm(grads[r])
        if one_sided:
            out[r] = F.relu(norm - 1.0).square().mean()
        else:
            out[r] = norm.square().mean()
    return out


def nonsat_disc_loss(critic: Critic, real: MultiScaleImageSet, fake: MultiScaleImageSet,
                     gamma: float = DEFAULT_R1_GAMMA, one_sided: bool = False) -> LossReport:
    _check_aligned(real, fake)
    d_real = critic(real)
    d_fake = critic(fake)
    per_scale = real_gradient_penalty(critic, real, one_sided)
    penalty = _mean_of(per_scale)
    loss = F.softplus(-d_real).mean() + F.softplus(d_fake).mean() + (gamma / 2.0) * penalty
    return LossReport(disc_loss=loss, penalty=penalty, per_scale_penalties=per_scale)


def nonsat_gen_loss(critic: Critic, fake: MultiScaleImageSet) -> Tensor:
    return F.softplus(-critic(fake)).mean()


def nonsat_gp_losses(critic: Critic, real: MultiScaleImageSet, fake: MultiScaleImageSet,
                     gamma: float = DEFAULT_R1_GAMMA, one_sided: bool = False) -> LossReport:
    report = nonsat_disc_loss(critic, real, fake, gamma, one_sided)
    report.gen_loss = nonsat_gen_loss(critic, fake)
    return report
