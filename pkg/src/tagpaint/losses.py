"""Loss terms and the two-step changing-loss composition.

The segmentation step trains with adversarial + reconstruction losses
only; the colorization step (and the brightness fine-tune) adds the
per-tag classification loss on both discriminator and generator sides.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch

PROB_CLAMP = 1e-7


class TrainingStep(str, Enum):
    segmentation = "segmentation"
    colorization = "colorization"
    brightness_finetune = "brightness_finetune"


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1000.0
    lambda_cls: float = 1.0
    beta: float = 0.9

    def __post_init__(self):
        for name in ("lambda_rec", "lambda_cls", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)


def adv_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Batch mean of log D(real) + log(1 - D(fake)); in (-inf, 0].

    The discriminator maximizes this (it trains on its negation); the
    generator minimizes it through the log(1 - D) term.
    """
    return torch.log(_clamp(d_real)).mean() + torch.log1p(-_clamp(d_fake)).mean()


def generator_adv_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective: -mean log D(fake)."""
    return -torch.log(_clamp(d_fake)).mean()


def rec_loss(y: torch.Tensor, g_f: torch.Tensor, g_g: torch.Tensor,
             beta: float) -> torch.Tensor:
    """Pixel-wise L1 to the real image for both generator outputs."""
    if y.shape != g_f.shape or y.shape != g_g.shape:
        raise ValueError("reconstruction inputs must share one shape")
    return (y - g_f).abs().mean() + beta * (y - g_g).abs().mean()


def cls_loss(cvt_probs: torch.Tensor, cit_probs: torch.Tensor,
             cvt_target: torch.Tensor, cit_target: torch.Tensor) -> torch.Tensor:
    """Per-tag binary NLL, summed over tags, averaged over the batch."""
    if cvt_probs.shape != cvt_target.shape:
        raise ValueError("cvt shapes differ")
    if cit_probs.shape != cit_target.shape:
        raise ValueError("cit shapes differ")
    total = cvt_probs.new_zeros(())
    for probs, target in ((cvt_probs, cvt_target), (cit_probs, cit_target)):
        if probs.numel() == 0:
            continue
        p = _clamp(probs)
        nll = -(target * torch.log(p) + (1 - target) * torch.log1p(-p))
        total = total + nll.sum(dim=1).mean()
    return total


@dataclass
class LossParts:
    """Per-batch loss values feeding the composition.

    ``l_cls_d`` carries both real- and fake-image classification terms;
    ``l_cls_g`` only the fake-image term (the real term is constant for
    the generator). ``l_cls`` sets both at once. ``l_adv_g`` substitutes
    the generator's adversarial term when the non-saturating variant is
    enabled.
    """

    l_adv: torch.Tensor
    l_rec: torch.Tensor
    l_cls_d: torch.Tensor | None = None
    l_cls_g: torch.Tensor | None = None
    l_cls: torch.Tensor | None = None
    l_adv_g: torch.Tensor | None = None

    def __post_init__(self):
        if self.l_cls is not None:
            if self.l_cls_d is None:
                self.l_cls_d = self.l_cls
            if self.l_cls_g is None:
                self.l_cls_g = self.l_cls


def compose_losses(step: TrainingStep, parts: LossParts,
                   weights: LossWeights) -> tuple[torch.Tensor, torch.Tensor]:
    """Changing-loss composition; returns (L_D, L_G) for the current step."""
    step = TrainingStep(step)
    gen_adv = parts.l_adv_g if parts.l_adv_g is not None else parts.l_adv
    if step is TrainingStep.segmentation:
        l_d = -parts.l_adv
        l_g = gen_adv + weights.lambda_rec * parts.l_rec
        return l_d, l_g
    if parts.l_cls_d is None or parts.l_cls_g is None:
        raise ValueError(f"{step.value} step requires classification losses")
    l_d = -parts.l_adv + weights.lambda_cls * parts.l_cls_d
    l_g = (gen_adv + weights.lambda_cls * parts.l_cls_g
           + weights.lambda_rec * parts.l_rec)
    return l_d, l_g
