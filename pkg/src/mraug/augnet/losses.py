"""Composite generator objective: per-pixel L1, multi-layer perceptual L1,
and non-saturating conditional patch-GAN terms, combined as a weighted sum
with periodic rebalancing so no term dominates.

Reduction note: the per-pixel and perceptual terms are computed as means
over elements (resolution-independent); the original sum convention is
available via ``reduction="sum"`` and the choice is recorded in checkpoint
metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .models import FEATURE_LAYERS, FeatureExtractor, PatchDiscriminator

WEIGHT_CLIP = (1e-4, 1e4)


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    """Weights for the generator objective; the per-pixel term anchors
    rebalancing and its weight never changes."""

    perceptual: dict[str, float] = field(
        default_factory=lambda: {name: 1.0 for name in FEATURE_LAYERS})
    pixel: float = 1.0
    adversarial: float = 0.05

    def __post_init__(self):
        values = [self.pixel, self.adversarial, *self.perceptual.values()]
        if any(v <= 0 for v in values):
            raise LossError(f"all loss weights must be > 0, got {self}")

    def to_dict(self) -> dict:
        return {"perceptual": dict(self.perceptual), "pixel": self.pixel,
                "adversarial": self.adversarial}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(perceptual=dict(d["perceptual"]), pixel=d["pixel"],
                   adversarial=d["adversarial"])


def _check_shapes(real: torch.Tensor, synthetic: torch.Tensor) -> None:
    if real.shape != synthetic.shape:
        raise LossError(f"shape mismatch: {tuple(real.shape)} vs {tuple(synthetic.shape)}")


def pixel_loss(real: torch.Tensor, synthetic: torch.Tensor,
               reduction: str = "mean") -> torch.Tensor:
    """L1 difference between real and synthetic images."""
    _check_shapes(real, synthetic)
    diff = (real - synthetic).abs()
    return diff.sum() if reduction == "sum" else diff.mean()


def perceptual_loss(real: torch.Tensor, synthetic: torch.Tensor,
                    extractor: FeatureExtractor,
                    layers: tuple[str, ...] = FEATURE_LAYERS,
                    layer_weights: dict[str, float] | None = None,
                    reduction: str = "mean"):
    """Weighted sum of per-layer L1 feature differences.

    Returns (total, per-layer dict of raw unweighted values).  Real
    features are detached; only the synthetic branch carries gradients.
    """
    _check_shapes(real, synthetic)
    unknown = [l for l in layers if l not in extractor.layer_names]
    if unknown:
        raise LossError(f"extractor has no layer(s) {unknown}; available: "
                        f"{list(extractor.layer_names)}")
    if layer_weights is None:
        layer_weights = {l: 1.0 for l in layers}
    with torch.no_grad():
        feats_real = extractor(real)
    feats_syn = extractor(synthetic)
    per_layer = {}
    total = real.new_zeros(())
    for layer in layers:
        diff = (feats_real[layer].detach() - feats_syn[layer]).abs()
        value = diff.sum() if reduction == "sum" else diff.mean()
        per_layer[layer] = value
        total = total + layer_weights[layer] * value
    return total, per_layer


def generator_adversarial(discriminator: PatchDiscriminator, synthetic: torch.Tensor,
                          map_onehot: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term: mean softplus(-D(fake, map))."""
    return F.softplus(-discriminator(synthetic, map_onehot)).mean()


def adversarial_loss(discriminator: PatchDiscriminator, real: torch.Tensor,
                     synthetic: torch.Tensor, map_onehot: torch.Tensor):
    """Non-saturating patch-GAN losses conditioned on the brain map.

    loss_d = mean softplus(-D(real)) + mean softplus(D(fake)), with the
    synthetic branch detached; loss_g = mean softplus(-D(fake)).
    """
    _check_shapes(real, synthetic)
    logits_real = discriminator(real, map_onehot)
    logits_fake_d = discriminator(synthetic.detach(), map_onehot)
    loss_d = F.softplus(-logits_real).mean() + F.softplus(logits_fake_d).mean()
    loss_g = generator_adversarial(discriminator, synthetic, map_onehot)
    return loss_d, loss_g


def total_generator_loss(perceptual_total: torch.Tensor, pixel: torch.Tensor,
                         adv_g: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Weighted objective; perceptual_total already carries its per-layer
    weights."""
    return perceptual_total + weights.pixel * pixel + weights.adversarial * adv_g


def rebalance_weights(history_means: dict[str, float], weights: LossWeights) -> LossWeights:
    """Rescale weights so each weighted term's recent mean matches the
    weighted per-pixel term's.

    ``history_means`` holds raw (unweighted) term averages keyed 'pixel',
    'perc_<layer>', 'adv_g'.  The pixel weight is the anchor and is left
    unchanged; a zero mean leaves that term's weight unchanged; results
    are clipped to [1e-4, 1e4].
    """
    if not history_means:
        raise LossError("empty loss history")
    if any(v < 0 for v in history_means.values()):
        raise LossError("negative loss averages in history")
    anchor = weights.pixel * history_means.get("pixel", 0.0)
    if anchor <= 0:
        return weights

    def rescaled(mean: float, current: float) -> float:
        if mean <= 0:
            return current
        return float(min(max(anchor / mean, WEIGHT_CLIP[0]), WEIGHT_CLIP[1]))

    new_perc = {layer: rescaled(history_means.get(f"perc_{layer}", 0.0), w)
                for layer, w in weights.perceptual.items()}
    new_adv = rescaled(history_means.get("adv_g", 0.0), weights.adversarial)
    return LossWeights(perceptual=new_perc, pixel=weights.pixel, adversarial=new_adv)
