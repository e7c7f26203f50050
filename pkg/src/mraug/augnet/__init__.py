"""Augmentation network: multi-resolution conditional generator, dual
discriminators (frozen feature extractor + conditional patch classifier),
composite loss with periodic weight rebalancing, training, and synthesis.
"""

from .losses import (
    LossWeights,
    adversarial_loss,
    perceptual_loss,
    pixel_loss,
    rebalance_weights,
    total_generator_loss,
)
from .models import FeatureExtractor, GeneratorConfig, MapGenerator, PatchDiscriminator
from .synth import SynthesisSource, synthesize_dataset
from .train import AugCheckpoint, AugTrainConfig, generate, train_augnet

__all__ = [
    "AugCheckpoint",
    "AugTrainConfig",
    "FeatureExtractor",
    "GeneratorConfig",
    "LossWeights",
    "MapGenerator",
    "PatchDiscriminator",
    "SynthesisSource",
    "adversarial_loss",
    "generate",
    "perceptual_loss",
    "pixel_loss",
    "rebalance_weights",
    "synthesize_dataset",
    "total_generator_loss",
    "train_augnet",
]
