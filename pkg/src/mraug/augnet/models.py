"""Network modules for the augmentation GAN.

The generator is a stack of components, one per resolution: the lowest
consumes the 4x4 one-hot brain map, every later one upsamples the previous
features x2, concatenates the same-resolution one-hot map, and applies a
residual block (two 3x3 convolutions with layer normalization and a leaky
rectifier, plus a shortcut).  A final 1x1 convolution projects to one image
channel.  Layer normalization over (C, H, W) is realized as single-group
GroupNorm, which keeps it resolution independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..brainmap import N_MAP_LABELS

LRELU_SLOPE = 0.2


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    top_resolution: int = 64  # 256 for full fidelity
    base_features: int = 16
    map_channels: int = N_MAP_LABELS
    out_channels: int = 1

    def __post_init__(self):
        k = math.log2(self.top_resolution / 4)
        if self.top_resolution < 4 or abs(k - round(k)) > 1e-9:
            raise ModelConfigError(f"top_resolution {self.top_resolution} is not 4*2^k")
        if self.base_features < 8:
            raise ModelConfigError("base_features must be >= 8")

    @property
    def levels(self) -> int:
        return int(round(math.log2(self.top_resolution / 4))) + 1

    def level_features(self, i: int) -> int:
        # widest at the 4x4 component, halving per level down to
        # base_features at the top, capped at base_features * 2^4
        return self.base_features * 2 ** min(self.levels - 1 - i, 4)


def _layer_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(1, channels)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = _layer_norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = _layer_norm(out_ch)
        self.act = nn.LeakyReLU(LRELU_SLOPE)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.skip(x))


class MapGenerator(nn.Module):
    """Conditional generator over a one-hot brain-map pyramid."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        blocks = []
        for i in range(config.levels):
            in_ch = config.map_channels if i == 0 else (
                config.level_features(i - 1) + config.map_channels)
            blocks.append(ResidualBlock(in_ch, config.level_features(i)))
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(config.level_features(config.levels - 1),
                              config.out_channels, 1)
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, pyramid: list[torch.Tensor]) -> torch.Tensor:
        if len(pyramid) != self.config.levels:
            raise ModelConfigError(
                f"pyramid has {len(pyramid)} levels, config expects {self.config.levels}")
        top = pyramid[-1].shape[-1]
        if top != self.config.top_resolution:
            raise ModelConfigError(
                f"pyramid top resolution {top} != config {self.config.top_resolution}")
        x = self.blocks[0](pyramid[0])
        for block, maps in zip(self.blocks[1:], pyramid[1:]):
            x = self.upsample(x)
            x = torch.cat([x, maps], dim=1)
            x = block(x)
        return self.head(x)


class PatchDiscriminator(nn.Module):
    """Fully-convolutional patch classifier conditioned on the one-hot map."""

    def __init__(self, image_channels: int = 1, map_channels: int = N_MAP_LABELS,
                 features: int = 32):
        super().__init__()
        c = features
        self.net = nn.Sequential(
            nn.Conv2d(image_channels + map_channels, c, 4, stride=2, padding=1),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            _layer_norm(2 * c),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            _layer_norm(4 * c),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Conv2d(4 * c, 1, 3, padding=1),
        )

    def forward(self, image: torch.Tensor, map_onehot: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([image, map_onehot], dim=1))


# VGG-19 block structure through the first four pooling stages.
_VGG_BLOCKS = (2, 2, 4, 4)
FEATURE_LAYERS = tuple(f"pool{i + 1}" for i in range(len(_VGG_BLOCKS)))


class FeatureExtractor(nn.Module):
    """Frozen convolutional feature extractor for the perceptual loss.

    VGG-19 topology through pool4.  Weights are either loaded from a local
    state-dict file or drawn once from a fixed seed, so the extractor is
    deterministic across runs either way; it is never trained.
    """

    def __init__(self, base_width: int = 32, seed: int = 7,
                 weights_path: str | None = None):
        super().__init__()
        self.base_width = base_width
        self.seed = seed
        stages = []
        in_ch = 3
        for b, reps in enumerate(_VGG_BLOCKS):
            width = base_width * 2**b
            layers = []
            for _ in range(reps):
                layers += [nn.Conv2d(in_ch, width, 3, padding=1), nn.ReLU()]
                in_ch = width
            layers.append(nn.MaxPool2d(2))
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        if weights_path is not None:
            self.load_state_dict(torch.load(weights_path, map_location="cpu"))
        else:
            self._seeded_init(seed)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _seeded_init(self, seed: int) -> None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, a=0.0, nonlinearity="relu")
                    nn.init.zeros_(m.bias)

    @property
    def layer_names(self) -> tuple[str, ...]:
        return FEATURE_LAYERS

    def forward(self, image: torch.Tensor) -> dict[str, torch.Tensor]:
        """Feature maps after each pooling stage; single-channel input is
        replicated to the three expected channels."""
        x = image
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        features = {}
        for name, stage in zip(FEATURE_LAYERS, self.stages):
            x = stage(x)
            features[name] = x
        return features
