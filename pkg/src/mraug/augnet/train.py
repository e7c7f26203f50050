"""Training loop for the per-modality augmentation GAN.

One model per MR modality, trained on paired (brain map, real slice)
samples from tumor-covering patches with left/right flip augmentation.
Discriminator and generator alternate each batch; loss weights are
rebalanced every ten epochs against the per-pixel anchor.  Runs are
reproducible bit-for-bit for a fixed seed on a fixed platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .. import checkpoints as ckpt_io
from ..brainmap import BrainMap, build_brainmap, make_pyramid, one_hot
from ..preprocess import extract_tumor_patch, fit_to, flip_lr, normalize
from ..volumes import Modality, PatientCase
from .losses import (
    LossWeights,
    generator_adversarial,
    perceptual_loss,
    pixel_loss,
    rebalance_weights,
    total_generator_loss,
)
from .models import (
    FEATURE_LAYERS,
    FeatureExtractor,
    GeneratorConfig,
    MapGenerator,
    PatchDiscriminator,
)


class DivergenceError(RuntimeError):
    """A loss term became NaN/Inf; reports the term and global step."""

    def __init__(self, term: str, step: int, value: float):
        super().__init__(f"loss term {term!r} diverged to {value} at step {step}")
        self.term = term
        self.step = step


@dataclass
class AugTrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    rebalance_every: int = 10
    disc_features: int = 32
    extractor_width: int = 32
    extractor_seed: int = 7
    perceptual_layers: tuple[str, ...] = FEATURE_LAYERS
    initial_weights: LossWeights = field(default_factory=LossWeights)
    flip_augmentation: bool = True
    reduction: str = "mean"


@dataclass
class AugCheckpoint:
    generator_params: dict[str, np.ndarray]
    discriminator_params: dict[str, np.ndarray]
    config: GeneratorConfig
    train_config: AugTrainConfig
    modality: Modality
    epoch: int
    seed: int
    history: dict[str, list[float]]
    final_weights: LossWeights

    def build_generator(self) -> MapGenerator:
        gen = MapGenerator(self.config)
        gen.load_state_dict({k: torch.from_numpy(v) for k, v in self.generator_params.items()})
        gen.eval()
        return gen

    def save(self, path) -> None:
        params = {f"generator/{k}": v for k, v in self.generator_params.items()}
        params.update({f"discriminator/{k}": v for k, v in self.discriminator_params.items()})
        config = {
            "top_resolution": self.config.top_resolution,
            "base_features": self.config.base_features,
            "map_channels": self.config.map_channels,
            "out_channels": self.config.out_channels,
            "train": {
                "epochs": self.train_config.epochs,
                "batch_size": self.train_config.batch_size,
                "lr": self.train_config.lr,
                "betas": list(self.train_config.betas),
                "rebalance_every": self.train_config.rebalance_every,
                "disc_features": self.train_config.disc_features,
                "extractor_width": self.train_config.extractor_width,
                "extractor_seed": self.train_config.extractor_seed,
                "perceptual_layers": list(self.train_config.perceptual_layers),
                "flip_augmentation": self.train_config.flip_augmentation,
                "reduction": self.train_config.reduction,
            },
        }
        meta = {
            "modality": self.modality.value,
            "epoch": self.epoch,
            "seed": self.seed,
            "final_weights": self.final_weights.to_dict(),
            "loss_reduction": self.train_config.reduction,
        }
        ckpt_io.save_archive(path, params, config, meta, self.history)

    @classmethod
    def load(cls, path) -> "AugCheckpoint":
        params, config, meta, history = ckpt_io.load_archive(path)
        gen_params = {k[len("generator/"):]: v for k, v in params.items()
                      if k.startswith("generator/")}
        disc_params = {k[len("discriminator/"):]: v for k, v in params.items()
                       if k.startswith("discriminator/")}
        t = config["train"]
        train_config = AugTrainConfig(
            epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"],
            betas=tuple(t["betas"]), rebalance_every=t["rebalance_every"],
            disc_features=t["disc_features"], extractor_width=t["extractor_width"],
            extractor_seed=t["extractor_seed"],
            perceptual_layers=tuple(t["perceptual_layers"]),
            initial_weights=LossWeights.from_dict(meta["final_weights"]),
            flip_augmentation=t["flip_augmentation"], reduction=t["reduction"])
        gen_config = GeneratorConfig(
            top_resolution=config["top_resolution"], base_features=config["base_features"],
            map_channels=config["map_channels"], out_channels=config["out_channels"])
        return cls(generator_params=gen_params, discriminator_params=disc_params,
                   config=gen_config, train_config=train_config,
                   modality=Modality(meta["modality"]), epoch=meta["epoch"],
                   seed=meta["seed"], history=history,
                   final_weights=LossWeights.from_dict(meta["final_weights"]))


def pyramid_tensors(pyramid: list[BrainMap], dtype=torch.float32) -> list[torch.Tensor]:
    """One-hot encode a map pyramid as (1, 7, r, r) tensors."""
    return [torch.from_numpy(one_hot(level)[None]).to(dtype) for level in pyramid]


def generate(config: GeneratorConfig, params: dict[str, np.ndarray],
             pyramid: list[BrainMap]) -> np.ndarray:
    """Run the generator on a map pyramid; deterministic in (params, pyramid)."""
    gen = MapGenerator(config)
    gen.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
    gen.eval()
    with torch.no_grad():
        out = gen(pyramid_tensors(pyramid))
    return out[0, 0].numpy()


def _state_numpy(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def build_training_samples(cases: list[PatientCase], modality: Modality,
                           top_resolution: int, flip: bool = True):
    """Paired (one-hot pyramid levels, target slice) arrays for one modality.

    The brain map is built from the case's own raw volume of that modality;
    the target is the z-scored slice, both center pad/cropped to the
    generator resolution.
    """
    samples = []
    for case in cases:
        if case.labels is None:
            raise ValueError(f"case {case.id!r} has no labels for GAN training")
        volume = case.volumes[modality]
        bmap3d = build_brainmap(volume, case.labels)
        normalized = normalize(volume).data
        lo, hi = extract_tumor_patch(case, n_slices=min(64, case.shape[2])).slice_range
        for z in range(lo, hi):
            map2d = bmap3d.axial_slice(z)
            target = fit_to(normalized[:, :, z], top_resolution)[None]
            variants = [(map2d, target)]
            if flip:
                flipped_map = BrainMap(tissue=flip_lr(map2d.tissue),
                                       tumor=flip_lr(map2d.tumor),
                                       source_modality=map2d.source_modality)
                variants.append((flipped_map, flip_lr(target)))
            for m2, tgt in variants:
                levels = make_pyramid(m2, top_resolution)
                samples.append(([one_hot(lv) for lv in levels], tgt.astype(np.float32)))
    return samples


def _batch(samples, indices):
    levels = len(samples[0][0])
    pyr = [torch.from_numpy(np.stack([samples[i][0][level] for i in indices]))
           for level in range(levels)]
    target = torch.from_numpy(np.stack([samples[i][1] for i in indices]))
    return pyr, target


def train_augnet(cases: list[PatientCase], modality: Modality,
                 config: GeneratorConfig | None = None,
                 train_config: AugTrainConfig | None = None,
                 seed: int = 0) -> AugCheckpoint:
    """Train the augmentation GAN for one modality."""
    config = config or GeneratorConfig()
    tc = train_config or AugTrainConfig()
    if not cases:
        raise ValueError("need at least one training case")

    torch.manual_seed(seed)
    gen = MapGenerator(config)
    disc = PatchDiscriminator(image_channels=config.out_channels,
                              map_channels=config.map_channels,
                              features=tc.disc_features)
    extractor = FeatureExtractor(base_width=tc.extractor_width, seed=tc.extractor_seed)
    opt_g = torch.optim.Adam(gen.parameters(), lr=tc.lr, betas=tc.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=tc.lr, betas=tc.betas)

    samples = build_training_samples(cases, modality, config.top_resolution,
                                     flip=tc.flip_augmentation)
    n = len(samples)
    rng = np.random.default_rng(seed)
    weights = LossWeights.from_dict(tc.initial_weights.to_dict())

    terms = ["pixel", *[f"perc_{l}" for l in tc.perceptual_layers], "adv_d", "adv_g",
             "total_g", "w_adv"]
    history: dict[str, list[float]] = {t: [] for t in terms}
    step = 0
    epoch_start_index = 0  # first history row of the current rebalance window

    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        for start in range(0, n, tc.batch_size):
            indices = order[start:start + tc.batch_size]
            pyr, target = _batch(samples, indices)
            map_top = pyr[-1]

            # discriminator step
            with torch.no_grad():
                fake = gen(pyr)
            logits_real = disc(target, map_top)
            logits_fake = disc(fake, map_top)
            loss_d = (torch.nn.functional.softplus(-logits_real).mean()
                      + torch.nn.functional.softplus(logits_fake).mean())
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            # generator step
            fake = gen(pyr)
            perc_total, per_layer = perceptual_loss(
                target, fake, extractor, layers=tc.perceptual_layers,
                layer_weights=weights.perceptual, reduction=tc.reduction)
            pix = pixel_loss(target, fake, reduction=tc.reduction)
            adv_g = generator_adversarial(disc, fake, map_top)
            total = total_generator_loss(perc_total, pix, adv_g, weights)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            row = {"pixel": float(pix.detach()), "adv_d": float(loss_d.detach()),
                   "adv_g": float(adv_g.detach()), "total_g": float(total.detach()),
                   "w_adv": weights.adversarial}
            row.update({f"perc_{l}": float(v.detach()) for l, v in per_layer.items()})
            for term, value in row.items():
                if term != "w_adv" and not math.isfinite(value):
                    raise DivergenceError(term, step, value)
                history[term].append(value)
            step += 1

        if (epoch + 1) % tc.rebalance_every == 0 and step > epoch_start_index:
            window = slice(epoch_start_index, step)
            means = {"pixel": float(np.mean(history["pixel"][window])),
                     "adv_g": float(np.mean(history["adv_g"][window]))}
            for layer in tc.perceptual_layers:
                means[f"perc_{layer}"] = float(np.mean(history[f"perc_{layer}"][window]))
            weights = rebalance_weights(means, weights)
            epoch_start_index = step

    return AugCheckpoint(
        generator_params=_state_numpy(gen),
        discriminator_params=_state_numpy(disc),
        config=config, train_config=tc, modality=modality, epoch=tc.epochs,
        seed=seed, history=history, final_weights=weights)
