"""Procedural desk-scale phantom cases: an ellipsoidal brain with a smooth
radial intensity profile and a nested NCR / enhancing-tumor / edema lesion,
with per-modality contrast rules mirroring the qualitative relations of
real glioma MR (edema bright on T2/FLAIR, enhancing tumor bright on T1CE,
necrosis dark on T1CE).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volumes import (
    LABEL_EDEMA,
    LABEL_ET,
    LABEL_NCR,
    Modality,
    PatientCase,
    Provenance,
    Volume3D,
)


class PhantomError(ValueError):
    pass


# Version-pinned contrast rules: intensity multiplier per tissue class and
# modality, applied on top of the radial brain profile.
INTENSITY_RULES_VERSION = 1

BASE_INTENSITY = {
    Modality.T1: 1.0,
    Modality.T1CE: 1.0,
    Modality.T2: 0.9,
    Modality.FLAIR: 0.95,
}

TUMOR_MULTIPLIERS = {
    LABEL_NCR: {Modality.T1: 0.6, Modality.T1CE: 0.35, Modality.T2: 1.3, Modality.FLAIR: 0.85},
    LABEL_EDEMA: {Modality.T1: 0.75, Modality.T1CE: 0.9, Modality.T2: 1.6, Modality.FLAIR: 1.7},
    LABEL_ET: {Modality.T1: 0.85, Modality.T1CE: 1.7, Modality.T2: 1.25, Modality.FLAIR: 1.2},
}

PROFILE_CURVATURE = 0.4  # profile(r) = 1 - 0.4 r^2, r in [0, 1]


@dataclass(frozen=True)
class LesionSpec:
    """Nested spherical shells: NCR core, enhancing rim, edema halo."""

    center: tuple[float, float, float]
    radii: tuple[float, float, float]  # (ncr, et, edema), strictly increasing

    def __post_init__(self):
        r = self.radii
        if not (0 < r[0] < r[1] < r[2]):
            raise PhantomError(f"lesion radii must be strictly increasing, got {r}")


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 32)
    brain_axes: tuple[float, float, float] | None = None
    lesion: LesionSpec | None = None
    noise_sd: float = 0.02
    seed: int = 0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    rules_version: int = INTENSITY_RULES_VERSION

    def resolved_brain_axes(self) -> tuple[float, float, float]:
        if self.brain_axes is not None:
            return self.brain_axes
        return tuple(0.42 * s for s in self.shape)


def _ellipsoid_radius(shape, axes) -> np.ndarray:
    center = [(s - 1) / 2.0 for s in shape]
    grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    r2 = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, axes))
    return np.sqrt(r2)


def _lesion_labels(shape, lesion: LesionSpec) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    d = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, lesion.center)))
    labels = np.zeros(shape, np.int16)
    r_ncr, r_et, r_edema = lesion.radii
    labels[d <= r_edema] = LABEL_EDEMA
    labels[d <= r_et] = LABEL_ET
    labels[d <= r_ncr] = LABEL_NCR
    return labels


def generate_phantom(spec: PhantomSpec) -> PatientCase:
    """Deterministic phantom case for the given spec."""
    if spec.rules_version != INTENSITY_RULES_VERSION:
        raise PhantomError(f"unknown intensity rules version {spec.rules_version}")
    axes = spec.resolved_brain_axes()
    re = _ellipsoid_radius(spec.shape, axes)
    brain = re <= 1.0
    if not brain.any():
        raise PhantomError("brain ellipsoid does not intersect the grid")
    profile = np.where(brain, 1.0 - PROFILE_CURVATURE * re**2, 0.0)

    labels = np.zeros(spec.shape, np.int16)
    if spec.lesion is not None:
        labels = _lesion_labels(spec.shape, spec.lesion)
        outside = int(np.count_nonzero((labels > 0) & ~brain))
        if outside:
            raise PhantomError(f"lesion extends outside the brain by {outside} voxel(s)")

    rng = np.random.default_rng(spec.seed)
    volumes = {}
    for modality in (Modality.T1, Modality.T1CE, Modality.T2, Modality.FLAIR):
        mult = np.ones(spec.shape, np.float64)
        for code, table in TUMOR_MULTIPLIERS.items():
            mult[labels == code] = table[modality]
        img = BASE_INTENSITY[modality] * profile * mult
        if spec.noise_sd > 0:
            img = img + np.where(brain, rng.normal(0.0, spec.noise_sd, spec.shape), 0.0)
        img = np.where(brain, np.maximum(img, 1e-3), 0.0)
        volumes[modality] = Volume3D(img.astype(np.float32), spec.spacing, modality)

    label_vol = Volume3D(labels.astype(np.float32), spec.spacing, Modality.LABEL)
    case_id = f"phantom-{spec.seed:04d}"
    return PatientCase(id=case_id, volumes=volumes, labels=label_vol,
                       provenance=Provenance.PHANTOM,
                       info={"rules_version": spec.rules_version})


def random_phantom_spec(seed: int, shape=(64, 64, 32), lesion_free: bool = False,
                        noise_sd: float = 0.02) -> PhantomSpec:
    """Varied-but-safe phantom spec: lesion well inside the brain ellipsoid."""
    rng = np.random.default_rng(seed)
    axes = tuple(0.42 * s for s in shape)
    center_of_grid = [(s - 1) / 2.0 for s in shape]
    if lesion_free:
        lesion = None
    else:
        scale = min(shape) / 32.0
        r_ncr = rng.uniform(1.5, 2.5) * scale
        r_et = r_ncr + rng.uniform(1.0, 2.0) * scale
        r_edema = r_et + rng.uniform(1.5, 2.5) * scale
        # keep the whole lesion within half the brain radius of the center
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        max_off = 0.45 * min(axes) - r_edema
        offset = direction * rng.uniform(0.0, max(0.0, max_off))
        center = tuple(c + o for c, o in zip(center_of_grid, offset))
        lesion = LesionSpec(center=center, radii=(r_ncr, r_et, r_edema))
    return PhantomSpec(shape=shape, lesion=lesion, noise_sd=noise_sd, seed=seed)
