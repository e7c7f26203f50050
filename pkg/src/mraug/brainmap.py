"""Semantic brain maps: tissue tiers from intensity thresholding plus tumor
sub-regions, lesion manipulation, and multi-resolution conditioning pyramids.

Map labels: 0 background, 1/2/3 tissue tiers (low/mid/high intensity),
4 edema, 5 NCR, 6 enhancing tumor.  Tissue tiers are kept separately from
tumor labels internally so that moving a lesion can restore the tiers it
vacates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import fit_to
from .volumes import (
    LABEL_EDEMA,
    LABEL_ET,
    LABEL_NCR,
    Modality,
    Volume3D,
    read_raw_volume,
    write_raw_volume,
)

MAP_BACKGROUND = 0
TIER_LOW, TIER_MID, TIER_HIGH = 1, 2, 3
MAP_EDEMA, MAP_NCR, MAP_ET = 4, 5, 6
MAP_LABELS = (0, 1, 2, 3, 4, 5, 6)
N_MAP_LABELS = 7

# BraTS label code -> map label code and back.
_CASE_TO_MAP = {LABEL_NCR: MAP_NCR, LABEL_EDEMA: MAP_EDEMA, LABEL_ET: MAP_ET}
_MAP_TO_CASE = {v: k for k, v in _CASE_TO_MAP.items()}

BASE_RESOLUTION = 4

DEFAULT_SCALE_BOUNDS = (0.5, 2.0)


class BrainMapError(ValueError):
    pass


class ManipulationError(ValueError):
    pass


@dataclass(eq=False)
class BrainMap:
    """Integer semantic layout conditioning the generator (2D or 3D)."""

    tissue: np.ndarray  # values 0..3
    tumor: np.ndarray  # values 0, 4, 5, 6
    source_modality: Modality

    def __post_init__(self):
        self.tissue = np.asarray(self.tissue, np.int16)
        self.tumor = np.asarray(self.tumor, np.int16)
        if self.tissue.shape != self.tumor.shape:
            raise BrainMapError("tissue/tumor shape mismatch")
        if self.tissue.ndim not in (2, 3):
            raise BrainMapError("brain map must be 2D or 3D")

    @property
    def data(self) -> np.ndarray:
        """Composed map: tumor labels override tissue tiers."""
        return np.where(self.tumor > 0, self.tumor, self.tissue).astype(np.int16)

    @property
    def shape(self):
        return self.tissue.shape

    def has_tumor(self) -> bool:
        return bool((self.tumor > 0).any())

    def axial_slice(self, z: int) -> "BrainMap":
        if self.tissue.ndim != 3:
            raise BrainMapError("axial_slice needs a 3D map")
        return BrainMap(tissue=self.tissue[:, :, z], tumor=self.tumor[:, :, z],
                        source_modality=self.source_modality)

    def case_labels(self) -> np.ndarray:
        """Tumor labels translated back to the BraTS case convention."""
        out = np.zeros(self.shape, np.int16)
        for map_code, case_code in _MAP_TO_CASE.items():
            out[self.tumor == map_code] = case_code
        return out

    @classmethod
    def from_composed(cls, data: np.ndarray, source_modality: Modality) -> "BrainMap":
        """Rebuild from a composed map, in-filling tiers under the tumor
        from the nearest non-tumor voxel."""
        data = np.asarray(data, np.int16)
        bad = sorted(set(np.unique(data)) - set(MAP_LABELS))
        if bad:
            raise BrainMapError(f"composed map contains invalid labels {bad}")
        tumor = np.where(data >= MAP_EDEMA, data, 0).astype(np.int16)
        tissue = np.where(data < MAP_EDEMA, data, 0).astype(np.int16)
        if (tumor > 0).any():
            from scipy import ndimage

            _, idx = ndimage.distance_transform_edt(tumor > 0, return_indices=True)
            filled = tissue[tuple(idx)]
            tissue = np.where(tumor > 0, filled, tissue).astype(np.int16)
        return cls(tissue=tissue, tumor=tumor, source_modality=source_modality)


def tier_thresholds(volume: Volume3D) -> tuple[float, float, float]:
    """Intensity cutoffs (high, mid, low) at 3/4, 1/2, 1/4 of the volume max."""
    peak = float(volume.data.max())
    if peak <= 0:
        raise BrainMapError("cannot threshold an all-zero volume")
    return 0.75 * peak, 0.5 * peak, 0.25 * peak


def build_brainmap(volume: Volume3D, labels: Volume3D | None = None) -> BrainMap:
    """Threshold a volume into tissue tiers and stamp tumor labels on top.

    Tier cutoffs are inclusive: intensity >= 3/4 max is tier-high, >= 1/2
    tier-mid, >= 1/4 tier-low, below that background.
    """
    if float(volume.data.min()) < 0:
        raise BrainMapError("brain maps are built from raw nonnegative volumes")
    hi, mid, lo = tier_thresholds(volume)
    tissue = np.zeros(volume.shape, np.int16)
    tissue[volume.data >= lo] = TIER_LOW
    tissue[volume.data >= mid] = TIER_MID
    tissue[volume.data >= hi] = TIER_HIGH
    tumor = np.zeros(volume.shape, np.int16)
    if labels is not None:
        if labels.shape != volume.shape:
            raise BrainMapError("labels not aligned with volume")
        lab = labels.labels_int()
        for case_code, map_code in _CASE_TO_MAP.items():
            tumor[lab == case_code] = map_code
    return BrainMap(tissue=tissue, tumor=tumor, source_modality=volume.modality)


def one_hot(bmap: BrainMap) -> np.ndarray:
    """7-channel binary encoding, channels first; channels sum to 1."""
    data = bmap.data
    out = np.zeros((N_MAP_LABELS,) + data.shape, np.float32)
    for c in range(N_MAP_LABELS):
        out[c] = data == c
    return out


def make_pyramid(bmap: BrainMap, top: int) -> list[BrainMap]:
    """Nearest-neighbor downsampling pyramid from 4x4 up to (top, top).

    The map is first center pad/cropped to the top resolution; each level
    halves the previous by strided decimation.
    """
    if bmap.tissue.ndim != 2:
        raise BrainMapError("pyramids are built from 2D (per-slice) maps")
    k = math.log2(top / BASE_RESOLUTION)
    if top < BASE_RESOLUTION or abs(k - round(k)) > 1e-9:
        raise BrainMapError(f"top resolution {top} is not {BASE_RESOLUTION}*2^k")
    level_count = int(round(k)) + 1
    fitted = BrainMap(tissue=fit_to(bmap.tissue, top), tumor=fit_to(bmap.tumor, top),
                      source_modality=bmap.source_modality)
    levels = [fitted]
    for _ in range(level_count - 1):
        prev = levels[-1]
        levels.append(BrainMap(tissue=prev.tissue[::2, ::2], tumor=prev.tumor[::2, ::2],
                               source_modality=bmap.source_modality))
    levels.reverse()
    return levels


@dataclass(frozen=True)
class LesionTransform:
    """Rigid in-plane move/rotation plus isotropic scaling of the lesion."""

    translate: tuple[float, float] = (0.0, 0.0)
    rotate_deg: float = 0.0
    scale: float = 1.0

    def is_identity(self) -> bool:
        return self.translate == (0.0, 0.0) and self.rotate_deg == 0.0 and self.scale == 1.0


def _check_bounds(t: LesionTransform, bounds: tuple[float, float]) -> None:
    lo, hi = bounds
    if not (lo <= t.scale <= hi):
        raise ManipulationError(f"scale {t.scale} outside bounds [{lo}, {hi}]")
    if t.scale <= 0:
        raise ManipulationError("scale must be positive")


def _rotation_xy(deg: float) -> np.ndarray:
    th = math.radians(deg)
    return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])


def manipulate(bmap: BrainMap, t: LesionTransform,
               scale_bounds: tuple[float, float] = DEFAULT_SCALE_BOUNDS) -> BrainMap:
    """Move/rotate/scale the tumor labels jointly over the tissue tiers.

    Rotation is in-plane about the lesion centroid; scaling is isotropic
    (all axes for 3D maps).  Vacated voxels revert to the stored tissue
    tier.  Rejects transforms that push tumor voxels outside the nonzero
    tissue region or the grid.
    """
    _check_bounds(t, scale_bounds)
    if not bmap.has_tumor():
        raise ManipulationError("map has no tumor to manipulate")

    src = bmap.tumor
    ndim = src.ndim
    coords = np.argwhere(src > 0).astype(np.float64)  # (N, ndim)
    centroid = coords.mean(axis=0)
    shift = np.zeros(ndim)
    shift[:2] = t.translate

    rot = np.eye(ndim)
    rot[:2, :2] = _rotation_xy(t.rotate_deg)

    # Forward check: every source tumor voxel must land inside the grid.
    fwd = (coords - centroid) * t.scale @ rot.T + centroid + shift
    fwd_idx = np.rint(fwd).astype(np.int64)
    inside = np.all((fwd_idx >= 0) & (fwd_idx < np.array(src.shape)), axis=1)
    overflow = int(np.count_nonzero(~inside))

    # Pull-based nearest-neighbor resample of the tumor labels.
    grid = np.indices(src.shape).reshape(ndim, -1).T.astype(np.float64)
    back = (grid - centroid - shift) @ np.linalg.inv(rot).T / t.scale + centroid
    back_idx = np.rint(back).astype(np.int64)
    valid = np.all((back_idx >= 0) & (back_idx < np.array(src.shape)), axis=1)
    new_tumor = np.zeros(src.size, np.int16)
    flat_src = src.reshape(-1)
    lin = np.ravel_multi_index(back_idx[valid].T, src.shape)
    new_tumor[valid] = flat_src[lin]
    new_tumor = new_tumor.reshape(src.shape)

    outside_brain = int(np.count_nonzero((new_tumor > 0) & (bmap.tissue == 0)))
    if overflow or outside_brain:
        raise ManipulationError(
            f"transform pushes tumor outside the brain: {overflow + outside_brain} voxel(s)")

    return BrainMap(tissue=bmap.tissue.copy(), tumor=new_tumor,
                    source_modality=bmap.source_modality)


# ---------------------------------------------------------------------------
# Native-format serialization (composed map, modality=LABELMAP)
# ---------------------------------------------------------------------------

def save_brainmap(bmap: BrainMap, base: Path, spacing=(1.0, 1.0, 1.0)) -> None:
    fields = {
        "spacing": ",".join(repr(float(s)) for s in spacing),
        "modality": "LABELMAP",
        "source": bmap.source_modality.value,
        "labels": ",".join(str(v) for v in MAP_LABELS),
    }
    write_raw_volume(bmap.data.astype(np.float32), base, fields)


def load_brainmap(hdr_path: Path) -> BrainMap:
    arr, fields = read_raw_volume(hdr_path)
    if fields.get("modality") != "LABELMAP":
        raise BrainMapError(f"{hdr_path}: not a LABELMAP volume")
    source = Modality(fields.get("source", "T1"))
    return BrainMap.from_composed(arr.astype(np.int16), source)
