"""Normalization, tumor-covering patch extraction, and flip augmentation.

Axial slices are 2D (X, Y) planes indexed along Z.  "Left/right" flips
reverse the last (column) axis, mirroring across the sagittal midline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volumes import MR_MODALITIES, Modality, PatientCase, Volume3D

PATCH_SLICES = 64

# Channel order used for all stacked multi-modality slice images.
MODALITY_ORDER = (Modality.T1, Modality.T1CE, Modality.T2, Modality.FLAIR)


class PreprocessError(ValueError):
    pass


def brain_mask(volume: Volume3D) -> np.ndarray:
    """Brain support of a stored (skull-stripped) volume: voxels > 0."""
    return volume.data > 0


def normalize(volume: Volume3D, mask: np.ndarray | None = None) -> Volume3D:
    """Z-score a volume over the brain mask; background is set to 0.

    The mask must come from the raw stored volume (inference ``data > 0``
    is only valid before normalization).
    """
    if mask is None:
        mask = brain_mask(volume)
    mask = np.asarray(mask, bool)
    if mask.shape != volume.shape:
        raise PreprocessError(f"mask shape {mask.shape} != volume shape {volume.shape}")
    vals = volume.data[mask]
    if vals.size == 0:
        raise PreprocessError("empty brain mask")
    mean = float(vals.mean(dtype=np.float64))
    std = float(vals.std(dtype=np.float64))
    if std < 1e-12:
        raise PreprocessError("zero intensity variance inside brain mask")
    out = np.zeros_like(volume.data)
    out[mask] = (volume.data[mask] - mean) / std
    return Volume3D(data=out, spacing=volume.spacing, modality=volume.modality)


@dataclass(eq=False)
class SliceSample:
    """One training slice: stacked modality channels plus its label map."""

    image: np.ndarray  # (C, X, Y) float32
    labels: np.ndarray  # (X, Y) int16
    z: int
    flipped: bool = False


@dataclass(eq=False)
class SlicePatchSet:
    """A 64-slice axial window covering the tumor region of one case."""

    case_id: str
    slice_range: tuple[int, int]  # [lo, hi)
    slices: list[SliceSample]
    partial_coverage: bool = False

    def __len__(self) -> int:
        return len(self.slices)


def _normalized_channels(case: PatientCase) -> np.ndarray:
    """Stack normalized MR modalities into a (C, X, Y, Z) array."""
    chans = []
    for m in MODALITY_ORDER:
        if m not in case.volumes:
            raise PreprocessError(f"case {case.id!r} missing modality {m.value}")
        chans.append(normalize(case.volumes[m]).data)
    return np.stack(chans, axis=0)


def tumor_window(labels: Volume3D, n_slices: int = PATCH_SLICES) -> tuple[int, int, bool]:
    """Axial window [lo, hi) covering the tumor, clamped to volume bounds.

    Centered on the midpoint of the tumor's axial extent; when the extent
    exceeds the window, centered on the tumor centroid slice instead and
    flagged as partial.  Volumes shorter than the window yield the whole
    Z range.
    """
    tumor_z = np.flatnonzero((labels.data > 0).any(axis=(0, 1)))
    if tumor_z.size == 0:
        raise PreprocessError("case has no tumor voxels in its label volume")
    depth = labels.shape[2]
    lo_t, hi_t = int(tumor_z[0]), int(tumor_z[-1])
    extent = hi_t - lo_t + 1
    if extent <= n_slices:
        center = (lo_t + hi_t + 1) // 2
    else:
        zs = np.nonzero(labels.data > 0)[2]
        center = int(round(zs.mean()))
    lo = center - n_slices // 2
    lo = max(0, min(lo, depth - n_slices))
    hi = min(depth, lo + n_slices)
    partial = not (lo <= lo_t and hi_t < hi)
    return lo, hi, partial


def extract_tumor_patch(case: PatientCase, n_slices: int = PATCH_SLICES) -> SlicePatchSet:
    """Extract the tumor-covering axial window as normalized slice samples."""
    if case.labels is None:
        raise PreprocessError(f"case {case.id!r} has no labels")
    lo, hi, partial = tumor_window(case.labels, n_slices)
    channels = _normalized_channels(case)
    labels = case.labels.labels_int()
    slices = [
        SliceSample(image=np.ascontiguousarray(channels[:, :, :, z]),
                    labels=np.ascontiguousarray(labels[:, :, z]), z=z)
        for z in range(lo, hi)
    ]
    return SlicePatchSet(case_id=case.id, slice_range=(lo, hi), slices=slices,
                         partial_coverage=partial)


def flip_lr(image: np.ndarray, labels: np.ndarray | None = None):
    """Reverse the column axis of an image (and label map). Involution."""
    flipped = np.ascontiguousarray(image[..., ::-1])
    if labels is None:
        return flipped
    return flipped, np.ascontiguousarray(labels[..., ::-1])


def with_flips(patch: SlicePatchSet) -> SlicePatchSet:
    """Double a patch set with left/right-flipped copies of every slice."""
    doubled = list(patch.slices)
    for s in patch.slices:
        img, lab = flip_lr(s.image, s.labels)
        doubled.append(SliceSample(image=img, labels=lab, z=s.z, flipped=True))
    return SlicePatchSet(case_id=patch.case_id, slice_range=patch.slice_range,
                         slices=doubled, partial_coverage=patch.partial_coverage)


def validation_slices(case: PatientCase) -> list[np.ndarray]:
    """Every axial slice of a case, in order, unflipped, as (C, X, Y) images."""
    channels = _normalized_channels(case)
    return [np.ascontiguousarray(channels[:, :, :, z]) for z in range(case.shape[2])]


def reassemble(slices: list[np.ndarray]) -> np.ndarray:
    """Stack per-slice 2D predictions back into an (X, Y, Z) volume."""
    return np.stack(slices, axis=-1)


def fit_to(image: np.ndarray, size: int) -> np.ndarray:
    """Center pad/crop the trailing two axes of an image to (size, size)."""
    out = image
    for axis in (-2, -1):
        n = out.shape[axis]
        if n > size:
            start = (n - size) // 2
            idx = [slice(None)] * out.ndim
            idx[axis] = slice(start, start + size)
            out = out[tuple(idx)]
        elif n < size:
            before = (size - n) // 2
            pad = [(0, 0)] * out.ndim
            pad[axis] = (before, size - n - before)
            out = np.pad(out, pad)
    return np.ascontiguousarray(out)


def unfit(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of fit_to: restore the trailing two axes to the given shape.

    Regions that were cropped away come back as zeros.
    """
    out = image
    for axis, n in zip((-2, -1), shape):
        size = out.shape[axis]
        if size > n:  # was padded -> crop the padding off
            before = (size - n) // 2
            idx = [slice(None)] * out.ndim
            idx[axis] = slice(before, before + n)
            out = out[tuple(idx)]
        elif size < n:  # was cropped -> pad zeros back
            start = (n - size) // 2
            pad = [(0, 0)] * out.ndim
            pad[axis] = (start, n - size - start)
            out = np.pad(out, pad)
    return np.ascontiguousarray(out)
