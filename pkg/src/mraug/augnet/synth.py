"""Synthesize new training cases from manipulated brain maps.

Each synthetic case is generated slice-wise by the four per-modality
generators from that modality's manipulated map; the manipulated map's
tumor labels become the case's ground truth.  Generator outputs live in
z-score space; stored volumes are shifted by a constant so the brain
support stays strictly positive (background 0), which downstream
z-score normalization cancels out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..brainmap import BrainMap, LesionTransform, make_pyramid, manipulate, one_hot
from ..metrics import rescale_pair, ssim
from ..preprocess import fit_to, normalize, unfit
from ..volumes import MR_MODALITIES, Modality, PatientCase, Provenance, Volume3D
from .train import AugCheckpoint

SYNTH_OFFSET = 4.0


class SynthesisError(ValueError):
    pass


@dataclass
class SynthesisSource:
    """One synthetic case to make: per-modality 3D maps plus a lesion move."""

    case_id: str
    maps: dict[Modality, BrainMap]
    transform: LesionTransform
    reference: PatientCase | None = None


def _generate_volume(gen, top_resolution: int, bmap3d: BrainMap,
                     batch_size: int = 16) -> np.ndarray:
    """Slice-wise generation over a 3D map, returned in z-score space."""
    shape = bmap3d.shape
    slices_onehot = []
    for z in range(shape[2]):
        map2d = bmap3d.axial_slice(z)
        levels = make_pyramid(map2d, top_resolution)
        slices_onehot.append([one_hot(lv) for lv in levels])
    out_slices = []
    with torch.no_grad():
        for start in range(0, shape[2], batch_size):
            chunk = slices_onehot[start:start + batch_size]
            pyr = [torch.from_numpy(np.stack([c[level] for c in chunk]))
                   for level in range(len(chunk[0]))]
            out = gen(pyr).numpy()[:, 0]
            out_slices.extend(out)
    volume = np.zeros(shape, np.float32)
    for z, img in enumerate(out_slices):
        volume[:, :, z] = unfit(img, shape[:2])
    return volume


def synthesize_dataset(checkpoints: dict[Modality, AugCheckpoint],
                       sources: list[SynthesisSource],
                       spacing=(1.0, 1.0, 1.0)) -> list[PatientCase]:
    """Generate one synthetic PatientCase per source."""
    missing = [m.value for m in MR_MODALITIES if m not in checkpoints]
    if missing:
        raise SynthesisError(f"missing checkpoint(s) for modality: {', '.join(missing)}")
    generators = {m: checkpoints[m].build_generator() for m in MR_MODALITIES}
    resolutions = {checkpoints[m].config.top_resolution for m in MR_MODALITIES}
    if len(resolutions) != 1:
        raise SynthesisError(f"checkpoints disagree on resolution: {sorted(resolutions)}")
    top = resolutions.pop()

    cases = []
    for source in sources:
        missing_maps = [m.value for m in MR_MODALITIES if m not in source.maps]
        if missing_maps:
            raise SynthesisError(
                f"source {source.case_id!r} missing map(s): {', '.join(missing_maps)}")
        volumes = {}
        labels_arr = None
        info: dict = {"transform": {
            "translate": list(source.transform.translate),
            "rotate_deg": source.transform.rotate_deg,
            "scale": source.transform.scale,
        }}
        for modality in MR_MODALITIES:
            bmap = source.maps[modality]
            if not source.transform.is_identity():
                bmap = manipulate(bmap, source.transform)
            if labels_arr is None:
                labels_arr = bmap.case_labels()
            raw = _generate_volume(generators[modality], top, bmap)
            brain = bmap.data > 0
            if source.reference is not None:
                info.setdefault("ssim", {})[modality.value] = _reference_ssim(
                    raw, source.reference, modality)
            stored = np.where(brain, np.maximum(raw + SYNTH_OFFSET, 1e-3), 0.0)
            volumes[modality] = Volume3D(stored.astype(np.float32), spacing, modality)
        label_vol = Volume3D(labels_arr.astype(np.float32), spacing, Modality.LABEL)
        cases.append(PatientCase(id=source.case_id, volumes=volumes, labels=label_vol,
                                 provenance=Provenance.SYNTHETIC, info=info))
    return cases


def _reference_ssim(generated: np.ndarray, reference: PatientCase,
                    modality: Modality) -> float:
    """Mean SSIM between generated slices and the reference case's
    normalized slices, over the axial range shared by both."""
    ref = normalize(reference.volumes[modality]).data
    depth = min(generated.shape[2], ref.shape[2])
    values = []
    size = max(generated.shape[0], generated.shape[1], 16)
    for z in range(depth):
        a = fit_to(generated[:, :, z], size)
        b = fit_to(ref[:, :, z], size)
        ra, rb = rescale_pair(a, b)
        values.append(ssim(ra, rb))
    return float(np.mean(values))
