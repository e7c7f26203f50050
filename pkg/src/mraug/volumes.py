"""Volume and case data model, label conventions, and file IO.

Volumes are (X, Y, Z) float32 grids with per-axis voxel spacing in mm.
Label volumes follow the BraTS convention: 0 background, 1 necrosis /
non-enhancing core (NCR), 2 peritumoral edema, 4 enhancing tumor (ET).

Native on-disk format: one raw little-endian float32 array per volume
(C order) plus a sidecar text header, ``<id>_<MODALITY>.raw`` and
``<id>_<MODALITY>.hdr``.  NIfTI-1 (.nii / .nii.gz) is supported for
ingestion only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nifti


class Modality(enum.Enum):
    T1 = "T1"
    T1CE = "T1CE"
    T2 = "T2"
    FLAIR = "FLAIR"
    LABEL = "LABEL"


class Provenance(enum.Enum):
    REAL = "REAL"
    SYNTHETIC = "SYNTHETIC"
    PHANTOM = "PHANTOM"


class Region(enum.Enum):
    WT = "WT"
    TC = "TC"
    ET = "ET"


MR_MODALITIES = (Modality.T1, Modality.T1CE, Modality.T2, Modality.FLAIR)

LABEL_BACKGROUND = 0
LABEL_NCR = 1
LABEL_EDEMA = 2
LABEL_ET = 4
BRATS_LABELS = (LABEL_BACKGROUND, LABEL_NCR, LABEL_EDEMA, LABEL_ET)

REGION_LABELS = {
    Region.WT: (LABEL_NCR, LABEL_EDEMA, LABEL_ET),
    Region.TC: (LABEL_NCR, LABEL_ET),
    Region.ET: (LABEL_ET,),
}

# BraTS-style file suffixes used when ingesting NIfTI case directories.
BRATS_SUFFIXES = {
    "t1": Modality.T1,
    "t1ce": Modality.T1CE,
    "t2": Modality.T2,
    "flair": Modality.FLAIR,
    "seg": Modality.LABEL,
}


class VolumeError(ValueError):
    """Invalid volume contents or metadata."""


class CaseError(ValueError):
    """Invalid or inconsistent patient case."""


@dataclass(eq=False)
class Volume3D:
    """One MR modality or label volume on a regular grid."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    modality: Modality

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise VolumeError(f"volume must be 3D with all dims >= 1, got shape {arr.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be 3 positive floats, got {self.spacing}")
        arr = np.array(arr, dtype=np.float32, order="C")
        if self.modality is Modality.LABEL:
            bad = sorted(set(np.unique(arr)) - set(float(v) for v in BRATS_LABELS))
            if bad:
                raise VolumeError(f"label volume contains values outside {BRATS_LABELS}: {bad}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def labels_int(self) -> np.ndarray:
        """Label data as a writable int16 array (LABEL volumes only)."""
        if self.modality is not Modality.LABEL:
            raise VolumeError(f"labels_int on {self.modality.value} volume")
        return self.data.astype(np.int16)


@dataclass(eq=False)
class PatientCase:
    """Co-registered MR modalities plus an optional label volume."""

    id: str
    volumes: dict[Modality, Volume3D]
    labels: Volume3D | None = None
    provenance: Provenance = Provenance.REAL
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        all_vols = list(self.volumes.values()) + ([self.labels] if self.labels is not None else [])
        if not all_vols:
            raise CaseError(f"case {self.id!r} has no volumes")
        ref = all_vols[0]
        for v in all_vols[1:]:
            if v.shape != ref.shape or v.spacing != ref.spacing:
                raise CaseError(
                    f"case {self.id!r}: {v.modality.value} volume shape/spacing "
                    f"{v.shape}/{v.spacing} does not match {ref.modality.value} "
                    f"{ref.shape}/{ref.spacing}"
                )
        if self.labels is not None and self.labels.modality is not Modality.LABEL:
            raise CaseError(f"case {self.id!r}: labels volume has modality {self.labels.modality.value}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return next(iter(self.volumes.values())).shape

    @property
    def spacing(self) -> tuple[float, float, float]:
        return next(iter(self.volumes.values())).spacing


@dataclass(eq=False)
class RegionMask:
    """Binary mask for one composite tumor region."""

    data: np.ndarray
    region: Region

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=bool)

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.data))


def region_mask(labels: Volume3D, region: Region) -> RegionMask:
    """Compose a WT/TC/ET mask from a BraTS label volume.

    WT = ET + edema + NCR, TC = ET + NCR, ET = ET.
    """
    if labels.modality is not Modality.LABEL:
        raise VolumeError(f"region_mask needs a LABEL volume, got {labels.modality.value}")
    mask = np.isin(labels.data, REGION_LABELS[region])
    return RegionMask(data=mask, region=region)


# ---------------------------------------------------------------------------
# Native raw + header format
# ---------------------------------------------------------------------------

def write_raw_volume(array: np.ndarray, base: Path, fields: dict[str, str]) -> None:
    """Write ``base.raw`` (little-endian float32, C order) and ``base.hdr``."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(str(base) + ".raw")
    lines = [f"shape={','.join(str(d) for d in arr.shape)}"]
    lines += [f"{k}={v}" for k, v in fields.items()]
    (Path(str(base) + ".hdr")).write_text("\n".join(lines) + "\n")


def read_raw_volume(hdr_path: Path) -> tuple[np.ndarray, dict[str, str]]:
    """Read a native raw+hdr volume, returning the array and header fields."""
    hdr_path = Path(hdr_path)
    fields: dict[str, str] = {}
    for line in hdr_path.read_text().splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        k, v = line.split("=", 1)
        fields[k.strip()] = v.strip()
    if "shape" not in fields:
        raise VolumeError(f"{hdr_path}: header missing shape field")
    shape = tuple(int(d) for d in fields["shape"].split(","))
    raw_path = hdr_path.with_suffix(".raw")
    arr = np.fromfile(str(raw_path), dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise VolumeError(f"{raw_path}: expected {np.prod(shape)} voxels, found {arr.size}")
    return arr.reshape(shape), fields


def _spacing_fields(spacing: tuple[float, float, float]) -> str:
    return ",".join(repr(float(s)) for s in spacing)


def save_case(case: PatientCase, directory: Path) -> None:
    """Write a case in the native format; round-trips bit-exactly via load_case."""
    directory = Path(directory)
    vols: list[Volume3D] = list(case.volumes.values())
    if case.labels is not None:
        vols.append(case.labels)
    for vol in vols:
        fields = {
            "spacing": _spacing_fields(vol.spacing),
            "modality": vol.modality.value,
            "provenance": case.provenance.value,
        }
        if vol.modality is Modality.LABEL:
            fields["labels"] = ",".join(str(v) for v in BRATS_LABELS)
        write_raw_volume(vol.data, directory / f"{case.id}_{vol.modality.value}", fields)


def _load_native_case(directory: Path) -> PatientCase:
    hdrs = sorted(directory.glob("*.hdr"))
    hdrs = [h for h in hdrs if not h.stem.endswith("_map")]
    if not hdrs:
        raise CaseError(f"{directory}: no native .hdr files found")
    volumes: dict[Modality, Volume3D] = {}
    labels = None
    case_id = None
    provenance = Provenance.REAL
    for hdr in hdrs:
        arr, fields = read_raw_volume(hdr)
        mod_name = fields.get("modality", "")
        if mod_name == "LABELMAP":
            continue
        try:
            modality = Modality(mod_name)
        except ValueError:
            raise CaseError(f"{hdr}: unknown modality {mod_name!r}") from None
        spacing = tuple(float(s) for s in fields["spacing"].split(","))
        vol = Volume3D(data=arr, spacing=spacing, modality=modality)
        stem = hdr.stem
        suffix = f"_{modality.value}"
        this_id = stem[: -len(suffix)] if stem.endswith(suffix) else stem
        if case_id is None:
            case_id = this_id
        if "provenance" in fields:
            provenance = Provenance(fields["provenance"])
        if modality is Modality.LABEL:
            labels = vol
        else:
            volumes[modality] = vol
    missing = [m.value for m in MR_MODALITIES if m not in volumes]
    if missing:
        raise CaseError(f"{directory}: missing modality file(s): {', '.join(missing)}")
    return PatientCase(id=case_id, volumes=volumes, labels=labels, provenance=provenance)


def _load_nifti_case(directory: Path) -> PatientCase:
    found: dict[Modality, tuple[Path, np.ndarray, tuple]] = {}
    for path in sorted(directory.iterdir()):
        name = path.name
        if not (name.endswith(".nii") or name.endswith(".nii.gz")):
            continue
        stem = name[: -len(".nii.gz")] if name.endswith(".nii.gz") else name[: -len(".nii")]
        suffix = stem.rsplit("_", 1)[-1].lower()
        if suffix not in BRATS_SUFFIXES:
            continue
        modality = BRATS_SUFFIXES[suffix]
        data, spacing = nifti.read_nifti(path)
        found[modality] = (path, data, spacing)
    missing = [m.value for m in MR_MODALITIES if m not in found]
    if missing:
        raise CaseError(f"{directory}: missing modality file(s): {', '.join(missing)}")
    volumes = {}
    labels = None
    case_id = found[Modality.T1][0].name.rsplit("_", 1)[0]
    for modality, (path, data, spacing) in found.items():
        try:
            vol = Volume3D(data=data, spacing=spacing, modality=modality)
        except VolumeError as e:
            raise CaseError(f"{path}: {e}") from None
        if modality is Modality.LABEL:
            labels = vol
        else:
            volumes[modality] = vol
    return PatientCase(id=case_id, volumes=volumes, labels=labels)


def load_case(directory: Path, naming: str = "auto") -> PatientCase:
    """Load a case from a directory of native or NIfTI files.

    naming: "native", "nifti", or "auto" (native .hdr files win if present).
    Missing labels are permitted (inference-only cases); missing MR
    modalities are rejected with the modality named.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CaseError(f"{directory}: not a directory")
    if naming == "auto":
        naming = "native" if any(directory.glob("*.hdr")) else "nifti"
    if naming == "native":
        return _load_native_case(directory)
    if naming == "nifti":
        return _load_nifti_case(directory)
    raise ValueError(f"unknown naming convention {naming!r}")
