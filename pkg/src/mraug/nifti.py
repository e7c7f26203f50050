"""Minimal single-file NIfTI-1 reader (.nii / .nii.gz), ingestion only.

Parses the 348-byte header directly; handles both byte orders, the common
integer/float datatypes, and scl_slope/scl_inter rescaling.  Data is
returned as float32 in (X, Y, Z) order with spacing from pixdim.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348

_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}


class NiftiError(ValueError):
    """Unreadable or unsupported NIfTI file."""


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == b"\x1f\x8b":
            return gzip.GzipFile(fileobj=f).read()
        return f.read()


def read_nifti(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a NIfTI-1 file, returning (float32 (X,Y,Z) array, spacing mm)."""
    path = Path(path)
    blob = _read_bytes(path)
    if len(blob) < HEADER_SIZE:
        raise NiftiError(f"{path}: file shorter than NIfTI-1 header")

    endian = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != HEADER_SIZE:
        endian = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", blob, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise NiftiError(f"{path}: bad sizeof_hdr, not a NIfTI-1 file")

    magic = blob[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise NiftiError(f"{path}: two-file NIfTI (.hdr/.img) is not supported")

    dim = struct.unpack_from(f"{endian}8h", blob, 40)
    (datatype,) = struct.unpack_from(f"{endian}h", blob, 70)
    pixdim = struct.unpack_from(f"{endian}8f", blob, 76)
    (vox_offset,) = struct.unpack_from(f"{endian}f", blob, 108)
    slope, inter = struct.unpack_from(f"{endian}2f", blob, 112)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"{path}: invalid ndim {ndim}")
    shape = tuple(max(1, d) for d in dim[1 : 1 + ndim])
    if datatype not in _DTYPES:
        raise NiftiError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)

    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else HEADER_SIZE
    count = int(np.prod(shape))
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    if data.size != count:
        raise NiftiError(f"{path}: truncated data section")
    # NIfTI stores the first axis fastest.
    data = data.reshape(shape, order="F").astype(np.float32)

    if slope not in (0.0, 1.0) or inter != 0.0:
        if slope == 0.0:
            slope = 1.0
        data = data * np.float32(slope) + np.float32(inter)

    # Collapse trailing singleton dims (e.g. dim[0]=4 with one frame).
    while data.ndim > 3 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise NiftiError(f"{path}: expected a 3D volume, got shape {data.shape}")

    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    return np.ascontiguousarray(data), spacing
