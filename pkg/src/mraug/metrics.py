"""Segmentation agreement metrics (DSC, sensitivity, specificity, HD95) and
image-quality metrics (MSE, MAE, PSNR, SSIM) with explicit empty-mask and
undefined-value conventions.

Conventions: dsc(empty, empty) = 1, dsc with exactly one empty mask = 0;
hd95 with any empty mask and sensitivity/specificity with an empty
denominator are undefined and returned as NaN so reports can flag them.
Image metrics operate on float images rescaled to [0, 255].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import convolve2d
from scipy.spatial import cKDTree

DISPLAY_RANGE = 255.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Segmentation agreement
# ---------------------------------------------------------------------------

def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice similarity 2|a&b| / (|a|+|b|); 1.0 if both empty, 0.0 if one is."""
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    _check_same_shape(a, b)
    na = int(np.count_nonzero(a))
    nb = int(np.count_nonzero(b))
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int(np.count_nonzero(a & b))
    return 2.0 * inter / (na + nb)


def sensitivity(ref: np.ndarray, pred: np.ndarray) -> float:
    """TP / (TP + FN); NaN when the reference has no positives."""
    ref = np.asarray(ref, bool)
    pred = np.asarray(pred, bool)
    _check_same_shape(ref, pred)
    tp = int(np.count_nonzero(ref & pred))
    fn = int(np.count_nonzero(ref & ~pred))
    if tp + fn == 0:
        return math.nan
    return tp / (tp + fn)


def specificity(ref: np.ndarray, pred: np.ndarray) -> float:
    """TN / (TN + FP); NaN when the reference has no negatives."""
    ref = np.asarray(ref, bool)
    pred = np.asarray(pred, bool)
    _check_same_shape(ref, pred)
    tn = int(np.count_nonzero(~ref & ~pred))
    fp = int(np.count_nonzero(~ref & pred))
    if tn + fp == 0:
        return math.nan
    return tn / (tn + fp)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one face-neighbor of background.

    Out-of-grid counts as background, so border foreground is surface.
    """
    mask = np.asarray(mask, bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def hd95(a: np.ndarray, b: np.ndarray, spacing) -> float:
    """95th percentile of pooled symmetric surface distances, in mm.

    Euclidean metric over physical coordinates; NaN if either mask is
    empty (undefined, distinct from a perfect 0).
    """
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    _check_same_shape(a, b)
    if not a.any() or not b.any():
        return math.nan
    spacing = np.asarray(spacing, np.float64)
    if spacing.shape != (a.ndim,):
        raise MetricError(f"spacing must have {a.ndim} entries, got {spacing.shape}")
    pa = np.argwhere(surface_voxels(a)) * spacing
    pb = np.argwhere(surface_voxels(b)) * spacing
    d_ab = cKDTree(pb).query(pa, k=1)[0]
    d_ba = cKDTree(pa).query(pb, k=1)[0]
    pooled = np.concatenate([d_ab, d_ba])
    return float(np.percentile(pooled, 95))


# ---------------------------------------------------------------------------
# Image quality
# ---------------------------------------------------------------------------

def rescale_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale two images jointly to [0, 255] using their pooled range."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    _check_same_shape(x, y)
    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    if hi - lo < 1e-12:
        return np.zeros_like(x), np.zeros_like(y)
    scale = DISPLAY_RANGE / (hi - lo)
    return (x - lo) * scale, (y - lo) * scale


def _check_display_range(*imgs: np.ndarray) -> None:
    for img in imgs:
        if img.min() < -1e-6 or img.max() > DISPLAY_RANGE + 1e-6:
            raise MetricError(
                f"image values in [{img.min():.3g}, {img.max():.3g}] are outside "
                f"the expected [0, {DISPLAY_RANGE:g}] display range")


def mse(x: np.ndarray, y: np.ndarray) -> float:
    """Per-pixel mean squared difference on [0, 255] images."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    _check_same_shape(x, y)
    _check_display_range(x, y)
    return float(np.mean((x - y) ** 2))


def mae(x: np.ndarray, y: np.ndarray) -> float:
    """Per-pixel mean absolute difference on [0, 255] images."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    _check_same_shape(x, y)
    _check_display_range(x, y)
    return float(np.mean(np.abs(x - y)))


def batch_mse(pairs) -> float:
    """Average MSE over image pairs (the 1/n batch form)."""
    values = [mse(x, y) for x, y in pairs]
    if not values:
        raise MetricError("batch_mse needs at least one image pair")
    return float(np.mean(values))


def batch_mae(pairs) -> float:
    values = [mae(x, y) for x, y in pairs]
    if not values:
        raise MetricError("batch_mae needs at least one image pair")
    return float(np.mean(values))


def psnr(x: np.ndarray, y: np.ndarray, s: float = DISPLAY_RANGE) -> float:
    """-10 log10(MSE / S^2) in dB; +inf for identical images."""
    m = mse(x, y)
    if m == 0.0:
        return math.inf
    return -10.0 * math.log10(m / (s * s))


def psnr_from_mse(m: float, s: float = DISPLAY_RANGE) -> float:
    if m == 0.0:
        return math.inf
    return -10.0 * math.log10(m / (s * s))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(x: np.ndarray, y: np.ndarray, data_range: float = DISPLAY_RANGE) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    K1 = 0.01, K2 = 0.03; local statistics use 'valid' windows so image
    borders do not contribute.
    """
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    _check_same_shape(x, y)
    if x.ndim != 2:
        raise MetricError("ssim expects 2D images")
    if min(x.shape) < SSIM_WINDOW:
        raise MetricError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    _check_display_range(x, y)

    w = _gaussian_window()
    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    xx = convolve2d(x * x, w, mode="valid")
    yy = convolve2d(y * y, w, mode="valid")
    xy = convolve2d(x * y, w, mode="valid")
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Reports and aggregation
# ---------------------------------------------------------------------------

SEG_METRICS = ("dsc", "sensitivity", "specificity", "hd95_mm")
IMAGE_METRICS = ("mse", "mae", "psnr_db", "ssim")


@dataclass
class RegionMetrics:
    dsc: float
    sensitivity: float
    specificity: float
    hd95_mm: float

    @property
    def undefined(self) -> dict[str, bool]:
        return {name: math.isnan(getattr(self, name)) for name in
                ("dsc", "sensitivity", "specificity", "hd95_mm")}


def region_metrics(ref: np.ndarray, pred: np.ndarray, spacing) -> RegionMetrics:
    return RegionMetrics(
        dsc=dsc(ref, pred),
        sensitivity=sensitivity(ref, pred),
        specificity=specificity(ref, pred),
        hd95_mm=hd95(ref, pred, spacing),
    )


@dataclass
class AggregateRow:
    metric: str
    mean: float
    sd: float
    n: int

    def formatted(self, digits: int = 3) -> str:
        return f"{self.mean:.{digits}f}±{self.sd:.{digits}f}"


def aggregate(values_by_metric: dict[str, list[float]],
              order: tuple[str, ...] | None = None) -> list[AggregateRow]:
    """Mean and sample standard deviation per metric, NaN entries dropped.

    A single value has sd 0; metrics whose values are all NaN aggregate
    to NaN with n = 0.
    """
    if not values_by_metric:
        raise MetricError("nothing to aggregate")
    names = list(order) if order is not None else list(values_by_metric)
    rows = []
    for name in names:
        vals = [v for v in values_by_metric.get(name, []) if not math.isnan(v)]
        if not vals:
            rows.append(AggregateRow(metric=name, mean=math.nan, sd=math.nan, n=0))
        elif len(vals) == 1:
            rows.append(AggregateRow(metric=name, mean=float(vals[0]), sd=0.0, n=1))
        else:
            arr = np.asarray(vals, np.float64)
            rows.append(AggregateRow(metric=name, mean=float(arr.mean()),
                                     sd=float(arr.std(ddof=1)), n=len(vals)))
    return rows


@dataclass
class ImageQualityReport:
    """Per-modality image-quality table in MSE, MAE, PSNR, SSIM column order."""

    per_modality: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def add(self, modality: str, mse_v: float, mae_v: float, psnr_v: float,
            ssim_v: float) -> None:
        bucket = self.per_modality.setdefault(
            modality, {name: [] for name in IMAGE_METRICS})
        for name, v in zip(IMAGE_METRICS, (mse_v, mae_v, psnr_v, ssim_v)):
            bucket[name].append(float(v))

    def rows(self) -> dict[str, list[AggregateRow]]:
        return {mod: aggregate(vals, IMAGE_METRICS)
                for mod, vals in self.per_modality.items()}

    def to_text(self) -> str:
        lines = ["\t" + "\t".join(name.upper() for name in IMAGE_METRICS)]
        for mod, rows in self.rows().items():
            lines.append(mod + "\t" + "\t".join(r.formatted() for r in rows))
        return "\n".join(lines)
