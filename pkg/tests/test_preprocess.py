import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mraug.preprocess import (
    PreprocessError,
    extract_tumor_patch,
    fit_to,
    flip_lr,
    normalize,
    reassemble,
    tumor_window,
    unfit,
    validation_slices,
    with_flips,
)
from mraug.volumes import Modality, PatientCase, Volume3D


def vol(arr, modality=Modality.T1):
    return Volume3D(np.asarray(arr, np.float32), (1, 1, 1), modality)


def case_with_tumor(shape, tumor_z, case_id="c"):
    """Case whose tumor (a single ET voxel per slice) spans the given z indices."""
    rng = np.random.default_rng(42)
    vols = {m: vol(rng.random(shape) + 0.5, m) for m in
            [Modality.T1, Modality.T1CE, Modality.T2, Modality.FLAIR]}
    labels = np.zeros(shape, np.float32)
    for z in tumor_z:
        labels[shape[0] // 2, shape[1] // 2, z] = 4
    return PatientCase(id=case_id, volumes=vols,
                       labels=vol(labels, Modality.LABEL))


class TestNormalize:
    def test_two_value_brain(self):
        arr = np.zeros((2, 2, 2), np.float32)
        arr[0, 0, 0] = 1.0
        arr[0, 0, 1] = 3.0
        out = normalize(vol(arr))
        assert out.data[0, 0, 0] == pytest.approx(-1.0, abs=1e-6)
        assert out.data[0, 0, 1] == pytest.approx(1.0, abs=1e-6)

    def test_background_exactly_zero(self):
        arr = np.zeros((3, 3, 3), np.float32)
        arr[1, 1, 1] = 2.0
        arr[1, 1, 2] = 4.0
        out = normalize(vol(arr))
        assert out.data[0, 0, 0] == 0.0

    def test_mean_zero_std_one_inside_mask(self):
        rng = np.random.default_rng(3)
        arr = rng.random((8, 8, 8)).astype(np.float32) + 1.0
        mask = arr > 1.3
        out = normalize(vol(arr), mask)
        assert abs(out.data[mask].mean(dtype=np.float64)) < 1e-6
        assert abs(out.data[mask].std(dtype=np.float64) - 1.0) < 1e-6

    def test_constant_brain_rejected(self):
        with pytest.raises(PreprocessError):
            normalize(vol(np.ones((2, 2, 2))))

    def test_empty_mask_rejected(self):
        with pytest.raises(PreprocessError):
            normalize(vol(np.zeros((2, 2, 2))))

    def test_idempotent_with_fixed_mask(self):
        rng = np.random.default_rng(7)
        arr = (rng.random((6, 6, 6)) * 50).astype(np.float32)
        mask = arr > 10
        once = normalize(vol(arr), mask)
        twice = normalize(once, mask)
        assert np.max(np.abs(twice.data - once.data)) < 1e-6


class TestTumorWindow:
    def test_centered_window(self):
        c = case_with_tumor((8, 8, 155), range(70, 81))
        lo, hi, partial = tumor_window(c.labels)
        assert (lo, hi) == (43, 107)
        assert not partial

    def test_clamped_at_start(self):
        c = case_with_tumor((8, 8, 155), range(0, 6))
        lo, hi, partial = tumor_window(c.labels)
        assert (lo, hi) == (0, 64)
        assert not partial

    def test_wide_tumor_flagged_partial(self):
        c = case_with_tumor((8, 8, 155), range(20, 120))
        lo, hi, partial = tumor_window(c.labels)
        assert hi - lo == 64
        assert partial

    def test_short_volume_takes_all_slices(self):
        c = case_with_tumor((8, 8, 12), [5, 6])
        lo, hi, partial = tumor_window(c.labels)
        assert (lo, hi) == (0, 12)
        assert not partial

    def test_empty_tumor_rejected(self):
        c = case_with_tumor((8, 8, 12), [5])
        empty = Volume3D(np.zeros((8, 8, 12), np.float32), (1, 1, 1), Modality.LABEL)
        with pytest.raises(PreprocessError):
            tumor_window(empty)

    @given(st.integers(0, 154), st.integers(0, 63))
    @settings(max_examples=40, deadline=None)
    def test_window_covers_small_tumors(self, start, extra):
        end = min(154, start + extra)
        c = case_with_tumor((4, 4, 155), range(start, end + 1))
        lo, hi, partial = tumor_window(c.labels)
        assert hi - lo == 64
        assert lo <= start and end < hi
        assert not partial


class TestPatchesAndFlips:
    def test_patch_has_tumor_and_right_length(self):
        c = case_with_tumor((8, 8, 100), range(40, 50))
        patch = extract_tumor_patch(c)
        assert len(patch) == 64
        assert any((s.labels > 0).any() for s in patch.slices)
        assert all(s.image.shape == (4, 8, 8) for s in patch.slices)

    def test_flips_double_slice_count(self):
        c = case_with_tumor((8, 8, 100), range(40, 50))
        patch = extract_tumor_patch(c)
        doubled = with_flips(patch)
        assert len(doubled) == 2 * len(patch)
        assert sum(s.flipped for s in doubled.slices) == len(patch)

    def test_flip_is_involution(self):
        rng = np.random.default_rng(0)
        img = rng.random((4, 8, 8)).astype(np.float32)
        lab = rng.integers(0, 5, (8, 8)).astype(np.int16)
        img2, lab2 = flip_lr(*flip_lr(img, lab))
        assert img2.tobytes() == img.tobytes()
        assert lab2.tobytes() == lab.tobytes()

    def test_hot_pixel_moves_to_mirrored_column(self):
        img = np.zeros((1, 8, 64), np.float32)
        img[0, 3, 3] = 1.0
        flipped = flip_lr(img)
        assert flipped[0, 3, 60] == 1.0
        assert flipped.sum() == 1.0

    def test_symmetric_image_unchanged(self):
        img = np.zeros((1, 4, 4), np.float32)
        img[0, :, 1] = img[0, :, 2] = 5.0
        assert np.array_equal(flip_lr(img), img)


class TestValidationSlices:
    def test_all_slices_in_order(self):
        c = case_with_tumor((6, 6, 10), [4])
        slices = validation_slices(c)
        assert len(slices) == 10
        channels = np.stack(slices, axis=-1)
        ref = normalize(c.volumes[Modality.T1]).data
        np.testing.assert_array_equal(channels[0], ref)

    def test_reassemble_restores_shape(self):
        c = case_with_tumor((6, 7, 9), [4])
        preds = [np.zeros((6, 7), np.float32) for _ in range(9)]
        assert reassemble(preds).shape == c.shape


class TestFitUnfit:
    @pytest.mark.parametrize("n,size", [(10, 6), (4, 6), (6, 6), (5, 8), (9, 4)])
    def test_unfit_inverts_fit_interior(self, n, size):
        rng = np.random.default_rng(1)
        img = rng.random((n, n)).astype(np.float32)
        back = unfit(fit_to(img, size), (n, n))
        assert back.shape == (n, n)
        if size >= n:  # pure padding round-trips exactly
            np.testing.assert_array_equal(back, img)
        else:  # cropped borders return as zeros, interior intact
            start = (n - size) // 2
            np.testing.assert_array_equal(back[start:start + size, start:start + size],
                                          img[start:start + size, start:start + size])

    def test_fit_pads_centered(self):
        img = np.ones((2, 2), np.float32)
        out = fit_to(img, 4)
        assert out.shape == (4, 4)
        assert out[1:3, 1:3].sum() == 4.0
        assert out.sum() == 4.0
