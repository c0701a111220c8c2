import math

import numpy as np
import pytest

from conftest import RNG
from hymir.metrics import _gaussian_window, luma, psnr, rgb_to_ycbcr, ssim


class TestPsnr:
    def test_tenth_offset_is_twenty_db(self):
        gt = RNG(0).uniform(0.0, 0.9, (1, 3, 16, 16))
        assert abs(psnr(gt + 0.1, gt) - 20.0) < 1e-9

    def test_identical_is_infinite(self):
        x = RNG(1).uniform(0.0, 1.0, (3, 16, 16))
        assert math.isinf(psnr(x, x.copy()))

    def test_permutation_invariant(self):
        rng = RNG(2)
        a, b = rng.uniform(0.0, 1.0, (3, 8, 8)), rng.uniform(0.0, 1.0, (3, 8, 8))
        perm = rng.permutation(a.size)
        ap = a.ravel()[perm].reshape(a.shape)
        bp = b.ravel()[perm].reshape(b.shape)
        assert abs(psnr(a, b) - psnr(ap, bp)) < 1e-9

    def test_max_val_shift(self):
        rng = RNG(3)
        a, b = rng.uniform(0.0, 1.0, (3, 8, 8)), rng.uniform(0.0, 1.0, (3, 8, 8))
        assert abs(psnr(a, b, max_val=2.0) - psnr(a, b) - 20.0 * math.log10(2.0)) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="psnr"):
            psnr(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))


def ssim_brute_force(pred, gt, max_val=1.0):
    """Windowed SSIM by explicit loops over every valid window position."""
    k1d = _gaussian_window()
    k2d = np.outer(k1d, k1d)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    h, w = pred.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            p = pred[i : i + 11, j : j + 11]
            g = gt[i : i + 11, j : j + 11]
            mp, mg = np.sum(k2d * p), np.sum(k2d * g)
            vp = np.sum(k2d * p * p) - mp * mp
            vg = np.sum(k2d * g * g) - mg * mg
            cov = np.sum(k2d * p * g) - mp * mg
            vals.append(((2 * mp * mg + c1) * (2 * cov + c2)) / ((mp * mp + mg * mg + c1) * (vp + vg + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_window_sums_to_one(self):
        k = _gaussian_window()
        assert abs(k.sum() - 1.0) < 1e-12
        assert np.allclose(k, k[::-1], atol=0)

    def test_identical_is_one(self):
        x = RNG(4).uniform(0.0, 1.0, (3, 16, 16))
        assert abs(ssim(x, x.copy()) - 1.0) < 1e-12

    def test_symmetric(self):
        rng = RNG(5)
        a, b = rng.uniform(0.0, 1.0, (1, 3, 16, 16)), rng.uniform(0.0, 1.0, (1, 3, 16, 16))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9

    def test_matches_brute_force_windows(self):
        rng = RNG(6)
        a, b = rng.uniform(0.0, 1.0, (16, 16)), rng.uniform(0.0, 1.0, (16, 16))
        assert abs(ssim(a, b) - ssim_brute_force(a, b)) < 1e-12

    @pytest.mark.parametrize("seed", [7, 8, 9])
    def test_bounded_for_arbitrary_inputs(self, seed):
        rng = RNG(seed)
        a = rng.standard_normal((2, 16, 16)) * 3.0
        b = rng.standard_normal((2, 16, 16)) * 3.0
        assert -1.0 - 1e-9 <= ssim(a, b) <= 1.0 + 1e-9

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_unit_interval_for_degraded_clean_pairs(self, seed):
        rng = RNG(seed)
        clean = rng.uniform(0.2, 0.8, (3, 24, 24))
        noisy = np.clip(clean + rng.normal(0.0, 0.05, clean.shape), 0.0, 1.0)
        assert 0.0 <= ssim(clean, noisy) <= 1.0 + 1e-9

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_independent_pairs_score_near_zero(self, seed):
        # Window covariance of unrelated images is symmetric around zero, so
        # the mean index hovers just either side of zero; only positively
        # correlated pairs are guaranteed non-negative.
        rng = RNG(seed)
        a = rng.uniform(0.0, 1.0, (3, 24, 24))
        b = rng.uniform(0.0, 1.0, (3, 24, 24))
        assert abs(ssim(a, b)) < 0.1

    def test_anticorrelated_planes_go_negative(self):
        # Checkerboard against its inverse: covariance is negative in every
        # window, so the local index drops below zero. This is why a universal
        # [0, 1] assertion would be wrong.
        base = np.indices((16, 16)).sum(axis=0) % 2
        a = base.astype(np.float64)
        b = 1.0 - a
        assert ssim(a, b) < 0.0

    def test_small_extent_rejected(self):
        with pytest.raises(ValueError, match=">= 11"):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))


class TestYcbcr:
    def test_white_luma_is_one(self):
        white = np.ones((3, 4, 4))
        out = rgb_to_ycbcr(white)
        assert np.all(np.abs(out[0] - 1.0) < 1e-12)
        assert np.all(np.abs(out[1] - 0.5) < 1e-12)
        assert np.all(np.abs(out[2] - 0.5) < 1e-12)

    def test_gray_is_neutral(self):
        gray = np.full((1, 3, 4, 4), 0.5)
        out = rgb_to_ycbcr(gray)
        assert np.allclose(out[:, 0], 0.5, atol=1e-12)
        assert np.allclose(out[:, 1:], 0.5, atol=1e-12)

    def test_luma_weights(self):
        img = np.zeros((3, 2, 2))
        img[0] = 1.0  # pure red
        assert abs(rgb_to_ycbcr(img)[0, 0, 0] - 0.299) < 1e-12

    def test_luma_keeps_channel_axis(self):
        y = luma(RNG(13).uniform(0.0, 1.0, (2, 3, 8, 8)))
        assert y.shape == (2, 1, 8, 8)

    def test_channel_axis_validated(self):
        with pytest.raises(ValueError, match="3 channels"):
            rgb_to_ycbcr(np.zeros((4, 8, 8)))
