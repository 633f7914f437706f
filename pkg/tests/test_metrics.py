"""Quality metrics against naive double-loop references, plus error maps."""

import math

import numpy as np
import pytest

from cassikit import metrics as M
from cassikit.errors import NumericError, ShapeError, UsageError


def pair(seed=0, l=3, h=16, w=16):
    rng = np.random.default_rng(seed)
    truth = rng.random((l, h, w)).astype(np.float32)
    recon = np.clip(truth + 0.05 * rng.standard_normal((l, h, w)).astype(np.float32), 0, 1)
    return recon, truth


class TestPsnr:
    def test_identical_hits_cap(self):
        _, truth = pair()
        assert M.psnr(truth, truth) == 100.0

    def test_uniform_error(self):
        truth = np.zeros((2, 8, 8))
        recon = truth + 0.1
        assert abs(M.psnr(recon, truth) - 20.0) < 1e-12

    def test_matches_double_loop(self):
        recon, truth = pair(3)
        vals = []
        for l in range(truth.shape[0]):
            acc = 0.0
            n = 0
            for i in range(truth.shape[1]):
                for j in range(truth.shape[2]):
                    d = float(recon[l, i, j]) - float(truth[l, i, j])
                    acc += d * d
                    n += 1
            mse = acc / n
            vals.append(100.0 if mse == 0 else min(100.0, 10.0 * math.log10(1.0 / mse)))
        ref = sum(vals) / len(vals)
        assert abs(M.psnr(recon, truth) - ref) <= 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            M.psnr(np.zeros((2, 8, 8)), np.zeros((3, 8, 8)))


class TestSsim:
    def test_identical_is_one(self):
        _, truth = pair(1)
        assert M.ssim(truth, truth) == 1.0

    def test_inverted_below_one(self):
        _, truth = pair(2)
        assert M.ssim(1.0 - truth, truth) < 1.0

    def test_small_extent_directs_to_flag(self):
        with pytest.raises(UsageError, match="window"):
            M.ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))
        # a smaller window makes it valid
        assert M.ssim(np.zeros((1, 8, 8)) + 0.3, np.zeros((1, 8, 8)) + 0.3, window=7) == 1.0

    def test_matches_double_loop(self):
        recon, truth = pair(4, l=2, h=14, w=14)
        win, sigma, k1, k2 = 11, 1.5, 0.01, 0.03
        ax = np.arange(win) - (win - 1) / 2
        g = np.exp(-0.5 * (ax / sigma) ** 2)
        kern = np.outer(g, g)
        kern /= kern.sum()
        c1, c2 = k1 ** 2, k2 ** 2
        band_vals = []
        for l in range(truth.shape[0]):
            x = recon[l].astype(np.float64)
            y = truth[l].astype(np.float64)
            vals = []
            for i in range(truth.shape[1] - win + 1):
                for j in range(truth.shape[2] - win + 1):
                    wx = x[i: i + win, j: j + win]
                    wy = y[i: i + win, j: j + win]
                    mx = (wx * kern).sum()
                    my = (wy * kern).sum()
                    vx = (wx * wx * kern).sum() - mx * mx
                    vy = (wy * wy * kern).sum() - my * my
                    cxy = (wx * wy * kern).sum() - mx * my
                    vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                                / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
            band_vals.append(np.mean(vals))
        ref = float(np.mean(band_vals))
        assert abs(M.ssim(recon, truth) - ref) <= 1e-7


class TestSpectralCorr:
    def test_identical_is_one(self):
        _, truth = pair(5)
        assert abs(M.spectral_corr(truth, truth, (2, 2, 8, 8)) - 1.0) <= 1e-12

    def test_affine_invariance(self):
        _, truth = pair(6)
        recon = 0.4 * truth + 0.1
        assert abs(M.spectral_corr(recon, truth, (0, 0, 16, 16)) - 1.0) <= 1e-12

    def test_matches_hand_formula(self):
        recon, truth = pair(7, l=5)
        region = (1, 2, 7, 6)
        x0, y0, rw, rh = region
        a = recon[:, y0: y0 + rh, x0: x0 + rw].astype(np.float64).mean(axis=(1, 2))
        b = truth[:, y0: y0 + rh, x0: x0 + rw].astype(np.float64).mean(axis=(1, 2))
        am, bm = a - a.mean(), b - b.mean()
        ref = float((am * bm).sum() / math.sqrt((am * am).sum() * (bm * bm).sum()))
        assert abs(M.spectral_corr(recon, truth, region) - ref) <= 1e-10

    def test_constant_truth_errors(self):
        truth = np.full((3, 8, 8), 0.5)
        recon = truth + np.random.default_rng(0).random((3, 8, 8)) * 0.1
        with pytest.raises(NumericError):
            M.spectral_corr(recon, truth, (0, 0, 8, 8))

    def test_region_validation(self):
        _, truth = pair(8)
        with pytest.raises(UsageError):
            M.spectral_corr(truth, truth, (10, 10, 10, 10))


class TestErrorMap:
    def test_identical_uniform_zero_colour(self):
        _, truth = pair(9)
        img = M.error_map(truth, truth, 1)
        assert np.all(img == M.COLORMAP[0])

    def test_single_hot_pixel(self):
        truth = np.zeros((1, 8, 8), dtype=np.float32)
        recon = truth.copy()
        recon[0, 3, 4] = 0.7
        img = M.error_map(recon, truth, 1)
        assert tuple(img[3, 4]) == tuple(M.COLORMAP[255])
        mask = np.ones((8, 8), dtype=bool)
        mask[3, 4] = False
        assert np.all(img[mask] == M.COLORMAP[0])

    def test_band_range(self):
        _, truth = pair(10)
        with pytest.raises(UsageError):
            M.error_map(truth, truth, 0)
        with pytest.raises(UsageError):
            M.error_map(truth, truth, 4)

    def test_png_roundtrip_bit_exact(self, tmp_path):
        recon, truth = pair(11)
        img = M.error_map(recon, truth, 2)
        path = tmp_path / "err.png"
        M.save_png(path, img)
        back = M.load_png(path)
        assert np.array_equal(img, back)
