"""Reconstruction quality metrics and error-map rendering.

PSNR and SSIM are computed per band and averaged, the common convention
for snapshot spectral reconstruction benchmarks. All arithmetic runs in
float64 regardless of input dtype.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError, UsageError

PSNR_CAP_DB = 100.0


def _check_pair(recon: np.ndarray, truth: np.ndarray):
    if recon.shape != truth.shape:
        raise ShapeError(f"shape mismatch: recon {recon.shape} vs truth {truth.shape}")
    if recon.ndim != 3:
        raise ShapeError(f"expected (L, H, W) cubes, got {recon.shape}")


def psnr(recon: np.ndarray, truth: np.ndarray) -> float:
    """Band-averaged PSNR in dB for data range [0, 1], capped at 100 dB.

    Parameters
    ----------
    recon, truth : ndarray
        (L, H, W) cubes with values in [0, 1].
    """
    _check_pair(recon, truth)
    r = recon.astype(np.float64)
    t = truth.astype(np.float64)
    vals = []
    for l in range(r.shape[0]):
        mse = np.mean((r[l] - t[l]) ** 2)
        if mse == 0.0:
            vals.append(PSNR_CAP_DB)
        else:
            vals.append(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))
    return float(np.mean(vals))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def ssim(recon: np.ndarray, truth: np.ndarray, window: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Band-averaged structural similarity with a Gaussian window.

    Statistics are taken over all fully valid window positions. Raises a
    usage error when the spatial extents are smaller than the window;
    pass a smaller odd ``window`` in that case.
    """
    _check_pair(recon, truth)
    _, h, w = recon.shape
    if h < window or w < window:
        raise UsageError(
            f"spatial extents {(h, w)} smaller than the {window}x{window} SSIM window; "
            "pass a smaller odd window (e.g. window=7)"
        )
    kern = _gaussian_window(window, sigma)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    vals = []
    for l in range(recon.shape[0]):
        x = recon[l].astype(np.float64)
        y = truth[l].astype(np.float64)
        wx = sliding_window_view(x, (window, window))
        wy = sliding_window_view(y, (window, window))
        mu_x = np.einsum("ijkl,kl->ij", wx, kern)
        mu_y = np.einsum("ijkl,kl->ij", wy, kern)
        xx = np.einsum("ijkl,kl->ij", wx * wx, kern)
        yy = np.einsum("ijkl,kl->ij", wy * wy, kern)
        xy = np.einsum("ijkl,kl->ij", wx * wy, kern)
        var_x = xx - mu_x * mu_x
        var_y = yy - mu_y * mu_y
        cov = xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def spectral_corr(recon: np.ndarray, truth: np.ndarray,
                  region: tuple[int, int, int, int]) -> float:
    """Pearson correlation between region-mean spectra.

    ``region`` is (col, row, width, height) in pixels. The two curves are
    the per-band means over the region. A constant ground-truth spectrum
    has no defined correlation and raises a numeric error.
    """
    _check_pair(recon, truth)
    x0, y0, rw, rh = region
    _, h, w = truth.shape
    if rw < 1 or rh < 1 or x0 < 0 or y0 < 0 or x0 + rw > w or y0 + rh > h:
        raise UsageError(f"region {region} outside image extents {(w, h)}")
    curve_r = recon[:, y0: y0 + rh, x0: x0 + rw].astype(np.float64).mean(axis=(1, 2))
    curve_t = truth[:, y0: y0 + rh, x0: x0 + rw].astype(np.float64).mean(axis=(1, 2))
    dt = curve_t - curve_t.mean()
    dr = curve_r - curve_r.mean()
    denom_t = np.sqrt(np.sum(dt * dt))
    denom_r = np.sqrt(np.sum(dr * dr))
    if denom_t == 0.0:
        raise NumericError("ground-truth region spectrum is constant; correlation undefined")
    if denom_r == 0.0:
        raise NumericError("reconstruction region spectrum is constant; correlation undefined")
    return float(np.sum(dt * dr) / (denom_t * denom_r))


# ---------------------------------------------------------------------------
# error maps
# ---------------------------------------------------------------------------

def _build_colormap() -> np.ndarray:
    """Fixed 256-entry RGB table (dark blue -> magenta -> orange -> yellow -> white)."""
    anchors = np.array([
        [0, 0, 0],
        [32, 12, 96],
        [120, 28, 140],
        [210, 60, 78],
        [250, 150, 40],
        [252, 230, 90],
        [255, 255, 255],
    ], dtype=np.int64)
    table = np.empty((256, 3), dtype=np.uint8)
    spans = len(anchors) - 1
    for i in range(256):
        pos = i * spans / 255.0
        lo = min(int(pos), spans - 1)
        frac = pos - lo
        rgb = np.round(anchors[lo] * (1.0 - frac) + anchors[lo + 1] * frac)
        table[i] = rgb.astype(np.uint8)
    return table


COLORMAP = _build_colormap()


def error_map(recon: np.ndarray, truth: np.ndarray, band: int) -> np.ndarray:
    """Quantized |recon - truth| heat image for a 1-based band index.

    The absolute error at the band is scaled by its own maximum, rounded
    to 256 levels and passed through the fixed colormap; returns an
    (H, W, 3) uint8 array. Identical inputs give a uniformly zero-index
    image.
    """
    _check_pair(recon, truth)
    if not 1 <= band <= truth.shape[0]:
        raise UsageError(f"band {band} out of range [1, {truth.shape[0]}]")
    err = np.abs(recon[band - 1].astype(np.float64) - truth[band - 1].astype(np.float64))
    peak = err.max()
    if peak == 0.0:
        idx = np.zeros(err.shape, dtype=np.uint8)
    else:
        idx = np.round(255.0 * err / peak).astype(np.uint8)
    return COLORMAP[idx]


def save_png(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
