"""SD-CASSI camera model: mask modulation, per-band dispersion, sensor
integration, and the implicit sensing operator with its diagonal
pseudo-inverse.

In-memory layout is band-major ``(L, H, W)`` (row-major within a band),
so the dispersion shift is a plain row-offset copy: band ``l`` of the
shifted cube occupies rows ``[l*step, l*step + H)`` of the ``H~ x W``
canvas, where ``H~ = H + step*(L-1)``.

The measurement is ``Y = sum_l Mshift_l * shift(x)_l + noise``; the
sensing matrix is a concatenation of diagonals built from the shifted
mask, hence ``A A^T`` is diagonal with entries ``phi = sum_l Mshift_l^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class ShiftSpec:
    """Per-band dispersion: band index l (0-based) shifts by ``step * l`` rows."""

    step: int

    def __post_init__(self):
        if self.step < 0:
            raise ShapeError(f"dispersion step must be >= 0, got {self.step}")

    def offset(self, band: int) -> int:
        return self.step * band

    def shifted_height(self, height: int, bands: int) -> int:
        return height + self.step * (bands - 1)


class SensingOperator:
    """Coded aperture + dispersion, applied implicitly.

    Precomputes the shifted mask ``(L, H~, W)`` and the diagonal of
    ``A A^T``; entries where no band contributes are zero and their
    pseudo-inverse is taken as zero.
    """

    def __init__(self, mask: np.ndarray, bands: int, shift: ShiftSpec):
        mask = np.asarray(mask)
        if mask.ndim != 2:
            raise ShapeError(f"mask must be 2-D (H, W), got shape {mask.shape}")
        if bands < 1:
            raise ShapeError(f"bands must be >= 1, got {bands}")
        self.mask = mask
        self.bands = bands
        self.shift = shift
        h, w = mask.shape
        self.height = h
        self.width = w
        self.shifted_height = shift.shifted_height(h, bands)
        sm = np.zeros((bands, self.shifted_height, w), dtype=mask.dtype)
        for l in range(bands):
            d = shift.offset(l)
            sm[l, d: d + h] = mask
        self.shifted_mask = sm
        phi = np.zeros((self.shifted_height, w), dtype=mask.dtype)
        for l in range(bands):
            phi += sm[l] * sm[l]
        self.phi_diag = phi
        with np.errstate(divide="ignore"):
            inv = np.where(phi > 0, 1.0 / np.where(phi > 0, phi, 1.0), 0.0)
        self.inv_phi = inv.astype(mask.dtype)

    # -- spatial shift -------------------------------------------------
    def shift_cube(self, x: np.ndarray) -> np.ndarray:
        """Scatter bands to their dispersed rows; rows outside a band stay zero."""
        self._check_cube(x)
        out_shape = x.shape[:-3] + (self.bands, self.shifted_height, self.width)
        out = np.zeros(out_shape, dtype=x.dtype)
        h = self.height
        for l in range(self.bands):
            d = self.shift.offset(l)
            out[..., l, d: d + h, :] = x[..., l, :, :]
        return out

    def unshift_cube(self, y: np.ndarray) -> np.ndarray:
        """Exact transpose of ``shift_cube``: gather each band's rows back."""
        if y.shape[-3:] != (self.bands, self.shifted_height, self.width):
            raise ShapeError(
                f"expected shifted cube (..,{self.bands},{self.shifted_height},{self.width}), got {y.shape}"
            )
        h = self.height
        parts = []
        for l in range(self.bands):
            d = self.shift.offset(l)
            parts.append(y[..., l, d: d + h, :])
        return np.stack(parts, axis=-3)

    # -- measurement model ----------------------------------------------
    def forward(self, x: np.ndarray, noise_sigma: float = 0.0,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Simulate the sensor: shift, modulate with the shifted mask, integrate."""
        self._check_cube(x)
        shifted = self.shift_cube(x)
        y = np.zeros(x.shape[:-3] + (self.shifted_height, self.width), dtype=x.dtype)
        for l in range(self.bands):
            y += self.shifted_mask[l] * shifted[..., l, :, :]
        if noise_sigma > 0.0:
            if rng is None:
                raise ShapeError("noisy forward requires an explicit rng")
            y = y + noise_sigma * rng.standard_normal(y.shape).astype(y.dtype)
        return y

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """A^T y as an (L, H, W) cube: modulate, then gather rows."""
        self._check_meas(y)
        prod = self.shifted_mask * y[..., None, :, :]
        return self.unshift_cube(prod)

    def normalize_measurement(self, y: np.ndarray) -> np.ndarray:
        """A^T (A A^T)^+ y; zero-coverage sensor pixels map to zero."""
        self._check_meas(y)
        return self.adjoint(y * self.inv_phi)

    # -- shifted-domain operator (used inside the unfolding graph) ------
    def apply_shifted(self, v: Tensor) -> Tensor:
        """A v for v living on the shifted grid (..., L, H~, W)."""
        return T.sum_(T.mul(v, self.shifted_mask), axis=-3)

    def adjoint_shifted(self, u: Tensor) -> Tensor:
        """A^T u on the shifted grid: broadcast across bands and modulate."""
        b = T.reshape(u, u.shape[:-2] + (1,) + u.shape[-2:])
        return T.mul(b, self.shifted_mask)

    def crop_shifted(self, v: Tensor) -> Tensor:
        """Differentiable gather from the shifted grid back to (L, H, W)."""
        h = self.height
        parts = []
        for l in range(self.bands):
            d = self.shift.offset(l)
            sl = v[..., l: l + 1, d: d + h, :]
            parts.append(sl)
        return T.concat(parts, axis=-3)

    def embed_shifted(self, x: Tensor) -> Tensor:
        """Differentiable scatter of an (L, H, W) cube onto the shifted grid."""
        hpad = self.shifted_height
        h = self.height
        parts = []
        nd = x.ndim
        for l in range(self.bands):
            d = self.shift.offset(l)
            pad_width = [(0, 0)] * nd
            pad_width[-2] = (d, hpad - h - d)
            parts.append(T.pad(x[..., l: l + 1, :, :], pad_width))
        return T.concat(parts, axis=-3)

    # -- validation ------------------------------------------------------
    def _check_cube(self, x):
        if x.shape[-3:] != (self.bands, self.height, self.width):
            raise ShapeError(
                f"expected cube (..,{self.bands},{self.height},{self.width}), got {x.shape}"
            )

    def _check_meas(self, y):
        if y.shape[-2:] != (self.shifted_height, self.width):
            raise ShapeError(
                f"expected measurement (..,{self.shifted_height},{self.width}), got {y.shape}"
            )


def make_mask(seed: int, height: int, width: int, dtype=np.float32) -> np.ndarray:
    """I.i.d. Bernoulli(0.5) binary coded aperture."""
    rng = np.random.default_rng(seed)
    return (rng.random((height, width)) < 0.5).astype(dtype)


def make_operator(mask: np.ndarray, bands: int, step: int) -> SensingOperator:
    return SensingOperator(mask, bands, ShiftSpec(step))


# ---------------------------------------------------------------------------
# dense oracles (tiny sizes only; used by tests and `selftest`)
# ---------------------------------------------------------------------------

def dense_shift_matrix(op: SensingOperator) -> np.ndarray:
    """0/1 matrix mapping vec(L,H,W) to vec(L,H~,W)."""
    l, h, w = op.bands, op.height, op.width
    hs = op.shifted_height
    s = np.zeros((l * hs * w, l * h * w))
    for li in range(l):
        d = op.shift.offset(li)
        for r in range(h):
            for c in range(w):
                s[(li * hs + d + r) * w + c, (li * h + r) * w + c] = 1.0
    return s


def dense_sensing_matrix(op: SensingOperator) -> np.ndarray:
    """Explicit A mapping vec(L,H,W) to vec(H~,W): diagonal concat times shift."""
    return dense_modulation_matrix(op) @ dense_shift_matrix(op)


def dense_modulation_matrix(op: SensingOperator) -> np.ndarray:
    """[diag(Mshift_1), ..., diag(Mshift_L)] acting on the shifted cube."""
    l = op.bands
    n = op.shifted_height * op.width
    d = np.zeros((n, l * n))
    for li in range(l):
        d[:, li * n: (li + 1) * n] = np.diag(op.shifted_mask[li].reshape(-1))
    return d


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

_SCENE_KINDS = ("gaussian_blobs", "spectral_ramps", "checker")


def _texture(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray,
             waves: int = 6, strength: float = 0.45) -> np.ndarray:
    """Multiplicative spatial texture from a few random gratings, in
    [1 - strength, 1 + strength]; real scenes carry fine spatial detail
    that pixelwise-smooth phantoms lack."""
    field = np.zeros_like(yy)
    for _ in range(waves):
        fy, fx = rng.uniform(-6.0, 6.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phase)
    peak = np.abs(field).max()
    if peak > 0:
        field /= peak
    return 1.0 + strength * field


def make_synthetic_scene(seed: int, width: int, height: int, bands: int,
                         kind: str = "gaussian_blobs", dtype=np.float32) -> np.ndarray:
    """Deterministic (L, H, W) cube in [0, 1].

    Pixel spectra are smooth across bands; blob and ramp scenes carry
    multiplicative spatial texture, the checker holds exactly two
    spectral signatures.
    """
    if min(width, height) < 8:
        raise ShapeError(f"scene extents must be >= 8, got {(width, height)}")
    if kind not in _SCENE_KINDS:
        raise ShapeError(f"unknown scene kind {kind!r}; choose from {_SCENE_KINDS}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    lam = np.arange(bands, dtype=np.float64) / max(bands - 1, 1)

    if kind == "gaussian_blobs":
        cube = np.zeros((bands, height, width))
        n_blobs = int(rng.integers(3, 6))
        for _ in range(n_blobs):
            cy, cx = rng.random(2)
            sy = 0.08 + 0.22 * rng.random()
            sx = 0.08 + 0.22 * rng.random()
            spatial = np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
            spatial *= _texture(rng, yy, xx)
            centre = rng.random()
            widthl = 0.25 + 0.5 * rng.random()
            spectrum = np.exp(-0.5 * ((lam - centre) / widthl) ** 2)
            cube += spectrum[:, None, None] * spatial[None]
        cube += 0.05
    elif kind == "spectral_ramps":
        theta = rng.random() * np.pi
        u = np.cos(theta) * xx + np.sin(theta) * yy
        u = (u - u.min()) / max(u.max() - u.min(), 1e-9)
        u = np.clip(u * _texture(rng, yy, xx, strength=0.35), 0.0, 1.0)
        pa, pb = rng.random(2)
        spec_a = 0.2 + 0.8 * (0.5 + 0.5 * np.sin(2 * np.pi * (lam * (0.5 + pa) + pa)))
        spec_b = 0.2 + 0.8 * (0.5 + 0.5 * np.cos(2 * np.pi * (lam * (0.5 + pb) + pb)))
        cube = spec_a[:, None, None] * u[None] + spec_b[:, None, None] * (1.0 - u[None])
    else:  # checker
        tile = max(2, min(height, width) // 4)
        grid = ((yy * (height - 1)).astype(int) // tile + (xx * (width - 1)).astype(int) // tile) % 2
        p1, p2 = rng.random(2)
        spec_1 = 0.15 + 0.7 * (0.5 + 0.5 * np.sin(2 * np.pi * (lam + p1)))
        spec_2 = 0.15 + 0.7 * (0.5 + 0.5 * np.cos(2 * np.pi * (lam + p2)))
        cube = np.where(grid[None] == 0, spec_1[:, None, None], spec_2[:, None, None])
        cube = np.broadcast_to(cube, (bands, height, width)).copy()

    cube = cube / max(cube.max(), 1e-9)
    return np.clip(cube, 0.0, 1.0).astype(dtype)
