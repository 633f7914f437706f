"""Unfolded alternating-projection reconstruction.

Each stage performs a Euclidean projection onto the measurement-consistent
set, optionally corrected by a small learned depthwise-separable block
(gradient correction), followed by the prior-guided denoiser. The stage
variable lives on the shifted (L, H~, W) grid; the output is gathered back
to (L, H, W) only at the end.

A classical baseline replaces the learned denoiser with total-variation
proximal denoising (fixed-iteration Chambolle dual updates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .denoiser import DenoiserConfig, PriorPyramidBuilder, TridentDenoiser
from .errors import ShapeError
from .nn import Conv2d, Module
from .physics import SensingOperator
from .tensor import Tensor


class DscCorrection(Module):
    """Residual correction: two depthwise-separable conv layers with GELU
    between; the final pointwise conv is zero-initialized so the block is
    the identity at the start of training."""

    def __init__(self, channels: int, rng, dtype=None):
        self.dw1 = Conv2d(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
        self.pw1 = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.dw2 = Conv2d(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
        self.pw2 = Conv2d(channels, channels, 1, init="zero", dtype=dtype)

    def __call__(self, r: Tensor) -> Tensor:
        y = T.gelu(self.pw1(self.dw1(r)))
        return r + self.pw2(self.dw2(y))


def _backprojected_residual(v: Tensor, y, op: SensingOperator) -> Tensor:
    resid = T.sub(y, op.apply_shifted(v))
    return op.adjoint_shifted(T.mul(resid, op.inv_phi))


def project(v: Tensor, y, op: SensingOperator) -> Tensor:
    """Euclidean projection x = v + A^T (A A^T)^+ (y - A v) on the shifted grid."""
    v = T.as_tensor(v)
    if v.shape[-3:] != (op.bands, op.shifted_height, op.width):
        raise ShapeError(
            f"project expects shifted cube (..,{op.bands},{op.shifted_height},{op.width}), got {v.shape}"
        )
    return T.add(v, _backprojected_residual(v, y, op))


def project_gc(v: Tensor, y, op: SensingOperator, dsc: DscCorrection) -> Tensor:
    """Gradient-corrected projection: the back-projected residual passes
    through the learned correction before the update. Equals ``project``
    bitwise while the correction is at its identity initialization."""
    v = T.as_tensor(v)
    if v.shape[-3:] != (op.bands, op.shifted_height, op.width):
        raise ShapeError(
            f"project_gc expects shifted cube (..,{op.bands},{op.shifted_height},{op.width}), got {v.shape}"
        )
    r = _backprojected_residual(v, y, op)
    squeeze = r.ndim == 3
    if squeeze:
        r = T.reshape(r, (1,) + r.shape)
    corrected = dsc(r)
    if squeeze:
        corrected = T.reshape(corrected, corrected.shape[1:])
    return T.add(v, corrected)


@dataclass
class UnfoldingConfig:
    stages: int = 3
    use_gradient_correction: bool = True
    identity_denoiser: bool = False
    denoiser: DenoiserConfig = field(default_factory=lambda: DenoiserConfig(bands=8))


class UnfoldingNet(Module):
    """Stage-unshared corrections and denoisers plus the shared prior pyramid."""

    def __init__(self, cfg: UnfoldingConfig, rng, dtype=None):
        if cfg.stages < 1:
            raise ShapeError(f"stage count must be >= 1, got {cfg.stages}")
        self.cfg = cfg
        d = cfg.denoiser
        self.pyramid = PriorPyramidBuilder(d.latent_tokens, d.latent_channels, dtype=dtype)
        self.corrections = [DscCorrection(d.bands, rng, dtype=dtype) for _ in range(cfg.stages)]
        if cfg.identity_denoiser:
            self.denoisers = []
        else:
            self.denoisers = [TridentDenoiser(d, rng, dtype=dtype) for _ in range(cfg.stages)]

    def __call__(self, y, op: SensingOperator, z) -> Tensor:
        return run_unfolding(y, op, self, z)


def initial_estimate(y, op: SensingOperator) -> Tensor:
    """v0 = A^T (A A^T)^+ y on the shifted grid (equals project(0))."""
    y = T.as_tensor(y)
    return op.adjoint_shifted(T.mul(y, op.inv_phi))


def run_unfolding(y, op: SensingOperator, net: UnfoldingNet, z) -> Tensor:
    """K alternations of (corrected) projection and denoising.

    ``y`` may be (H~, W) or batched (B, H~, W); ``z`` is the prior latent
    (N, C) or (B, N, C). Returns the cropped (.., L, H, W) estimate,
    unclamped so gradients stay alive; clamp only when emitting cubes.
    """
    y = T.as_tensor(y)
    batched = y.ndim == 3
    if not batched:
        y = T.reshape(y, (1,) + y.shape)
    v = initial_estimate(y, op)
    pyramid = net.pyramid(T.as_tensor(z)) if not net.cfg.identity_denoiser else None
    # the denoiser halves extents twice and its bottleneck attention needs
    # even extents there, so the stage variable is padded to multiples of 8
    pad_h = (-op.shifted_height) % 8
    pad_w = (-op.width) % 8
    for k in range(net.cfg.stages):
        if net.cfg.use_gradient_correction:
            x = project_gc(v, y, op, net.corrections[k])
        else:
            x = project(v, y, op)
        if net.cfg.identity_denoiser:
            v = x
            continue
        if pad_h or pad_w:
            xp = T.pad(x, [(0, 0), (0, 0), (0, pad_h), (0, pad_w)])
        else:
            xp = x
        vp = net.denoisers[k](xp, pyramid)
        v = vp[:, :, : op.shifted_height, : op.width] if (pad_h or pad_w) else vp
    out = op.crop_shifted(v)
    return out if batched else T.reshape(out, out.shape[1:])


def emit_cube(x) -> np.ndarray:
    """Clamp to [0, 1] for emission; never used inside the gradient graph."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# classical GAP-TV baseline
# ---------------------------------------------------------------------------

def tv_denoise(f: np.ndarray, weight: float, n_inner: int = 8) -> np.ndarray:
    """Chambolle dual iterations for min_u 0.5||u-f||^2 + weight*TV(u), per 2-D slice."""
    if weight <= 0.0:
        return f
    tau = 0.125
    p = np.zeros((2,) + f.shape, dtype=np.float64)
    f64 = f.astype(np.float64)
    for _ in range(n_inner):
        u = _tv_div_nd(p) - f64 / weight
        g = _tv_grad_nd(u)
        norm = np.sqrt(g[0] ** 2 + g[1] ** 2)
        p = (p + tau * g) / (1.0 + tau * norm)
    return (f64 - weight * _tv_div_nd(p)).astype(f.dtype)


def _tv_grad_nd(u: np.ndarray) -> np.ndarray:
    # forward differences along the last two axes, zero at the far border
    g = np.zeros((2,) + u.shape, dtype=u.dtype)
    g[0, ..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    g[1, ..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return g


def _tv_div_nd(p: np.ndarray) -> np.ndarray:
    d = np.zeros(p.shape[1:], dtype=p.dtype)
    d[..., :-1, :] += p[0, ..., :-1, :]
    d[..., 1:, :] -= p[0, ..., :-1, :]
    d[..., :, :-1] += p[1, ..., :, :-1]
    d[..., :, 1:] -= p[1, ..., :, :-1]
    return d


def gap_tv(y: np.ndarray, op: SensingOperator, iterations: int = 50,
           tv_weight: float = 0.05, tv_inner: int = 8,
           callback=None) -> np.ndarray:
    """Classical alternation: projection then per-band TV proximal denoising.

    Runs in the cube domain, is fully deterministic, and can be stopped at
    any iterate; with ``tv_weight`` 0 every iterate is the pure projection.
    """
    if iterations < 1:
        raise ShapeError(f"iterations must be >= 1, got {iterations}")
    op._check_meas(y)
    v = op.normalize_measurement(y)
    for it in range(iterations):
        resid = (y - op.forward(v)) * op.inv_phi
        x = v + op.adjoint(resid)
        v = tv_denoise(x, tv_weight, n_inner=tv_inner)
        if callback is not None:
            callback(it, v)
    return v
