"""Latent prior: image encoders, the few-step latent DDPM, and prior
generation for inference.

The ground-truth prior is encoded from the concatenation of the
normalized back-projection and the clean cube; at inference a conditional
encoder compresses the normalized measurement alone and a small MLP noise
predictor drives a T-step reverse chain from pure Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError, UsageError
from .nn import Conv2d, Linear, MBlock, MixerBlock, Module, adaptive_avg_pool
from .tensor import Tensor

ALPHA_BAR_CEILING = 1e-4  # every schedule must end at least this close to pure noise


@dataclass(frozen=True)
class DiffusionSchedule:
    """beta_t in (0,1) for t = 1..T with alpha_t = 1 - beta_t and
    alpha_bar_t strictly decreasing to <= 1e-4."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        object.__setattr__(self, "betas", betas)
        if betas.ndim != 1 or betas.size < 1:
            raise UsageError("schedule needs a 1-D beta array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise NumericError("beta values must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if np.any(np.diff(alpha_bars) >= 0.0):
            raise NumericError("alpha_bar must be strictly decreasing")
        if alpha_bars[-1] > ALPHA_BAR_CEILING:
            raise NumericError(
                f"alpha_bar_T = {alpha_bars[-1]:.3e} exceeds {ALPHA_BAR_CEILING:.0e}; "
                "the chain must end near pure noise"
            )
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def steps(self) -> int:
        return int(self.betas.size)

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int):
        if not 1 <= t <= self.steps:
            raise UsageError(f"time step {t} outside [1, {self.steps}]")


def make_schedule(steps: int, beta_start: float = 0.1, beta_end: float = 0.99) -> DiffusionSchedule:
    """Linear beta schedule; for very short chains where the linear default
    cannot reach near-pure noise, falls back to a constant-ratio schedule
    targeting alpha_bar_T = 1e-5."""
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")
    if steps == 1:
        betas = np.array([1.0 - 1e-5])
    else:
        betas = np.linspace(beta_start, beta_end, steps)
    if np.cumprod(1.0 - betas)[-1] > ALPHA_BAR_CEILING:
        ratio = (1e-5) ** (1.0 / steps)
        betas = np.full(steps, 1.0 - ratio)
    return DiffusionSchedule(betas)


# ---------------------------------------------------------------------------
# forward noising and reverse sampling
# ---------------------------------------------------------------------------

def diffuse_forward(z0, t: int, eps, schedule: DiffusionSchedule):
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    ab = schedule.alpha_bar(t)
    ca, ce = math.sqrt(ab), math.sqrt(1.0 - ab)
    if isinstance(z0, Tensor) or isinstance(eps, Tensor):
        return T.add(T.mul(T.as_tensor(z0), ca), T.mul(T.as_tensor(eps), ce))
    return ca * np.asarray(z0) + ce * np.asarray(eps)


def posterior_mean(z_t, t: int, eps, schedule: DiffusionSchedule):
    """Reverse-posterior mean given the noise actually added at step t."""
    a = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    coef = (1.0 - a) / math.sqrt(1.0 - ab)
    scale = 1.0 / math.sqrt(a)
    if isinstance(z_t, Tensor) or isinstance(eps, Tensor):
        return T.mul(T.sub(T.as_tensor(z_t), T.mul(T.as_tensor(eps), coef)), scale)
    return scale * (np.asarray(z_t) - coef * np.asarray(eps))


def reverse_step(z_t, t: int, c, eps_model, schedule: DiffusionSchedule, noise=None):
    """One reverse update with predicted noise and variance 1 - alpha_t.

    ``noise`` is ignored at t = 1 (the final step is deterministic).
    """
    schedule._check_t(t)
    eps_hat = eps_model(z_t, c, t)
    mean = posterior_mean(z_t, t, eps_hat, schedule)
    if t == 1 or noise is None:
        return mean
    sigma = math.sqrt(1.0 - schedule.alpha(t))
    if isinstance(mean, Tensor) or isinstance(noise, Tensor):
        return T.add(T.as_tensor(mean), T.mul(T.as_tensor(noise), sigma))
    return mean + sigma * np.asarray(noise)


def generate_prior(c: Tensor, schedule: DiffusionSchedule, eps_model,
                   rng: np.random.Generator, stochastic: bool = True) -> Tensor:
    """Sample the prior latent: start from N(0, I) and run the reverse chain.

    Gradients flow through every step into the noise predictor (and into
    whatever produced ``c``); injected noise enters as constants.
    """
    c = T.as_tensor(c)
    shape = c.shape
    dtype = c.dtype
    z = Tensor(rng.standard_normal(shape).astype(dtype))
    for t in range(schedule.steps, 0, -1):
        noise = None
        if stochastic and t > 1:
            noise = rng.standard_normal(shape).astype(dtype)
        z = reverse_step(z, t, c, eps_model, schedule, noise=noise)
    return z


# ---------------------------------------------------------------------------
# noise predictor
# ---------------------------------------------------------------------------

def time_embedding(t: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal embedding, injective over small integer ranges."""
    half = (dim + 1) // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t * freqs
    emb = np.zeros(dim)
    emb[0::2] = np.sin(ang)
    emb[1::2] = np.cos(ang)[: dim // 2]
    return emb.astype(dtype)


class EpsilonMlp(Module):
    """Per-token noise predictor over concat(z_t token, condition token,
    time embedding): three GELU hidden layers, linear head back to C.

    The prediction is a residual around z_t with a zero-initialized head,
    so a fresh predictor returns z_t itself. For any schedule ending near
    pure noise this keeps every reverse-chain factor below one; without
    it an untrained chain amplifies its start by alpha_bar_T^(-1/2)
    (about 1e4 here) and overflows float32 long before learning starts.
    """

    def __init__(self, channels: int, hidden: int | None = None, rng=None, dtype=None):
        hidden = hidden or 2 * channels
        self.channels = channels
        self.fc_in = Linear(3 * channels, hidden, rng=rng, dtype=dtype)
        self.fc_mid1 = Linear(hidden, hidden, rng=rng, dtype=dtype)
        self.fc_mid2 = Linear(hidden, hidden, rng=rng, dtype=dtype)
        self.head = Linear(hidden, channels, init="zero", dtype=dtype)

    def __call__(self, z_t, c, t: int) -> Tensor:
        z_t = T.as_tensor(z_t)
        c = T.as_tensor(c)
        if z_t.shape != c.shape:
            raise ShapeError(f"latent/condition shapes disagree: {z_t.shape} vs {c.shape}")
        emb = time_embedding(t, self.channels, dtype=z_t.dtype)
        temb = np.broadcast_to(emb, z_t.shape).copy()
        h = T.concat([z_t, c, T.as_tensor(temb)], axis=-1)
        h = T.gelu(self.fc_in(h))
        h = T.gelu(self.fc_mid1(h))
        h = T.gelu(self.fc_mid2(h))
        return T.add(z_t, self.head(h))


# ---------------------------------------------------------------------------
# latent encoders
# ---------------------------------------------------------------------------

class LatentEncoder(Module):
    """Strided mobile blocks down to a token grid, one MLP-Mixer block,
    then a linear head to (N, C) tokens.

    Input extents must be divisible by 8 (three stride-2 stages) and the
    reduced grid must pool evenly onto the sqrt(N) x sqrt(N) token grid.
    """

    def __init__(self, in_channels: int, latent_tokens: int = 16,
                 latent_channels: int = 32, hidden: tuple[int, int, int] = (16, 32, 64),
                 rng=None, dtype=None):
        grid = int(round(math.sqrt(latent_tokens)))
        if grid * grid != latent_tokens:
            raise ShapeError(f"latent token count must be a square, got {latent_tokens}")
        self.grid = grid
        h1, h2, h3 = hidden
        self.stage1 = MBlock(in_channels, h1, stride=2, rng=rng, dtype=dtype)
        self.stage2 = MBlock(h1, h2, stride=2, rng=rng, dtype=dtype)
        self.stage3 = MBlock(h2, h3, stride=2, rng=rng, dtype=dtype)
        self.mixer = MixerBlock(latent_tokens, h3, rng=rng, dtype=dtype)
        # small head keeps fresh latents near the unit scale the chain starts from
        self.head = Linear(h3, latent_channels, scale=0.2, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
        b, c, h, w = x.shape
        if h % 8 or w % 8:
            raise ShapeError(f"encoder input extents must be divisible by 8, got {(h, w)}")
        f = self.stage3(self.stage2(self.stage1(x)))
        f = adaptive_avg_pool(f, (self.grid, self.grid))
        ch = f.shape[1]
        tokens = T.transpose(T.reshape(f, (b, ch, self.grid * self.grid)), (0, 2, 1))
        return self.head(self.mixer(tokens))
