"""Two-phase desk-scale training.

Phase 1 jointly trains the unfolding network and the ground-truth latent
encoder on mean-absolute reconstruction error. Phase 2 freezes that
encoder and jointly trains the unfolding network, the conditional encoder
and the noise predictor, with gradients flowing through the full reverse
chain; the loss adds the mean-absolute latent distance with unit weight.

Everything is deterministic given (seed, config): parameter init, scene
generation, shuffling and chain noise each draw from dedicated
SeedSequence-derived streams consumed in a fixed order.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .denoiser import DenoiserConfig
from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .hsc1 import read_sections, write_sections
from .metrics import psnr
from .physics import SensingOperator, ShiftSpec, make_mask, make_synthetic_scene
from .prior import DiffusionSchedule, EpsilonMlp, LatentEncoder, generate_prior, make_schedule
from .tensor import Tape, Tensor
from .unfolding import UnfoldingConfig, UnfoldingNet, emit_cube, run_unfolding


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class DatasetSpec:
    train_scenes: int = 64
    holdout_scenes: int = 8
    width: int = 32
    height: int = 32
    bands: int = 8
    step: int = 1
    mask_seed: int = 7
    noise_sigma: float = 0.0


@dataclass
class ModelSpec:
    stages: int = 3
    base_channels: int = 16
    heads: tuple[int, int, int] = (4, 4, 4)
    latent_tokens: int = 16
    latent_channels: int = 32
    le_hidden: tuple[int, int, int] = (16, 32, 64)
    eps_hidden: int = 64
    diffusion_steps: int = 16
    cpf_query_source: str = "csf_value"
    use_gradient_correction: bool = True
    identity_denoiser: bool = False


@dataclass
class TrainConfig:
    phase: int = 1
    epochs: int | None = None  # None -> 200 for phase 1, 100 for phase 2
    time_budget_s: float | None = None
    batch_size: int = 8
    lr_max: float = 4e-4
    lr_min: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    warmup_epochs: int = 0
    eval_every: int = 1
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)

    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 200 if self.phase == 1 else 100


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    ds = DatasetSpec(**d.pop("dataset", {}))
    md = dict(d.pop("model", {}))
    for key in ("heads", "le_hidden"):
        if key in md and md[key] is not None:
            md[key] = tuple(md[key])
    ms = ModelSpec(**md)
    return TrainConfig(dataset=ds, model=ms, **d)


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(canonical_json(config_to_dict(cfg))).hexdigest()


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

_KIND_CYCLE = ("gaussian_blobs", "spectral_ramps", "checker")


@dataclass
class DeskDataset:
    op: SensingOperator
    train_x: np.ndarray
    train_y: np.ndarray
    train_ynorm: np.ndarray
    holdout_x: np.ndarray
    holdout_y: np.ndarray
    holdout_ynorm: np.ndarray


def build_dataset(spec: DatasetSpec, seed: int) -> DeskDataset:
    mask = make_mask(spec.mask_seed, spec.height, spec.width)
    op = SensingOperator(mask, spec.bands, ShiftSpec(spec.step))
    seed_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    total = spec.train_scenes + spec.holdout_scenes
    scene_seeds = seed_rng.integers(0, 2**31 - 1, size=total)

    cubes, meas, norms = [], [], []
    for i in range(total):
        x = make_synthetic_scene(int(scene_seeds[i]), spec.width, spec.height,
                                 spec.bands, _KIND_CYCLE[i % len(_KIND_CYCLE)])
        y = op.forward(x, noise_sigma=spec.noise_sigma,
                       rng=noise_rng if spec.noise_sigma > 0 else None)
        cubes.append(x)
        meas.append(y)
        norms.append(op.normalize_measurement(y))
    n = spec.train_scenes
    return DeskDataset(
        op=op,
        train_x=np.stack(cubes[:n]),
        train_y=np.stack(meas[:n]),
        train_ynorm=np.stack(norms[:n]),
        holdout_x=np.stack(cubes[n:]),
        holdout_y=np.stack(meas[n:]),
        holdout_ynorm=np.stack(norms[n:]),
    )


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------

class ModelBundle:
    """The four parameter groups plus the diffusion schedule."""

    GROUPS = ("dun", "le", "cle", "eps")

    def __init__(self, model: ModelSpec, dataset: DatasetSpec, seed: int, dtype=None):
        self.model = model
        self.dataset = dataset
        streams = np.random.SeedSequence([seed, 0xC0DE]).spawn(4)
        r_dun, r_le, r_cle, r_eps = (np.random.default_rng(s) for s in streams)
        shifted_h = dataset.height + dataset.step * (dataset.bands - 1)
        nominal_hw = (shifted_h + (-shifted_h) % 8, dataset.width + (-dataset.width) % 8)
        dcfg = DenoiserConfig(
            bands=dataset.bands,
            base_channels=model.base_channels,
            heads=tuple(model.heads),
            latent_tokens=model.latent_tokens,
            latent_channels=model.latent_channels,
            nominal_hw=nominal_hw,
            cpf_query_source=model.cpf_query_source,
        )
        ucfg = UnfoldingConfig(
            stages=model.stages,
            use_gradient_correction=model.use_gradient_correction,
            identity_denoiser=model.identity_denoiser,
            denoiser=dcfg,
        )
        self.dun = UnfoldingNet(ucfg, r_dun, dtype=dtype)
        self.le = LatentEncoder(2 * dataset.bands, model.latent_tokens,
                                model.latent_channels, tuple(model.le_hidden),
                                rng=r_le, dtype=dtype)
        self.cle = LatentEncoder(dataset.bands, model.latent_tokens,
                                 model.latent_channels, tuple(model.le_hidden),
                                 rng=r_cle, dtype=dtype)
        self.eps = EpsilonMlp(model.latent_channels, model.eps_hidden,
                              rng=r_eps, dtype=dtype)
        self.schedule: DiffusionSchedule = make_schedule(model.diffusion_steps)

    def group_params(self) -> dict[str, dict[str, Tensor]]:
        return {
            "dun": dict(self.dun.named_parameters()),
            "le": dict(self.le.named_parameters()),
            "cle": dict(self.cle.named_parameters()),
            "eps": dict(self.eps.named_parameters()),
        }

    def named_params(self) -> dict[str, Tensor]:
        flat = {}
        for group, params in self.group_params().items():
            for name, t in params.items():
                flat[f"{group}/{name}"] = t
        return flat

    def zero_grad(self):
        for t in self.named_params().values():
            t.grad = None


# ---------------------------------------------------------------------------
# losses, optimizer, schedule
# ---------------------------------------------------------------------------

def loss_rec(xhat: Tensor, x) -> Tensor:
    """Mean absolute error over all elements."""
    x = T.as_tensor(x)
    if xhat.shape != x.shape:
        raise ShapeError(f"loss_rec shape mismatch: {xhat.shape} vs {x.shape}")
    return T.mean(T.abs_(T.sub(xhat, x)))


def loss_all(xhat: Tensor, x, zhat: Tensor, z_gt) -> Tensor:
    """Reconstruction loss plus mean-absolute latent distance, unit weights."""
    return T.add(loss_rec(xhat, x), loss_rec(zhat, z_gt))


def cosine_lr(epoch: int, total: int, lr_max: float, lr_min: float) -> float:
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * epoch / total))


def _epoch_lr(cfg: TrainConfig, epoch: int, total: int) -> float:
    """Cosine schedule with an optional linear warmup prefix."""
    w = cfg.warmup_epochs
    if w > 0 and epoch < w:
        return cfg.lr_max * (epoch + 1) / w
    return cosine_lr(epoch - w, max(total - w, 1), cfg.lr_max, cfg.lr_min)


class Adam:
    """Standard Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8).

    Parameters whose gradient is absent are skipped; a non-finite gradient
    aborts with the offending parameter named.
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def state(self) -> dict:
        return {"step_count": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for name in self.params:
            if name in state["m"]:
                self.m[name] = np.array(state["m"][name], dtype=self.m[name].dtype)
                self.v[name] = np.array(state["v"][name], dtype=self.v[name].dtype)

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad = (t.grad * scale).astype(t.grad.dtype)
    return norm


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    bundle: ModelBundle
    dataset: DeskDataset
    config: TrainConfig
    history: list[dict]
    wall_time_s: float
    opt: "Adam | None" = None


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start: start + batch_size]


def encode_ground_truth(bundle: ModelBundle, ynorm: np.ndarray, x: np.ndarray) -> Tensor:
    """z_GT from the concatenation of the normalized back-projection and the clean cube."""
    ie = np.concatenate([ynorm, x], axis=-3)
    return bundle.le(Tensor(ie))


def reconstruct_with_gt_prior(bundle: ModelBundle, op: SensingOperator,
                              y: np.ndarray, ynorm: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Phase-1 style reconstruction (training/evaluation only: uses clean x)."""
    z = encode_ground_truth(bundle, ynorm, x)
    xhat = run_unfolding(Tensor(y), op, bundle.dun, z)
    return emit_cube(xhat)


def reconstruct_with_diffusion_prior(bundle: ModelBundle, op: SensingOperator,
                                     y: np.ndarray, rng: np.random.Generator,
                                     return_latent: bool = False):
    """Inference path: only the measurement and the operator are consumed."""
    ynorm = op.normalize_measurement(y)
    c = bundle.cle(Tensor(ynorm))
    zhat = generate_prior(c, bundle.schedule, bundle.eps, rng)
    xhat = run_unfolding(Tensor(y), op, bundle.dun, zhat)
    if return_latent:
        return emit_cube(xhat), zhat.data
    return emit_cube(xhat)


def holdout_psnr_gt_prior(bundle: ModelBundle, ds: DeskDataset) -> float:
    recon = reconstruct_with_gt_prior(bundle, ds.op, ds.holdout_y, ds.holdout_ynorm, ds.holdout_x)
    return float(np.mean([psnr(recon[i], ds.holdout_x[i]) for i in range(len(recon))]))


def holdout_psnr_diffusion(bundle: ModelBundle, ds: DeskDataset, seed: int) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    recon = reconstruct_with_diffusion_prior(bundle, ds.op, ds.holdout_y, rng)
    return float(np.mean([psnr(recon[i], ds.holdout_x[i]) for i in range(len(recon))]))


def holdout_latent_l1(bundle: ModelBundle, ds: DeskDataset, seed: int) -> float:
    """Mean |zhat - z_GT| per element over the held-out scenes."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1FF]))
    c = bundle.cle(Tensor(ds.holdout_ynorm))
    zhat = generate_prior(c, bundle.schedule, bundle.eps, rng)
    z_gt = encode_ground_truth(bundle, ds.holdout_ynorm, ds.holdout_x)
    return float(np.mean(np.abs(zhat.data - z_gt.data)))


def train_phase1(cfg: TrainConfig, bundle: ModelBundle | None = None,
                 dataset: DeskDataset | None = None,
                 opt_state: dict | None = None) -> TrainResult:
    """Algorithm: jointly update the unfolding network and the encoder on L_rec."""
    t_start = time.monotonic()
    if bundle is None:
        bundle = ModelBundle(cfg.model, cfg.dataset, cfg.seed)
    ds = dataset or build_dataset(cfg.dataset, cfg.seed)
    groups = bundle.group_params()
    trainable = {f"dun/{k}": v for k, v in groups["dun"].items()}
    trainable.update({f"le/{k}": v for k, v in groups["le"].items()})
    opt = Adam(trainable, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    if opt_state is not None:
        opt.load_state(opt_state)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    epochs = cfg.resolved_epochs()
    history: list[dict] = []
    n = len(ds.train_x)
    for epoch in range(epochs):
        lr = _epoch_lr(cfg, epoch, epochs)
        batch_losses = []
        for idx in _batches(n, cfg.batch_size, shuffle_rng):
            x = ds.train_x[idx]
            y = ds.train_y[idx]
            ynorm = ds.train_ynorm[idx]
            with Tape() as tape:
                z = encode_ground_truth(bundle, ynorm, x)
                xhat = run_unfolding(Tensor(y), ds.op, bundle.dun, z)
                loss = loss_rec(xhat, Tensor(x))
                val = loss.item()
                if not np.isfinite(val):
                    raise NumericError(f"phase 1 diverged at epoch {epoch}, batch of {idx[:4]}")
                tape.backward(loss)
            clip_gradients(trainable, cfg.clip_norm)
            opt.step(lr)
            bundle.zero_grad()
            batch_losses.append(val)
        row = {"epoch": epoch, "lr": float(lr), "l_rec": float(np.mean(batch_losses)),
               "l_diff": None, "val_psnr": None}
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == epochs - 1):
            row["val_psnr"] = holdout_psnr_gt_prior(bundle, ds)
        history.append(row)
        if cfg.time_budget_s is not None and time.monotonic() - t_start > cfg.time_budget_s:
            break
    return TrainResult(bundle, ds, cfg, history, time.monotonic() - t_start, opt=opt)


def train_phase2(cfg: TrainConfig, bundle: ModelBundle,
                 dataset: DeskDataset | None = None) -> TrainResult:
    """Freeze the ground-truth encoder; jointly update the unfolding network,
    the conditional encoder and the noise predictor on L_rec + L_diff."""
    t_start = time.monotonic()
    ds = dataset or build_dataset(cfg.dataset, cfg.seed)
    groups = bundle.group_params()
    for p in groups["le"].values():
        p.requires_grad = False
    trainable = {f"dun/{k}": v for k, v in groups["dun"].items()}
    trainable.update({f"cle/{k}": v for k, v in groups["cle"].items()})
    trainable.update({f"eps/{k}": v for k, v in groups["eps"].items()})
    opt = Adam(trainable, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 12]))
    chain_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))
    epochs = cfg.resolved_epochs()
    history: list[dict] = []
    n = len(ds.train_x)
    for epoch in range(epochs):
        lr = _epoch_lr(cfg, epoch, epochs)
        rec_losses, diff_losses = [], []
        for idx in _batches(n, cfg.batch_size, shuffle_rng):
            x = ds.train_x[idx]
            y = ds.train_y[idx]
            ynorm = ds.train_ynorm[idx]
            with Tape() as tape:
                c = bundle.cle(Tensor(ynorm))
                zhat = generate_prior(c, bundle.schedule, bundle.eps, chain_rng)
                z_gt = encode_ground_truth(bundle, ynorm, x)
                xhat = run_unfolding(Tensor(y), ds.op, bundle.dun, zhat)
                l_rec = loss_rec(xhat, Tensor(x))
                l_diff = loss_rec(zhat, z_gt.detach())
                loss = T.add(l_rec, l_diff)
                vr, vd = l_rec.item(), l_diff.item()
                if not (np.isfinite(vr) and np.isfinite(vd)):
                    raise NumericError(f"phase 2 diverged at epoch {epoch}")
                tape.backward(loss)
            clip_gradients(trainable, cfg.clip_norm)
            opt.step(lr)
            bundle.zero_grad()
            rec_losses.append(vr)
            diff_losses.append(vd)
        row = {"epoch": epoch, "lr": float(lr), "l_rec": float(np.mean(rec_losses)),
               "l_diff": float(np.mean(diff_losses)), "val_psnr": None}
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == epochs - 1):
            row["val_psnr"] = holdout_psnr_diffusion(bundle, ds, cfg.seed)
        history.append(row)
        if cfg.time_budget_s is not None and time.monotonic() - t_start > cfg.time_budget_s:
            break
    return TrainResult(bundle, ds, cfg, history, time.monotonic() - t_start, opt=opt)


def train_epsilon_weighted_bound(cfg: TrainConfig, bundle: ModelBundle,
                                 dataset: DeskDataset | None = None,
                                 epochs: int | None = None) -> list[float]:
    """Documented alternative noise-predictor trainer: regress the sampled
    noise at a random step (the weighted variational bound objective)
    instead of backpropagating through the whole chain. Updates only the
    noise predictor; kept for comparison runs."""
    ds = dataset or build_dataset(cfg.dataset, cfg.seed)
    groups = bundle.group_params()
    trainable = {f"eps/{k}": v for k, v in groups["eps"].items()}
    opt = Adam(trainable, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 21]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 22]))
    n = len(ds.train_x)
    losses = []
    for epoch in range(epochs or cfg.resolved_epochs()):
        epoch_losses = []
        for idx in _batches(n, cfg.batch_size, shuffle_rng):
            x = ds.train_x[idx]
            ynorm = ds.train_ynorm[idx]
            c = bundle.cle(Tensor(ynorm)).detach()
            z_gt = encode_ground_truth(bundle, ynorm, x).detach()
            t_step = int(rng.integers(1, bundle.schedule.steps + 1))
            eps = rng.standard_normal(z_gt.shape).astype(z_gt.dtype)
            z_t = (np.sqrt(bundle.schedule.alpha_bar(t_step)) * z_gt.data
                   + np.sqrt(1 - bundle.schedule.alpha_bar(t_step)) * eps).astype(z_gt.dtype)
            with Tape() as tape:
                pred = bundle.eps(Tensor(z_t), c, t_step)
                loss = T.mean(T.power(T.sub(pred, Tensor(eps)), 2.0))
                tape.backward(loss)
            opt.step(cfg.lr_max)
            bundle.zero_grad()
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)))
    return losses


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_FORMAT_VERSION = 1


def save_checkpoint(path, bundle: ModelBundle, cfg: TrainConfig, *,
                    epoch: int, history: list[dict], opt: Adam | None = None,
                    phase: int | None = None) -> None:
    params = bundle.named_params()
    meta = {
        "format": CKPT_FORMAT_VERSION,
        "phase": phase if phase is not None else cfg.phase,
        "epoch": epoch,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "history": history,
        "param_index": {name: list(t.shape) for name, t in params.items()},
        "adam": {"step_count": opt.step_count, "names": sorted(opt.params)} if opt else None,
    }
    sections: dict[str, bytes] = {"meta": canonical_json(meta)}
    for name, t in params.items():
        sections[f"param/{name}"] = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    if opt is not None:
        for name in opt.params:
            sections[f"adam_m/{name}"] = np.ascontiguousarray(opt.m[name], dtype="<f4").tobytes()
            sections[f"adam_v/{name}"] = np.ascontiguousarray(opt.v[name], dtype="<f4").tobytes()
    write_sections(path, sections)


def load_opt_state(path, params: dict[str, Tensor]) -> dict | None:
    """Optimizer moments for the given parameter set, if the checkpoint has them."""
    sections = read_sections(path)
    meta = json.loads(sections["meta"].decode("utf-8"))
    if not meta.get("adam"):
        return None
    m, v = {}, {}
    for name, t in params.items():
        key_m, key_v = f"adam_m/{name}", f"adam_v/{name}"
        if key_m in sections and key_v in sections:
            m[name] = np.frombuffer(sections[key_m], dtype="<f4").reshape(t.shape).copy()
            v[name] = np.frombuffer(sections[key_v], dtype="<f4").reshape(t.shape).copy()
    if not m:
        return None
    return {"step_count": meta["adam"]["step_count"], "m": m, "v": v}


def load_checkpoint(path) -> tuple[ModelBundle, TrainConfig, dict]:
    """Rebuild the bundle from a checkpoint; returns (bundle, config, meta)."""
    sections = read_sections(path)
    if "meta" not in sections:
        raise DataFormatError(f"{path}: checkpoint missing meta section")
    meta = json.loads(sections["meta"].decode("utf-8"))
    if meta.get("format") != CKPT_FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint format {meta.get('format')}")
    try:
        cfg = config_from_dict(meta["config"])
    except TypeError as exc:
        raise ConfigError(f"{path}: bad config in checkpoint: {exc}") from None
    bundle = ModelBundle(cfg.model, cfg.dataset, cfg.seed)
    params = bundle.named_params()
    for name, t in params.items():
        key = f"param/{name}"
        if key not in sections:
            raise DataFormatError(f"{path}: missing parameter section {key!r}")
        arr = np.frombuffer(sections[key], dtype="<f4").reshape(t.shape)
        t.data = arr.astype(t.data.dtype)
    return bundle, cfg, meta


def write_metrics_csv(path, history: list[dict]) -> None:
    lines = ["epoch,lr,L_rec,L_diff,val_psnr"]
    for row in history:
        cells = [str(row["epoch"])]
        for key in ("lr", "l_rec", "l_diff", "val_psnr"):
            v = row.get(key)
            cells.append("" if v is None else f"{v:.8g}")
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
