"""Evaluation reports: JSON + CSV + error-map PNGs + matplotlib figures."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError
from .metrics import error_map, psnr, save_png, spectral_corr, ssim


@dataclass
class SceneScore:
    name: str
    psnr_db: float
    ssim: float
    corr: float | None = None


@dataclass
class EvalReport:
    scenes: list[SceneScore] = field(default_factory=list)
    runtime_s: float = 0.0
    config_hash: str = ""

    def aggregate(self) -> dict:
        return {
            "psnr_db": float(np.mean([s.psnr_db for s in self.scenes])),
            "ssim": float(np.mean([s.ssim for s in self.scenes])),
            "corr": (float(np.mean([s.corr for s in self.scenes
                                    if s.corr is not None]))
                     if any(s.corr is not None for s in self.scenes) else None),
        }

    def to_json(self) -> str:
        payload = {
            "scenes": [vars(s) for s in self.scenes],
            "aggregate": self.aggregate(),
            "runtime_s": self.runtime_s,
            "config_hash": self.config_hash,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def score_scene(name: str, recon: np.ndarray, truth: np.ndarray,
                region: tuple[int, int, int, int] | None,
                ssim_window: int = 11) -> SceneScore:
    corr = None
    if region is not None:
        corr = spectral_corr(recon, truth, region)
    return SceneScore(name=name, psnr_db=psnr(recon, truth),
                      ssim=ssim(recon, truth, window=ssim_window), corr=corr)


def args_hash(parts: list[str]) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def write_report_csv(path, report: EvalReport) -> None:
    lines = ["scene,psnr_db,ssim,corr"]
    for s in report.scenes:
        corr = "" if s.corr is None else f"{s.corr:.8g}"
        lines.append(f"{s.name},{s.psnr_db:.8g},{s.ssim:.8g},{corr}")
    agg = report.aggregate()
    corr = "" if agg["corr"] is None else f"{agg['corr']:.8g}"
    lines.append(f"aggregate,{agg['psnr_db']:.8g},{agg['ssim']:.8g},{corr}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_error_maps(out_dir: Path, name: str, recon: np.ndarray,
                     truth: np.ndarray) -> list[Path]:
    """Quantized |error| maps at the first, middle and last band."""
    bands = truth.shape[0]
    picks = sorted({1, (bands + 1) // 2, bands})
    paths = []
    for band in picks:
        img = error_map(recon, truth, band)
        p = out_dir / f"{name}_errmap_band{band:02d}.png"
        save_png(p, img)
        paths.append(p)
    return paths


def _default_region(truth: np.ndarray) -> tuple[int, int, int, int]:
    _, h, w = truth.shape
    rw, rh = max(2, w // 4), max(2, h // 4)
    return ((w - rw) // 2, (h - rh) // 2, rw, rh)


def render_figures(out_dir: Path, name: str, recon: np.ndarray, truth: np.ndarray,
                   region: tuple[int, int, int, int] | None) -> list[Path]:
    """Matplotlib diagnostics rendered next to the delimited outputs:
    region-mean spectral curves and the per-band PSNR profile."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reg = region or _default_region(truth)
    x0, y0, rw, rh = reg
    bands = np.arange(1, truth.shape[0] + 1)
    curve_t = truth[:, y0: y0 + rh, x0: x0 + rw].mean(axis=(1, 2))
    curve_r = recon[:, y0: y0 + rh, x0: x0 + rw].mean(axis=(1, 2))
    try:
        corr = spectral_corr(recon, truth, reg)
        corr_label = f"corr = {corr:.4f}"
    except NumericError:
        corr_label = "corr undefined"

    paths = []
    fig, ax = plt.subplots(figsize=(4.2, 3.0), constrained_layout=True)
    ax.plot(bands, curve_t, "o-", label="ground truth", color="black")
    ax.plot(bands, curve_r, "s--", label="reconstruction", color="tab:red")
    ax.set_xlabel("band")
    ax.set_ylabel("region mean intensity")
    ax.set_title(f"{name}: {corr_label}")
    ax.legend(fontsize=8)
    p = out_dir / f"{name}_spectra.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    per_band = []
    for l in range(truth.shape[0]):
        mse = float(np.mean((recon[l].astype(np.float64) - truth[l].astype(np.float64)) ** 2))
        per_band.append(100.0 if mse == 0 else min(100.0, 10 * np.log10(1 / mse)))
    fig, ax = plt.subplots(figsize=(4.2, 3.0), constrained_layout=True)
    ax.bar(bands, per_band, color="tab:blue")
    ax.set_xlabel("band")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"{name}: per-band PSNR")
    p = out_dir / f"{name}_psnr_bands.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
