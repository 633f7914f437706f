"""Command-line surface: simulate -> train -> reconstruct -> evaluate,
plus the numeric self-check suites.

Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric failure.
Errors print one machine-parsable line on stderr:
``cassikit-error kind=<usage|data|numeric> msg="..."``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import gap_tv_spec, load_config, simulate_spec, train_config
from .errors import (CassikitError, ConfigError, DataFormatError, NumericError,
                     ShapeError, UsageError)
from .hsc1 import read_hsc1, write_hsc1
from .physics import SensingOperator, ShiftSpec, make_mask, make_synthetic_scene
from .report import (EvalReport, args_hash, render_figures, score_scene,
                     write_error_maps, write_report_csv)
from .training import (ModelBundle, build_dataset, canonical_json, load_checkpoint,
                       load_opt_state, save_checkpoint, train_phase1, train_phase2,
                       reconstruct_with_diffusion_prior, write_metrics_csv)
from .unfolding import emit_cube, gap_tv, run_unfolding

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail_line(kind: str, msg: str) -> str:
    one_line = " ".join(str(msg).split())
    return f'cassikit-error kind={kind} msg="{one_line}"'


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = simulate_spec(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mask = make_mask(spec.mask_seed, spec.height, spec.width)
    op = SensingOperator(mask, spec.bands, ShiftSpec(spec.step))
    write_hsc1(out / "mask.hsc1", mask[None])
    seed_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    scene_seeds = seed_rng.integers(0, 2**31 - 1, size=spec.count)
    manifest = {
        "seed": spec.seed,
        "mask": "mask.hsc1",
        "width": spec.width,
        "height": spec.height,
        "bands": spec.bands,
        "step": spec.step,
        "noise_sigma": spec.noise_sigma,
        "scenes": [],
    }
    for i in range(spec.count):
        kind = spec.kinds[i % len(spec.kinds)]
        x = make_synthetic_scene(int(scene_seeds[i]), spec.width, spec.height,
                                 spec.bands, kind)
        y = op.forward(x, noise_sigma=spec.noise_sigma,
                       rng=noise_rng if spec.noise_sigma > 0 else None)
        truth_name = f"scene{i:03d}_truth.hsc1"
        meas_name = f"scene{i:03d}_meas.hsc1"
        write_hsc1(out / truth_name, x)
        write_hsc1(out / meas_name, y[None])
        manifest["scenes"].append({"index": i, "kind": kind,
                                   "scene_seed": int(scene_seeds[i]),
                                   "truth": truth_name, "measurement": meas_name})
    (out / "manifest.json").write_bytes(canonical_json(manifest) + b"\n")
    print(f"simulate: wrote {spec.count} scenes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_obj = load_config(args.config)
    cfg = train_config(cfg_obj, args.phase)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.phase == 1:
        bundle = None
        opt_state = None
        if args.resume:
            bundle, _prev_cfg, _meta = load_checkpoint(args.resume)
            opt_state = load_opt_state(args.resume, {
                f"{g}/{k}": v
                for g in ("dun", "le")
                for k, v in bundle.group_params()[g].items()
            })
        result = train_phase1(cfg, bundle=bundle, opt_state=opt_state)
    else:
        if not args.resume:
            raise UsageError("train --phase 2 requires --resume with a phase-1 checkpoint")
        bundle, _prev_cfg, _meta = load_checkpoint(args.resume)
        result = train_phase2(cfg, bundle)
    ckpt = out / f"phase{args.phase}.ckpt"
    save_checkpoint(ckpt, result.bundle, cfg, epoch=len(result.history),
                    history=result.history, phase=args.phase, opt=result.opt)
    write_metrics_csv(out / f"phase{args.phase}_log.csv", result.history)
    last = result.history[-1] if result.history else {}
    print(f"train: phase {args.phase} done in {result.wall_time_s:.1f}s, "
          f"epochs={len(result.history)}, final l_rec={last.get('l_rec')}, "
          f"checkpoint={ckpt}")
    return EXIT_OK


def _parse_region(text: str) -> tuple[int, int, int, int]:
    try:
        x, y, w, h = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--region expects x,y,w,h integers, got {text!r}") from None
    return x, y, w, h


def cmd_reconstruct(args) -> int:
    meas = read_hsc1(args.measurement)
    if meas.shape[0] != 1:
        raise DataFormatError(f"measurement must be a single-band HSC1, got {meas.shape}")
    mask = read_hsc1(args.mask)
    if mask.shape[0] != 1:
        raise DataFormatError(f"mask must be a single-band HSC1, got {mask.shape}")
    mask2d = mask[0]
    y = meas[0]

    if args.baseline == "gap-tv":
        spec = gap_tv_spec(load_config(args.config) if args.config else {})
        op = SensingOperator(mask2d, args.bands, ShiftSpec(args.step))
        recon = emit_cube(gap_tv(y, op, iterations=spec.iterations,
                                 tv_weight=spec.tv_weight, tv_inner=spec.tv_inner))
    else:
        if not args.ckpt:
            raise UsageError("reconstruct needs --ckpt (or --baseline gap-tv)")
        bundle, cfg, meta = load_checkpoint(args.ckpt)
        op = SensingOperator(mask2d, cfg.dataset.bands, ShiftSpec(cfg.dataset.step))
        if meta.get("phase", 1) >= 2:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE7A1]))
            recon = reconstruct_with_diffusion_prior(bundle, op, y, rng)
        else:
            print("warning: phase-1 checkpoint has no trained prior sampler; "
                  "reconstructing with a zero prior", file=sys.stderr)
            z = np.zeros((cfg.model.latent_tokens, cfg.model.latent_channels),
                         dtype=np.float32)
            recon = emit_cube(run_unfolding(y, op, bundle.dun, z))
    write_hsc1(args.out, recon)
    print(f"reconstruct: wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    if len(args.recon) != len(args.truth):
        raise UsageError(f"{len(args.recon)} reconstructions vs {len(args.truth)} truths")
    region = _parse_region(args.region) if args.region else None
    report = EvalReport(config_hash=args_hash([*args.recon, *args.truth,
                                               args.region or ""]))
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    fig_dir = report_path.parent / (report_path.stem + "_figs")
    fig_dir.mkdir(exist_ok=True)
    for rpath, tpath in zip(args.recon, args.truth):
        recon = read_hsc1(rpath)
        truth = read_hsc1(tpath)
        if recon.shape != truth.shape:
            raise ShapeError(f"{rpath} shape {recon.shape} != {tpath} shape {truth.shape}")
        name = Path(rpath).stem
        report.scenes.append(score_scene(name, recon, truth, region,
                                         ssim_window=args.ssim_window))
        write_error_maps(fig_dir, name, recon, truth)
        render_figures(fig_dir, name, recon, truth, region)
    report.runtime_s = time.monotonic() - t0
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    write_report_csv(report_path.with_suffix(".csv"), report)
    agg = report.aggregate()
    print(f"evaluate: {len(report.scenes)} scene(s), "
          f"PSNR {agg['psnr_db']:.2f} dB, SSIM {agg['ssim']:.4f} -> {report_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .selfchecks import format_results, gradcheck_battery

    results = gradcheck_battery(args.module)
    if not results:
        raise UsageError(f"no gradcheck battery matches module {args.module!r}")
    text, ok = format_results(results)
    print(text)
    if not ok:
        raise NumericError("gradient checks failed")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selfchecks import format_results, selftest_battery

    text, ok = format_results(selftest_battery())
    print(text)
    if not ok:
        raise NumericError("self tests failed")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="cassikit",
                     description="Snapshot spectral compressive imaging toolkit")
    parser.add_argument("--version", action="version", version=f"cassikit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate scenes, mask and measurements")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="run a training phase")
    p.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from (required for phase 2)")
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("reconstruct", help="invert a measurement (never reads ground truth)")
    p.add_argument("--ckpt")
    p.add_argument("--measurement", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", choices=("gap-tv",))
    p.add_argument("--bands", type=int, default=8, help="bands for the baseline path")
    p.add_argument("--step", type=int, default=1, help="dispersion step for the baseline path")
    p.add_argument("--config", help="config JSON providing gap_tv parameters")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    p.add_argument("--recon", nargs="+", required=True)
    p.add_argument("--truth", nargs="+", required=True)
    p.add_argument("--region", help="x,y,w,h rectangle for spectral correlation")
    p.add_argument("--ssim-window", type=int, default=11)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="64-bit finite-difference gradient suite")
    p.add_argument("--module", help="restrict to one module prefix, e.g. tensor_core")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("selftest", help="dense-operator, diffusion and attention oracles")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(_fail_line("usage", exc), file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ConfigError, ShapeError) as exc:
        print(_fail_line("data", exc), file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(_fail_line("numeric", exc), file=sys.stderr)
        return EXIT_NUMERIC
    except CassikitError as exc:  # any remaining toolkit error counts as data
        print(_fail_line("data", exc), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
