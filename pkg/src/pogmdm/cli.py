"""Command line interface: dataset generation, training, simulation, reconstruction."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import data_io, metrics, mri, sampler, training
from .prior import CharbonnierPrior, MixturePrior


def _add_make_dataset(sub):
    p = sub.add_parser("make-dataset", help="write a synthetic training set")
    p.add_argument("--kind", default="ellipses", choices=["ellipses", "shepp-logan"])
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--shape", type=int, nargs=2, default=[64, 64], metavar=("N", "M"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_train(sub):
    p = sub.add_parser("train", help="fit the prior by denoising score matching")
    p.add_argument("--data", required=True, help="directory of .bin image containers")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="TOML file with a [train] table")
    p.add_argument("--out", required=True, help="output model container")
    p.add_argument("--log", default=None, help="CSV of (step, loss)")


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="generate undersampled k-space from a phantom")
    p.add_argument("--shape", type=int, nargs=2, default=[64, 64], metavar=("N", "M"))
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--phantom", default="shepp-logan",
                   choices=["shepp-logan", "ellipses", "flat"])
    p.add_argument("--pattern", default="cartesian", choices=list(mri.MASK_PATTERNS))
    p.add_argument("--acceleration", type=float, default=4.0)
    p.add_argument("--acl", type=float, default=0.08)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output k-space container")
    p.add_argument("--truth-out", default=None, help="also write the ground truth image")
    p.add_argument("--sens-out", default=None, help="directory for the true coil maps")


def _add_mask(sub):
    p = sub.add_parser("mask", help="write a sampling mask as PNG")
    p.add_argument("--pattern", default="cartesian", choices=list(mri.MASK_PATTERNS))
    p.add_argument("--shape", type=int, nargs=2, default=[64, 64], metavar=("N", "M"))
    p.add_argument("--acceleration", type=float, default=4.0)
    p.add_argument("--acl", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_reconstruct(sub):
    p = sub.add_parser("reconstruct", help="joint reconstruction from k-space")
    p.add_argument("--kspace", required=True)
    p.add_argument("--model", default=None, help="model container (mixture prior)")
    p.add_argument("--prior", default="model", choices=["model", "tv"])
    p.add_argument("--tv-weight", type=float, default=10.0)
    p.add_argument("--tv-eps", type=float, default=0.01)
    p.add_argument("--pattern-config", default=None,
                   help="TOML file with a [sampler] table")
    p.add_argument("--samples", type=int, default=None, help="posterior sample count")
    p.add_argument("--ccdf-start", type=float, default=None,
                   help="fraction of the schedule to skip")
    p.add_argument("--steps", type=int, default=None, help="predictor levels")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--map", dest="with_map", action="store_true", default=True)
    p.add_argument("--no-map", dest="with_map", action="store_false")
    p.add_argument("--ref", default=None, help="ground-truth image container for metrics")
    p.add_argument("--out", required=True, help="output directory")


def _add_eval(sub):
    p = sub.add_parser("eval", help="PSNR/SSIM/NMSE of predictions against a reference")
    p.add_argument("--pred", required=True, nargs="+", help="image containers")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="metrics CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pogmdm")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_make_dataset(sub)
    _add_train(sub)
    _add_simulate(sub)
    _add_mask(sub)
    _add_reconstruct(sub)
    _add_eval(sub)
    return parser


def _write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "psnr", "ssim", "nmse"])
        for name, ps, ss, nm in rows:
            writer.writerow([name, f"{ps:.4f}", f"{ss:.6f}", f"{nm:.6e}"])


def _cmd_make_dataset(args) -> int:
    paths = data_io.make_dataset(args.kind, args.count, tuple(args.shape), args.seed, args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = training.TrainConfig()
    if args.config:
        table = data_io.load_toml(args.config).get("train", {})
        cfg = data_io.apply_config(cfg, table)
    for name in ("steps", "batch", "lr", "seed"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    images = data_io.load_dataset(args.data)
    print(f"training on {images.shape[0]} images of shape {images.shape[1:]}")
    ema, losses = training.train(images, cfg, log_path=args.log, progress=True)
    data_io.write_model(args.out, ema)
    print(f"final loss (mean of last 100 steps): {losses[-100:].mean():.4g}")
    print(f"model written to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    shape = tuple(args.shape)
    truth = mri.phantom(shape, args.phantom, seed=args.seed)
    sens = mri.simulate_coils(shape, args.coils, seed=args.seed)
    mask = mri.make_mask(args.pattern, shape, args.acceleration,
                         acl_fraction=args.acl, seed=args.seed)
    kdata = mri.simulate(truth, sens, mask, noise_std=args.noise_std, seed=args.seed)
    data_io.write_kspace(args.out, kdata)
    print(f"k-space written to {args.out} "
          f"(f={kdata.mask.n_sampled}, acceleration={kdata.mask.achieved_acceleration:.2f})")
    if args.truth_out:
        data_io.write_image(args.truth_out, truth)
    if args.sens_out:
        out = Path(args.sens_out)
        out.mkdir(parents=True, exist_ok=True)
        for i in range(sens.shape[0]):
            data_io.write_image(out / f"sens_{i}.bin", sens[i])
    return 0


def _cmd_mask(args) -> int:
    mask = mri.make_mask(args.pattern, tuple(args.shape), args.acceleration,
                         acl_fraction=args.acl, seed=args.seed)
    centred = np.fft.fftshift(mask.indicator).astype(np.float64)
    data_io.export_png(args.out, centred, vmax=1.0)
    print(f"mask written to {args.out} (acceleration {mask.achieved_acceleration:.2f})")
    return 0


def _cmd_reconstruct(args) -> int:
    kdata = data_io.read_kspace(args.kspace)
    cfg = sampler.SamplerConfig()
    if args.pattern_config:
        table = data_io.load_toml(args.pattern_config).get("sampler", {})
        cfg = data_io.apply_config(cfg, table)
    if args.samples is not None:
        cfg.n_posterior = args.samples
    if args.ccdf_start is not None:
        cfg.ccdf_start = args.ccdf_start
    if args.steps is not None:
        cfg.N = args.steps
    if args.seed is not None:
        cfg.seed = args.seed

    if args.prior == "tv":
        prior = CharbonnierPrior(weight=args.tv_weight, eps=args.tv_eps)
    else:
        if not args.model:
            print("error: --model is required with --prior model", file=sys.stderr)
            return 2
        prior = MixturePrior(data_io.model_from_file(args.model, kdata.shape))

    result = sampler.estimate(prior, kdata, cfg, with_map=args.with_map)
    data_io.save_recon_result(args.out, result)

    _, rss = mri.zero_filled(kdata)
    if args.ref:
        reference = np.abs(data_io.read_image(args.ref))
    else:
        reference = rss
    rows = [("zero_filled", metrics.psnr(rss, reference), metrics.ssim(rss, reference),
             metrics.nmse(rss, reference))]
    weighted = metrics.rss_weight(result.mmse, result.sensitivities)
    rows.append(("mmse", metrics.psnr(weighted, reference),
                 metrics.ssim(weighted, reference), metrics.nmse(weighted, reference)))
    if result.map_image is not None:
        wmap = metrics.rss_weight(result.map_image, result.sensitivities)
        rows.append(("map", metrics.psnr(wmap, reference),
                     metrics.ssim(wmap, reference), metrics.nmse(wmap, reference)))
    _write_metrics(Path(args.out) / "metrics.csv", rows)
    for row in rows:
        print(f"{row[0]:>12}: psnr {row[1]:6.2f} dB  ssim {row[2]:.4f}  nmse {row[3]:.4e}")
    return 0


def _cmd_eval(args) -> int:
    reference = np.abs(data_io.read_image(args.ref))
    rows = []
    for pred in args.pred:
        img = np.abs(data_io.read_image(pred))
        rows.append((pred, metrics.psnr(img, reference), metrics.ssim(img, reference),
                     metrics.nmse(img, reference)))
    _write_metrics(args.out, rows)
    for row in rows:
        print(f"{row[0]}: psnr {row[1]:.2f} dB  ssim {row[2]:.4f}  nmse {row[3]:.4e}")
    return 0


_COMMANDS = {
    "make-dataset": _cmd_make_dataset,
    "train": _cmd_train,
    "simulate": _cmd_simulate,
    "mask": _cmd_mask,
    "reconstruct": _cmd_reconstruct,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
