"""Command-line entry point: ``hazeprior <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Every run first prints a one-line JSON echo of its resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import chm
from .codebook import (
    Codebook,
    CodeGrid,
    FrequencyProfile,
    activation_frequency,
    fit_kmeans,
    quantize_grid,
    reconstruct_from_codes,
)
from .hazegen import IMAGE_SUFFIXES, DataError, synth_dataset
from .imgcore import center_crop, extract_patches, load_image, save_image

log = logging.getLogger("hazeprior")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _image_paths(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DataError(f"{directory}: directory does not exist")
    paths = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"{directory}: no images found")
    return paths


def _conform(img: np.ndarray, channels: int, path) -> np.ndarray:
    if img.shape[2] == channels:
        return img
    if img.shape[2] == 1 and channels == 3:
        return np.repeat(img, 3, axis=2)
    raise DataError(f"{path}: {img.shape[2]} channels, expected {channels}")


def _grid_for(img: np.ndarray, patch: int, warn_path=None):
    cropped = center_crop(img, patch)
    if warn_path is not None and cropped.shape != img.shape:
        log.warning(
            "%s: %dx%d not divisible by patch %d, center-cropped to %dx%d",
            warn_path, img.shape[0], img.shape[1], patch, cropped.shape[0], cropped.shape[1],
        )
    return cropped, extract_patches(cropped, patch, patch)


def _load_grids(paths, patch: int, channels: int):
    return [_grid_for(_conform(load_image(p), channels, p), patch)[1] for p in paths]


def _check_codebook(cb: Codebook, path) -> None:
    if cb.patch_size < 1 or cb.channels < 1 or cb.patch_size**2 * cb.channels != cb.dim:
        raise DataError(f"{path}: codebook header geometry does not match dim {cb.dim}")


def profile_dir(directory, cb: Codebook) -> FrequencyProfile:
    grids = _load_grids(_image_paths(Path(directory)), cb.patch_size, cb.channels)
    return activation_frequency([quantize_grid(g, cb) for g in grids], cb.K)


def run_sweep(img: np.ndarray, cb: Codebook, dp: chm.DeltaProfile, p_c: FrequencyProfile, alphas):
    """Re-match one image at every alpha using a single distance matrix.

    Returns ``(codegrids, rows)``: a CodeGrid per alpha and CSV rows
    ``(alpha, kl, cells_changed)`` where changes are counted against alpha = 0.
    """
    if dp.K != cb.K or p_c.K != cb.K:
        raise DataError(f"profile sizes do not match codebook K={cb.K}")
    _, grid = _grid_for(img, cb.patch_size)
    dm = chm.distance_matrix(grid.flat(), cb)
    shape = (grid.rows, grid.cols)
    base = chm.assign_at_alpha(dm, dp, 0.0)
    codegrids, rows = {}, []
    for alpha, idx in chm.sweep_assignments(dm, dp, alphas).items():
        wd = dm[np.arange(dm.shape[0]), idx] * chm.weights(dp.delta, alpha)[idx]
        codegrids[alpha] = CodeGrid(idx.reshape(shape), wd.reshape(shape))
        kl = chm.kl_divergence(p_c, FrequencyProfile.from_counts(np.bincount(idx, minlength=cb.K)))
        rows.append((alpha, kl, int(np.count_nonzero(idx != base))))
    return codegrids, rows


# --- subcommands -----------------------------------------------------------


def cmd_synth(args) -> int:
    path = synth_dataset(
        args.clean_dir, args.depth_dir, args.out_dir, args.count, args.seed,
        strict=args.strict, workers=args.workers,
    )
    n = json.loads(path.read_text())["count"]
    print(f"wrote {n} samples, manifest {path}")
    return EXIT_OK


def cmd_fit(args) -> int:
    images = [load_image(p) for p in _image_paths(args.images)]
    channels = max(img.shape[2] for img in images)
    grids = [_grid_for(_conform(img, channels, args.images), args.patch)[1] for img in images]
    feats = np.concatenate([g.flat() for g in grids])
    history: list[float] = []
    cb = fit_kmeans(
        feats, args.k, args.iters, args.seed, patch_size=args.patch, channels=channels, history=history
    )
    for i, obj in enumerate(history):
        print(f"iter {i} objective {obj:.10g}")
    cb.save(args.out)
    d = chm.distance_matrix(feats, cb).min(axis=1)
    sse = float(np.sum(d**2))
    print(f"final quantization error sse={sse:.10g} mse={sse / feats.size:.6g} (K={cb.K}, dim={cb.dim}, n={len(feats)})")
    return EXIT_OK


def _print_top(title: str, pairs) -> None:
    print(title)
    for k, v in pairs:
        print(f"  code {k:5d}  {v:+.6f}")


def cmd_profile(args) -> int:
    cb = Codebook.load(args.codebook)
    _check_codebook(cb, args.codebook)
    prof = profile_dir(args.images, cb)
    prof.save(args.out)
    _print_top("top-10 codes by frequency:", prof.top(10))
    if args.diff_images is not None:
        ref = profile_dir(args.diff_images, cb)
        dp = chm.DeltaProfile.from_profiles(prof, ref)
        order = np.argsort(-np.abs(dp.delta), kind="stable")[:10]
        _print_top("top-10 |f_h - f_c| codes (delta = f_h - f_c):", [(int(k), float(dp.delta[k])) for k in order])
        delta_out = args.delta_out or Path(args.out).with_name(Path(args.out).stem + "_delta.json")
        dp.save(delta_out)
        print(f"delta profile written to {delta_out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cb = Codebook.load(args.codebook)
    _check_codebook(cb, args.codebook)
    p_c = FrequencyProfile.load(args.clean_profile)
    if p_c.K != cb.K:
        raise DataError(f"{args.clean_profile}: K={p_c.K} does not match codebook K={cb.K}")
    grids = _load_grids(_image_paths(args.hazy_dir), cb.patch_size, cb.channels)
    feats = np.concatenate([g.flat() for g in grids])
    dm = chm.distance_matrix(feats, cb)
    # delta is frozen at the plain (alpha = 0) hazy usage
    f_h = FrequencyProfile.from_counts(np.bincount(dm.argmin(axis=1), minlength=cb.K))
    dp = chm.DeltaProfile.from_profiles(f_h, p_c)
    if args.delta_out is not None:
        dp.save(args.delta_out)
    lo, hi = args.range
    print(f"search range [{lo:g}, {hi:g}] tolerance {args.tol:g}")
    res = chm.calibrate_alpha(dm, dp, p_c, (lo, hi), args.tol)
    kl0 = chm.kl_divergence(p_c, f_h)
    if res.kl_at_alpha_hat > kl0:
        raise RuntimeError(f"calibration post-condition violated: KL(alpha_hat)={res.kl_at_alpha_hat} > KL(0)={kl0}")
    Path(args.out).write_text(json.dumps(res.to_json()) + "\n")
    print(f"alpha_hat={res.alpha_hat:g} KL={res.kl_at_alpha_hat:.8g} <= KL(0)={kl0:.8g} ({len(res.trace)} evaluations)")
    return EXIT_OK


def _load_match_inputs(args):
    cb = Codebook.load(args.codebook)
    _check_codebook(cb, args.codebook)
    dp = chm.DeltaProfile.load(args.delta)
    if dp.K != cb.K:
        raise DataError(f"{args.delta}: K={dp.K} does not match codebook K={cb.K}")
    img = _conform(load_image(args.image), cb.channels, args.image)
    try:
        cropped, _ = _grid_for(img, cb.patch_size, warn_path=args.image)
    except ValueError as exc:
        raise DataError(f"{args.image}: {exc}") from exc
    return cb, dp, cropped


def cmd_reconstruct(args) -> int:
    cb, dp, img = _load_match_inputs(args)
    grid = extract_patches(img, cb.patch_size, cb.patch_size)
    dm = chm.distance_matrix(grid.flat(), cb)
    idx = chm.assign_at_alpha(dm, dp, args.alpha).reshape(grid.rows, grid.cols)
    out = reconstruct_from_codes(CodeGrid(idx, np.zeros(idx.shape)), cb)
    save_image(out, args.out)
    print(f"reconstructed {out.shape[0]}x{out.shape[1]} at alpha={args.alpha:g} -> {args.out}")
    return EXIT_OK


def _parse_alphas(args) -> list[float]:
    if args.alphas is not None:
        return args.alphas
    lo, hi = args.range
    n = int(np.floor((hi - lo) / args.step + 1e-9))
    return [round(lo + i * args.step, 10) for i in range(n + 1)]


def cmd_sweep(args) -> int:
    cb, dp, img = _load_match_inputs(args)
    p_c = FrequencyProfile.load(args.clean_profile)
    alphas = _parse_alphas(args)
    codegrids, rows = run_sweep(img, cb, dp, p_c, alphas)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for alpha, cg in codegrids.items():
        save_image(reconstruct_from_codes(cg, cb), args.out_dir / f"alpha_{alpha:+08.3f}.png")
    with open(args.out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["alpha", "kl", "cells_changed"])
        for alpha, kl, changed in rows:
            writer.writerow([repr(alpha), f"{kl:.10g}", changed])
    print(f"swept {len(rows)} alphas -> {args.out_dir}")
    return EXIT_OK


# --- argument parsing ------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty alpha list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hazeprior", description="Haze synthesis and codebook-prior matching tools")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesize a paired hazy dataset")
    s.add_argument("--clean-dir", type=Path, required=True)
    s.add_argument("--depth-dir", type=Path, required=True)
    s.add_argument("--out-dir", type=Path, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--strict", action="store_true", help="abort on unmatched or unreadable inputs")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="fit a patch codebook with k-means")
    s.add_argument("--images", type=Path, required=True)
    s.add_argument("--k", type=int, default=512)
    s.add_argument("--patch", type=int, default=8)
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("profile", help="code activation frequencies of an image set")
    s.add_argument("--images", type=Path, required=True)
    s.add_argument("--codebook", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--diff-images", type=Path, help="reference (clean) set; emits delta = this profile - reference")
    s.add_argument("--delta-out", type=Path)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("calibrate", help="estimate alpha by minimizing KL to the clean profile")
    s.add_argument("--codebook", type=Path, required=True)
    s.add_argument("--clean-profile", type=Path, required=True)
    s.add_argument("--hazy-dir", type=Path, required=True)
    s.add_argument("--range", type=float, nargs=2, default=[-60.0, 60.0], metavar=("LO", "HI"))
    s.add_argument("--tol", type=float, default=0.05)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--delta-out", type=Path)
    s.set_defaults(func=cmd_calibrate)

    for name, helptext in (("reconstruct", "weighted-match reconstruction at one alpha"),
                           ("sweep", "reconstructions and statistics over many alphas")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--image", type=Path, required=True)
        s.add_argument("--codebook", type=Path, required=True)
        s.add_argument("--delta", type=Path, required=True)
        if name == "reconstruct":
            s.add_argument("--alpha", type=float, required=True)
            s.add_argument("--out", type=Path, required=True)
            s.set_defaults(func=cmd_reconstruct)
        else:
            s.add_argument("--clean-profile", type=Path, required=True)
            g = s.add_mutually_exclusive_group(required=True)
            g.add_argument("--alphas", type=_float_list)
            g.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
            s.add_argument("--step", type=float)
            s.add_argument("--out-dir", type=Path, required=True)
            s.set_defaults(func=cmd_sweep)
    return p


def _validate(args) -> None:
    def need(cond, msg):
        if not cond:
            raise UsageError(f"{args.command}: {msg}")

    if args.command == "synth":
        need(args.count >= 0, "--count must be >= 0")
        need(args.workers >= 1, "--workers must be >= 1")
        need(0 <= args.seed < 2**64, "--seed must be a 64-bit unsigned integer")
    elif args.command == "fit":
        need(args.k >= 1, "--k must be >= 1")
        need(args.patch >= 1, "--patch must be >= 1")
        need(args.iters >= 1, "--iters must be >= 1")
        need(0 <= args.seed < 2**64, "--seed must be a 64-bit unsigned integer")
    elif args.command == "calibrate":
        need(args.range[0] < args.range[1], "--range LO must be below HI")
        need(args.tol > 0, "--tol must be positive")
    elif args.command == "sweep":
        if args.range is not None:
            need(args.step is not None and args.step > 0, "--range requires a positive --step")
            need(args.range[0] <= args.range[1], "--range LO must not exceed HI")
        else:
            need(args.step is None, "--step only applies with --range")


def _echo(args) -> None:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    print(json.dumps(cfg, sort_keys=True), flush=True)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    _echo(args)
    try:
        return args.func(args)
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
