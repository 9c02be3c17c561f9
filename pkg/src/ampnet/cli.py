"""``ampnet`` command line: extract-patches, train, eval, reconstruct, gradcheck, baseline."""
import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .baseline import BaselineConfig, amp_baseline, nmse, sparse_problem
from .config import ConfigError, load_config
from .data import PatchRecipe, RECIPES, extract_patches, list_images
from .gradcheck import finite_difference_check, oracle_check, perturbed_model
from .io import (
    FormatError,
    atomic_write,
    load_checkpoint,
    read_patches,
    read_pgm,
    save_checkpoint,
    write_patches,
    write_pgm,
)
from .kernels import make_rng
from .metrics import psnr, ssim
from .model import build_model, forward, param_count
from .sampling import measure
from .training import fit

log = logging.getLogger("ampnet")

GRADCHECK_TOL = 1e-4
ORACLE_TOL = 1e-8


class CommandError(Exception):
    pass


def _fmt_db(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"


def _load_model(path):
    try:
        model, _ = load_checkpoint(path)
    except OSError as exc:
        raise CommandError(f"cannot read checkpoint: {exc}") from exc
    return model


def cmd_extract_patches(args, cfg):
    dataset = args.dataset or cfg.dataset_dir
    out = args.output or cfg.train_patches
    if not dataset or not os.path.isdir(dataset):
        raise CommandError(f"dataset directory not found: {dataset!r}")
    if not out:
        raise CommandError("no output path (--output or train_patches)")
    recipe = RECIPES[cfg.patch_recipe]
    if cfg.patches_per_image:
        recipe = PatchRecipe(recipe.name, cfg.patches_per_image, recipe.size)
    patches, manifest = extract_patches(dataset, recipe, make_rng(cfg.seed))
    if len(patches) == 0:
        raise CommandError(f"no usable images in {dataset}")
    write_patches(out, patches)
    with atomic_write(out + ".manifest.json", "w") as fh:
        json.dump({"recipe": recipe.__dict__, "seed": cfg.seed, "files": manifest}, fh, indent=1)
    print(f"wrote {len(patches)} patches of {recipe.size}x{recipe.size} to {out}")


def cmd_train(args, cfg):
    source = args.dataset or cfg.train_patches
    if not source or not os.path.isfile(source):
        raise CommandError(f"training patch file not found: {source!r}")
    patches = read_patches(source)
    if cfg.val_patches:
        train, val = patches, read_patches(cfg.val_patches)
    else:
        if not 0 < cfg.val_count < len(patches):
            raise CommandError(f"cannot hold out {cfg.val_count} of {len(patches)} patches")
        order = make_rng(cfg.seed).permutation(len(patches))
        train, val = patches[order[cfg.val_count:]], patches[order[: cfg.val_count]]
    out = args.output or args.model or cfg.checkpoint
    model = build_model(K=cfg.K, n=cfg.n, ratio=cfg.ratio, variant=cfg.variant, seed=cfg.seed)
    log_path = cfg.history_log
    tmp_log = log_path + ".partial"
    try:
        best, history = fit(model, train, val, cfg.train_config(), log_path=tmp_log)
    except BaseException:
        if os.path.exists(tmp_log):
            os.unlink(tmp_log)
        raise
    save_checkpoint(best, out, {"epochs": cfg.epochs})
    os.replace(tmp_log, log_path)
    print(f"best val PSNR {best.meta['val_psnr']:.4f} dB at epoch {best.meta['epoch']}; saved {out}")


def cmd_eval(args, cfg):
    if not args.model:
        raise CommandError("eval needs --model")
    model = _load_model(args.model)
    dataset = args.dataset or cfg.dataset_dir
    if not dataset or not os.path.isdir(dataset):
        raise CommandError(f"dataset directory not found: {dataset!r}")
    paths = list_images(dataset)
    if not paths:
        raise CommandError(f"no .pgm images in {dataset}")
    rows = []
    for path in paths:
        truth = read_pgm(path)
        recon = forward(model, measure(model.sampling, truth))
        rows.append((os.path.basename(path), psnr(truth, recon, cfg.peak), ssim(truth, recon)))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    width = max(len("mean"), *(len(r[0]) for r in rows))
    print(f"{'image':<{width}}  {'psnr_db':>10}  {'ssim':>8}")
    for name, p, s in rows + [("mean", mean_psnr, mean_ssim)]:
        print(f"{name:<{width}}  {_fmt_db(p):>10}  {s:8.4f}")
    out = args.output or cfg.eval_records
    with atomic_write(out, "w") as fh:
        for name, p, s in rows:
            fh.write(json.dumps({"name": name, "psnr_db": "inf" if math.isinf(p) else p, "ssim": s}) + "\n")


def cmd_reconstruct(args, cfg):
    if not args.input or not args.output:
        raise CommandError("reconstruct needs --input and --output")
    truth = read_pgm(args.input)
    if args.model:
        model = _load_model(args.model)
    else:
        model = build_model(K=cfg.K, n=cfg.n, ratio=cfg.ratio, variant=cfg.variant, seed=cfg.seed)
    recon = forward(model, measure(model.sampling, truth))
    write_pgm(args.output, recon)
    print(f"PSNR {_fmt_db(psnr(truth, recon, cfg.peak))} dB, wrote {args.output}")


def cmd_gradcheck(args, cfg):
    seed = cfg.seed
    model = perturbed_model(K=2, n=8, ratio=0.25, variant="BM", seed=seed)
    image = make_rng(seed).random((1, 16, 16))
    errors = finite_difference_check(model, image, step=1e-5, seed=seed)
    worst_name = max(errors, key=errors.get)
    for name, err in errors.items():
        print(f"{name:<28} {err:.3e}")
    print(f"max relative error {errors[worst_name]:.3e} ({worst_name})")
    plain = perturbed_model(K=2, n=8, ratio=0.25, variant="M", seed=seed)
    diff = oracle_check(plain, image)
    print(f"closed-form A gradient max abs difference {diff:.3e}")
    ok = errors[worst_name] < GRADCHECK_TOL and diff < ORACLE_TOL
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_baseline(args, cfg):
    rng = make_rng(cfg.seed)
    bcfg = BaselineConfig(iterations=cfg.baseline_iterations)
    scores = []
    for _ in range(cfg.baseline_problems):
        A, x, y = sparse_problem(rng)
        scores.append(nmse(amp_baseline(A, y, bcfg), x))
    print(f"problems {len(scores)}  median NMSE {np.median(scores):.3e}  max NMSE {np.max(scores):.3e}")


COMMANDS = {
    "extract-patches": cmd_extract_patches,
    "train": cmd_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ampnet", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config")
    parser.add_argument("--model")
    parser.add_argument("--input")
    parser.add_argument("--output")
    parser.add_argument("--dataset")
    parser.add_argument("--seed", type=int)
    return parser


def run_command(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        status = COMMANDS[args.command](args, cfg)
    except (CommandError, ConfigError, FormatError, OSError, ValueError) as exc:
        print(f"ampnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return status or 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
