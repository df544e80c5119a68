"""Command-line interface.

Subcommands cover the full workflow: ``synth`` writes a phantom dataset,
``train`` fits one model and writes a checkpoint plus its history CSV,
``predict`` ensembles checkpoints over one image and writes the final
ellipse mask, ``eval`` scores a prediction directory against a manifest,
``gradcheck`` runs the finite-difference suite, and ``reproduce-ablation``
reruns the refining-branch / augmentation comparisons on phantoms.

Exit codes: 0 success, 1 internal failure, 2 usage or input error. Every run
prints its fully resolved configuration first.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .ablation import run_ablation
from .augment import AugmentConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (load_manifest, read_mask, read_pgm, synth_phantoms,
                   write_mask)
from .errors import IvusNetError
from .gradcheck import (NETWORK_TOL, PER_OP_TOL, gradient_suite,
                        network_gradient_check)
from .metrics import evaluate
from .network import ArchConfig, PRESETS
from .postprocess import extract_contour, write_contour_csv, write_prob_map
from .training import TrainConfig, ensemble_predict, train_model


def _env_seed():
    return int(os.environ.get("IVUSNET_SEED", "0"))


def _echo_config(command, pairs):
    joined = " ".join(f"{k}={v}" for k, v in pairs)
    print(f"run config: command={command} {joined}")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def cmd_synth(args):
    _echo_config("synth", [("out", args.out), ("count", args.count),
                           ("size", args.size), ("seed", args.seed)])
    records = synth_phantoms(args.seed, args.count, args.size, args.out)
    print(f"wrote {len(records)} phantoms to {args.out}")
    return 0


def _arch_from_args(args):
    if args.depths:
        depths = tuple(int(d) for d in args.depths.split(","))
    else:
        depths = PRESETS[args.preset]
    return ArchConfig(block_depths=depths,
                      main_convs_per_block=args.main_convs,
                      input_channels=1,
                      refine=not args.no_refine)


def cmd_train(args):
    arch = _arch_from_args(args)
    _echo_config("train", [
        ("manifest", args.manifest), ("target", args.target),
        ("preset", args.preset), ("depths", ",".join(map(str, arch.block_depths))),
        ("refine", int(arch.refine)), ("augment", int(not args.no_aug)),
        ("lr", _fmt(args.lr)), ("batch", args.batch_size),
        ("epochs", args.epochs), ("iterations", args.iterations),
        ("validation", args.validation_count),
        ("noise_sigma", _fmt(args.noise_sigma)),
        ("noise_prob", _fmt(args.noise_prob)),
        ("blackout_prob", _fmt(args.blackout_prob)),
        ("seed", args.seed), ("out", args.out)])
    records = load_manifest(args.manifest)
    train_records = [r for r in records if r.split == "train"]
    if not train_records:
        train_records = records
    tcfg = TrainConfig(target=args.target, learning_rate=args.lr,
                       batch_size=args.batch_size, epochs=args.epochs,
                       iterations_per_epoch=args.iterations,
                       validation_count=args.validation_count,
                       seed=args.seed)
    acfg = None if args.no_aug else AugmentConfig(
        noise_sigma=args.noise_sigma, noise_prob=args.noise_prob,
        blackout_prob=args.blackout_prob, seed=args.seed)
    net, history = train_model(train_records, arch, tcfg, acfg)
    save_checkpoint(net, args.out)
    history_path = args.history or (str(args.out) + ".history.csv")
    history.to_csv(history_path)
    last_jm = history.val_jm[-1]
    jm_txt = "n/a" if last_jm is None else f"{last_jm:.4f}"
    print(f"checkpoint: {args.out} ({net.num_parameters()} parameters)")
    print(f"history: {history_path} (final loss {history.losses[-1]:.4f}, "
          f"final val JM {jm_txt})")
    return 0


def cmd_predict(args):
    _echo_config("predict", [
        ("models", args.models), ("image", args.image),
        ("threshold", _fmt(args.threshold)), ("out_mask", args.out_mask),
        ("out_prob", args.out_prob), ("out_contour", args.out_contour)])
    paths = [p for p in args.models.split(",") if p]
    models = []
    cfg0 = None
    for p in paths:
        net, cfg = load_checkpoint(p)
        if cfg0 is None:
            cfg0 = cfg
        elif cfg != cfg0:
            raise IvusNetError(f"checkpoint {p} has a different architecture "
                               f"({cfg}) than {paths[0]} ({cfg0})")
        models.append(net)
    image = read_pgm(args.image)
    prob = ensemble_predict(models, image.pixels)
    if args.out_prob:
        write_prob_map(prob, args.out_prob)
    contour, ellipse, mask = extract_contour(prob, args.threshold)
    write_mask(mask, args.out_mask)
    if args.out_contour:
        write_contour_csv(contour, args.out_contour)
    print(f"ellipse: center=({ellipse.cx:.2f}, {ellipse.cy:.2f}) "
          f"axes=({ellipse.a:.2f}, {ellipse.b:.2f}) "
          f"theta={ellipse.theta:.3f}")
    return 0


def cmd_eval(args):
    _echo_config("eval", [("manifest", args.manifest),
                          ("pred_dir", args.pred_dir),
                          ("pixel_spacing_mm", _fmt(args.pixel_spacing_mm))])
    records = load_manifest(args.manifest)
    test_records = [r for r in records if r.split == "test"]
    if not test_records:
        test_records = records
    pred_dir = Path(args.pred_dir)
    missing = []
    predictions = {}
    for target in ("lumen", "media"):
        preds = []
        for i in range(len(test_records)):
            mask_path = pred_dir / f"{target}_{i:04d}.pgm"
            if not mask_path.exists():
                missing.append(str(mask_path))
                preds.append(None)
                continue
            mask = read_mask(mask_path).bits
            contour_path = pred_dir / f"{target}_{i:04d}.csv"
            if contour_path.exists():
                from .postprocess import read_contour_csv
                contour = read_contour_csv(contour_path)
            else:
                from .postprocess import trace_boundary
                contour = trace_boundary(mask)
            preds.append((mask, contour))
        predictions[target] = preds
    if missing:
        raise IvusNetError("missing prediction files:\n  " +
                           "\n  ".join(missing))
    report = evaluate(test_records, predictions, args.pixel_spacing_mm)
    print(report.format_text())
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv(), encoding="utf-8")
        print(f"csv written to {args.out_csv}")
    return 0


def cmd_gradcheck(args):
    _echo_config("gradcheck", [("seeds", args.seeds)])
    failed = False
    for name, err in sorted(gradient_suite(seeds=args.seeds).items()):
        status = "ok" if err <= PER_OP_TOL else "FAIL"
        if err > PER_OP_TOL:
            failed = True
        print(f"{name:<22} max rel err {err:.3e}  [{status}]")
    net_err = network_gradient_check()
    status = "ok" if net_err <= NETWORK_TOL else "FAIL"
    if net_err > NETWORK_TOL:
        failed = True
    print(f"{'network_end_to_end':<22} max rel err {net_err:.3e}  [{status}]")
    return 1 if failed else 0


def cmd_ablation(args):
    _echo_config("reproduce-ablation", [
        ("out", args.out), ("models_per_arm", args.models_per_arm),
        ("seeds", args.seeds), ("size", args.size),
        ("train_count", args.train_count), ("test_count", args.test_count),
        ("epochs", args.epochs), ("lr", _fmt(args.lr)),
        ("target", args.target)])
    result = run_ablation(args.out, models_per_arm=args.models_per_arm,
                          n_seeds=args.seeds, size=args.size,
                          n_train=args.train_count, n_test=args.test_count,
                          epochs=args.epochs, lr=args.lr, target=args.target,
                          progress=print)
    print(result.summary())
    ok = (result.mean("full") >= result.mean("no_refine")
          and result.mean("full") >= result.mean("no_aug"))
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ivusnet",
        description="Vessel-wall segmentation: training, prediction, "
                    "post-processing and evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=_env_seed())
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", choices=("lumen", "media"), default="lumen")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    p.add_argument("--depths", default="",
                   help="comma-separated block depths overriding the preset")
    p.add_argument("--main-convs", type=int, default=2)
    p.add_argument("--no-refine", action="store_true",
                   help="drop the refining branches (ablation)")
    p.add_argument("--no-aug", action="store_true",
                   help="train on originals only (ablation)")
    p.add_argument("--lr", type=float, default=0.0001)
    p.add_argument("--batch-size", type=int, default=6)
    p.add_argument("--epochs", type=int, default=96)
    p.add_argument("--iterations", type=int, default=144,
                   help="iterations per epoch, capped at available batches")
    p.add_argument("--validation-count", type=int, default=10)
    p.add_argument("--noise-sigma", type=float, default=0.10)
    p.add_argument("--noise-prob", type=float, default=0.5)
    p.add_argument("--blackout-prob", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=_env_seed())
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", default="",
                   help="history CSV path (default: <out>.history.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict",
                       help="ensemble checkpoints over one image")
    p.add_argument("--models", required=True,
                   help="comma-separated checkpoint paths")
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-prob", default="")
    p.add_argument("--out-contour", default="")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--pixel-spacing-mm", type=float, default=1.0)
    p.add_argument("--out-csv", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="run the finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("reproduce-ablation",
                       help="refining-branch and augmentation comparisons "
                            "on phantoms")
    p.add_argument("--out", required=True, help="working directory")
    p.add_argument("--models-per-arm", type=int, default=5)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--train-count", type=int, default=12)
    p.add_argument("--test-count", type=int, default=12)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--target", choices=("lumen", "media"), default="lumen")
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except (IvusNetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
