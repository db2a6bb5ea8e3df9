"""Command-line surface: gen-data, train, sweep, eval, gradcheck.

Exit codes: 0 success, 1 failed gradient check, 2 configuration error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .adjoint import gradcheck
from .losses import IoUReport
from .network import load_params, save_params
from .synth import (
    LabelBudget,
    gen_scene,
    make_scene_spec,
    read_class_map,
    sample_labels,
)
from .tensor_ops import read_ftf
from .training import (
    Dataset,
    TrainConfig,
    init_params,
    evaluate,
    load_dataset,
    parse_config,
    save_dataset,
    sweep,
    sweep_csv,
    train,
)

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3

GRADCHECK_THRESHOLD = 1e-5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepseg",
        description="Train time-stepping residual networks with explicit "
                    "output smoothing on sparse-label segmentation scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic labeled scene")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--size", default="64x64", help="HxW, e.g. 64x64")
    gen.add_argument("--bands", type=int, default=16)
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--noise", type=float, default=1.2)
    gen.add_argument("--blobs", type=int, default=6)
    gen.add_argument("--signature-scale", type=float, default=0.17)
    gen.add_argument("--train-labels", type=int, default=200)
    gen.add_argument("--val-labels", type=int, default=50)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="run SGD on a scene directory")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)

    sw = sub.add_parser("sweep", help="train over an alpha grid and seeds")
    sw.add_argument("--config", required=True)
    sw.add_argument("--alphas", required=True, help="comma-separated floats")
    sw.add_argument("--seeds", required=True, help="comma-separated ints")
    sw.add_argument("--data", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--jobs", type=int, default=1)

    ev = sub.add_parser("eval", help="score saved params against dense truth")
    ev.add_argument("--params", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)

    gc = sub.add_parser("gradcheck",
                        help="compare the adjoint gradient to finite differences")
    gc.add_argument("--seed", type=int, required=True)
    gc.add_argument("--alpha", type=float, default=0.5)
    return parser


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"--size must look like 64x64, got {text!r}")
    return int(parts[0]), int(parts[1])


def _cmd_gen_data(args) -> int:
    height, width = _parse_size(args.size)
    spec = make_scene_spec(seed=args.seed, height=height, width=width,
                           channels=args.bands, num_classes=args.classes,
                           blob_count=args.blobs, noise_sigma=args.noise,
                           signature_scale=args.signature_scale)
    data, truth = gen_scene(spec)
    budget = LabelBudget(n_train=args.train_labels, n_val=args.val_labels,
                         seed=args.seed)
    train_sel, val_sel = sample_labels(truth, budget)
    save_dataset(args.out, Dataset(data=data, truth=truth,
                                   train=train_sel, val=val_sel))
    print(f"wrote scene {height}x{width} with {len(train_sel)} train / "
          f"{len(val_sel)} val labels to {args.out}")
    return EXIT_OK


def _history_csv(history) -> str:
    def cell(v):
        return "" if v is None else repr(v)

    lines = ["iteration,lr,loss,reg_value,objective,val_loss,val_miou"]
    lines.extend(
        f"{rec.iteration},{repr(rec.lr)},{repr(rec.loss)},{repr(rec.reg_value)},"
        f"{repr(rec.objective)},{cell(rec.val_loss)},{cell(rec.val_miou)}"
        for rec in history)
    return "\n".join(lines) + "\n"


def _cmd_train(args) -> int:
    config = parse_config(Path(args.config).read_text())
    dataset = load_dataset(args.data)
    result = train(config, dataset.data, dataset.train, dataset.val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "params", result.params)
    (out / "history.csv").write_text(_history_csv(result.history))
    (out / "status.txt").write_text(result.status + "\n")
    final = result.history[-1] if result.history else None
    if final is not None:
        print(f"finished {len(result.history)} iterations, status "
              f"{result.status}, final loss {final.loss:.6f}")
    else:
        print(f"status {result.status}")
    return EXIT_OK if result.status == "ok" else EXIT_DIVERGED


def _cmd_sweep(args) -> int:
    config = parse_config(Path(args.config).read_text())
    alphas = [float(x) for x in args.alphas.split(",") if x.strip()]
    seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
    dataset = load_dataset(args.data)
    result = sweep(config, alphas, seeds, dataset, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(result.records))
    (out / "summary.txt").write_text(result.summary())
    print(result.summary(), end="")
    return EXIT_OK if result.alpha_star is not None else EXIT_DIVERGED


def _cmd_eval(args) -> int:
    params = load_params(args.params)
    data = read_ftf(Path(args.data) / "data.ftf")
    truth = read_class_map(Path(args.data) / "truth.lbl")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report, _ = evaluate(params, data, truth, out_path=out / "prediction.lbl")
    (out / "iou.csv").write_text(report.csv())
    print(f"mIoU {report.miou:.6f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    spec = make_scene_spec(seed=args.seed, height=8, width=8, channels=3,
                           num_classes=2, blob_count=3, noise_sigma=0.5,
                           signature_scale=1.0)
    data, truth = gen_scene(spec)
    labels, _ = sample_labels(truth, LabelBudget(n_train=10, n_val=0,
                                                 seed=args.seed))
    params = init_params(bands=3, num_classes=2, width=4, steps=2,
                         activation="tanh", h=1.0, seed=args.seed)
    err = gradcheck(params, data, labels, alpha=args.alpha, reg="quadratic",
                    fd_step=1e-5, num_coords=60, seed=args.seed)
    print(f"gradcheck max relative error: {err:.6e}")
    return EXIT_OK if err < GRADCHECK_THRESHOLD else EXIT_GRADCHECK_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen-data": _cmd_gen_data, "train": _cmd_train,
                "sweep": _cmd_sweep, "eval": _cmd_eval,
                "gradcheck": _cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except FloatingPointError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entry():
    sys.exit(main())
