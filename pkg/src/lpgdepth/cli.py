"""Command-line entry point: ``lpgdepth <command> [options]``.

Exit codes: 0 success, 1 user error (bad arguments, config, files, data),
2 internal error (including a diverged training run).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .config import ConfigError, RunConfig, load_config
from .imageio import read_pfm, to_unit_pgm, write_pfm, write_pgm
from .metrics import EvalConfig, MetricsReport, compute_metrics, mean_report
from .synthdata import gen_dataset, load_dataset, load_image

log = logging.getLogger("lpgdepth")

CUE_FILES = (("8x8", "cue_8x8.pgm"), ("4x4", "cue_4x4.pgm"), ("2x2", "cue_2x2.pgm"), ("1x1", "cue_1x1.pgm"))


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    n = args.n if args.n is not None else cfg.n_train
    if n < 0:
        raise UserError("--n must be >= 0")
    manifest = gen_dataset(n, cfg.synth_config(), cfg.seed, args.out)
    print(f"wrote {n} samples, manifest {manifest}")
    return 0


def cmd_train(args) -> int:
    from .train import TrainingDiverged, train

    cfg = _run_config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    data_dir = args.data or cfg.data_dir
    if not data_dir:
        raise UserError("no training data: pass --data or set data_dir")
    val_dir = args.val or cfg.val_dir
    train_set = load_dataset(data_dir)
    val_set = load_dataset(val_dir) if val_dir else None
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".loss.tsv")
    start = time.perf_counter()

    def progress(step: int, loss: float) -> None:
        if step % 100 == 0:
            log.info("step %d loss %.5f", step, loss)

    try:
        result = train(cfg, train_set, val_set, out, log_path, progress)
    except TrainingDiverged as exc:
        print(f"error: training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return 2
    print(f"trained {result.steps} steps in {time.perf_counter() - start:.1f}s; checkpoint {out}, log {log_path}")
    if result.report is not None:
        print(MetricsReport.tsv_header())
        print(result.report.tsv_row())
    return 0


def _load_model(path):
    ckpt = checkpoint.load(path)
    model, _ = checkpoint.to_model(ckpt)
    return model


def _parse_cap(text: Optional[str], kappa: float) -> EvalConfig:
    if text is None:
        return EvalConfig(1e-3, kappa)
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return EvalConfig(1e-3, parts[0])
    if len(parts) == 2:
        return EvalConfig(*parts)
    raise UserError(f"--cap expects MAX or MIN,MAX, got {text!r}")


def cmd_eval(args) -> int:
    from .train import check_compatible, predict

    dataset = load_dataset(args.data)
    if args.oracle:
        preds = dataset.depths
        kappa = float(dataset.depths.max()) if args.checkpoint is None else _load_model(args.checkpoint).cfg.kappa
    else:
        if args.checkpoint is None:
            raise UserError("--checkpoint is required unless --oracle is given")
        model = _load_model(args.checkpoint)
        check_compatible(model, dataset)
        preds = predict(model, dataset.images)
        kappa = model.cfg.kappa
    cap = _parse_cap(args.cap, kappa)
    report = mean_report(compute_metrics(p, d, m, cap) for p, d, m in zip(preds, dataset.depths, dataset.masks))
    text = f"{MetricsReport.tsv_header()}\n{report.tsv_row()}\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def _load_input(model, image_path) -> np.ndarray:
    image = load_image(image_path)
    expected = (model.cfg.input_channels, *model.cfg.input_size)
    if image.shape != expected:
        raise UserError(f"image {image_path} is shaped {image.shape}, the checkpoint expects {expected}")
    return image[None]


def cmd_infer(args) -> int:
    from .train import predict

    model = _load_model(args.checkpoint)
    depth = predict(model, _load_input(model, args.image))[0]
    prefix = Path(args.out)
    write_pfm(f"{prefix}.pfm", depth)
    write_pgm(f"{prefix}.pgm", to_unit_pgm(depth, 0.0, model.cfg.kappa))
    print(f"wrote {prefix}.pfm and {prefix}.pgm")
    return 0


def normalize_cue(values: np.ndarray) -> np.ndarray:
    """Map a map's own min..max onto 0..65535; constant maps become zeros."""
    values = np.asarray(values, dtype=np.float64)
    return to_unit_pgm(values, float(values.min()), float(values.max()))


def cmd_inspect_lpg(args) -> int:
    from .core.tensor import Tensor

    model = _load_model(args.checkpoint)
    if model.cfg.variant != "full":
        raise UserError(f"checkpoint variant {model.cfg.variant!r} has no LPG heads")
    outputs = model(Tensor(_load_input(model, args.image)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for key, name in CUE_FILES:
        cue = outputs.cues[key].numpy()[0, 0]
        write_pgm(out_dir / name, normalize_cue(cue))
        write_pfm(out_dir / name.replace(".pgm", ".pfm"), cue)
    depth = outputs.depth.numpy()[0, 0]
    write_pgm(out_dir / "depth.pgm", normalize_cue(depth))
    print(f"wrote {len(CUE_FILES) + 1} images to {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    from .core.gradcheck import format_table, timed_suite

    results, elapsed = timed_suite(points=args.points, tol=args.tol, seed=args.seed)
    print(format_table(results, elapsed))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    from .ablation import AblationPlan, format_table, run_ablation

    cfg = _run_config(args)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    data_dir = args.data or cfg.data_dir
    val_dir = args.val or cfg.val_dir
    if not data_dir or not val_dir:
        raise UserError("ablation needs --data and --val (or data_dir / val_dir)")
    plan = AblationPlan.default(cfg)
    if args.variants:
        plan = plan.subset(args.variants.split(","))
    rows = run_ablation(plan, load_dataset(data_dir), load_dataset(val_dir), work_dir=args.work)
    table = format_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpgdepth", description="Monocular depth with local planar guidance on synthetic scenes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--config", help="run config file (key = value lines)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("gen-data", help="render synthetic scenes to disk")
    common(p, "output directory")
    p.add_argument("--n", type=int, help="number of scenes (default: n_train from the config)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p, "final checkpoint path")
    p.add_argument("--data", help="training set directory")
    p.add_argument("--val", help="held-out directory evaluated after training")
    p.add_argument("--log", help="loss log path (default: <out>.loss.tsv)")
    p.add_argument("--steps", type=int, help="override the step budget")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--cap", help="MAX or MIN,MAX depth range (default: 1e-3 to kappa)")
    p.add_argument("--oracle", action="store_true", help="score the ground truth against itself")
    p.add_argument("--out", help="also write the TSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict depth for one PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.pfm and PREFIX.pgm")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("inspect-lpg", help="write the per-scale depth cues for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect_lpg)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare the architecture variants")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--steps", type=int)
    p.add_argument("--variants", help="comma-separated subset of plan entries")
    p.add_argument("--work", help="directory for per-variant checkpoints and logs")
    p.add_argument("--out", help="also write the TSV here")
    p.set_defaults(func=cmd_ablate)
    return parser


USER_ERRORS = (UserError, ConfigError, checkpoint.CheckpointError, ValueError, OSError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort report for the exit code contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
