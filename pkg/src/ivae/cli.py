"""Command-line entry point: ``ivae {train,eval,reconstruct,gradcheck}``.

Epsilon convention: ``--epsilon`` is the HALF-width of each pixel interval.
Each pixel x is scored on [x - epsilon, x + epsilon], so an "integration
interval" of length L corresponds to ``--epsilon L/2``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bounds import BoundKind
from .gradcheck import run_suite
from .model import PRESETS, CheckpointError, reconstruct
from .pgm import reconstruction_grid, write_pgm
from .train import (
    PRESET_RUN,
    RECON_STREAM,
    RunConfig,
    TrainingAborted,
    evaluate,
    load_datasets,
    load_trained,
    train,
    with_bound,
)

EXIT_FAILURE = 1
EXIT_ABORTED = 3
EXIT_CHECKPOINT = 4

GRADCHECK_TOL = 1e-4

EPSILON_HELP = (
    "HALF-width of each pixel interval: pixel x is scored on [x-eps, x+eps]. "
    "An interval of total length L corresponds to --epsilon L/2."
)


def _hidden(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in text.split(",") if w.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad hidden spec {text!r}; use e.g. 200,200")
    if any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("hidden widths must be positive")
    return widths


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and data")
    g.add_argument("--config", help="config.txt echo from a previous run; other flags override it")
    g.add_argument("--preset", choices=sorted(PRESETS), help="named configuration (default paper-ielbo)")
    g.add_argument("--bound", choices=[k.value for k in BoundKind])
    g.add_argument("--epsilon", type=float, help=EPSILON_HELP)
    g.add_argument("--alpha", type=float, help="Renyi order for irelbo, in (1, 2)")
    g.add_argument("--latent-dim", type=int)
    g.add_argument("--hidden", type=_hidden, help="comma-separated hidden widths, e.g. 200,200")
    g.add_argument("--activation", choices=["elu", "relu"])
    g.add_argument("--bias-init", type=float)
    g.add_argument("--mc-samples", type=int)
    g.add_argument("--train", dest="train_path", help="IDX image file (.gz ok); synthetic data if omitted")
    g.add_argument("--test", dest="test_path", help="IDX image file for evaluation")
    g.add_argument("--subset", type=int, help="use only the first N training images")
    g.add_argument("--test-subset", type=int, help="use only the first N test images")
    g.add_argument("--synthetic-count", type=int, help="synthetic training images when --train is omitted")
    g.add_argument("--synthetic-test-count", type=int)
    g.add_argument("--data-seed", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--seed", type=int)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge --config, --preset and explicit flags (later wins).

    For eval and reconstruct, ``--out DIR`` alone picks up ``DIR/config.txt``.
    """
    config = args.config
    if config is None and args.command != "train" and args.out:
        echo = Path(args.out) / "config.txt"
        config = echo if echo.exists() else None
    if config:
        cfg = RunConfig.from_echo(Path(config).read_text())
    else:
        cfg = RunConfig()
    if args.preset:
        cfg = replace(cfg, model=PRESETS[args.preset], preset=args.preset, **PRESET_RUN[args.preset])
    elif not config:
        cfg = replace(cfg, **PRESET_RUN[cfg.preset])

    model_changes = {
        k: v
        for k, v in (
            ("latent_dim", args.latent_dim),
            ("hidden", args.hidden),
            ("activation", args.activation),
            ("bias_init", args.bias_init),
        )
        if v is not None
    }
    bound_changes = {
        k: v
        for k, v in (
            ("kind", args.bound),
            ("epsilon", args.epsilon),
            ("alpha", args.alpha),
            ("mc_samples", args.mc_samples),
        )
        if v is not None
    }
    model = replace(cfg.model, **model_changes)
    if bound_changes:
        model = with_bound(model, **bound_changes)
    if model != cfg.model:
        cfg = replace(cfg, model=model, preset="custom")

    run_changes = {}
    for name in (
        "train_path",
        "test_path",
        "subset",
        "test_subset",
        "synthetic_count",
        "synthetic_test_count",
        "data_seed",
        "batch_size",
        "lr",
        "seed",
        "epochs",
        "checkpoint_every",
        "max_grad_norm",
    ):
        value = getattr(args, name, None)
        if value is not None:
            run_changes[name] = value
    if getattr(args, "histograms", False):
        run_changes["histograms"] = True
    if getattr(args, "wall_clock", False):
        run_changes["wall_clock_in_metrics"] = True
    if getattr(args, "out", None) is not None:
        run_changes["out"] = args.out
    return replace(cfg, **run_changes)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    try:
        path = train(cfg)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}; diagnostic dump at {exc.dump_path}", file=sys.stderr)
        return EXIT_ABORTED
    print(f"metrics written to {path}")
    return 0


def _checkpoint_path(args, cfg: RunConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoint.ivae"


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    try:
        params, _, epoch = load_trained(cfg, _checkpoint_path(args, cfg))
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    train_ds, test_ds = load_datasets(cfg)
    ds = train_ds if args.on == "train" else test_ds
    res = evaluate(params, cfg.model, ds, cfg.batch_size, cfg.seed)
    print(f"checkpoint_epoch={epoch}")
    print(f"set={args.on}")
    print(f"count={ds.count}")
    print(f"bound={res.bound:.17g}")
    print(f"reconstruction={res.recon:.17g}")
    print(f"divergence={res.div:.17g}")
    print(f"sigma_frac_below_1e-3={res.histogram.frac_below:.17g}")
    return EXIT_FAILURE if res.nonfinite else 0


def cmd_reconstruct(args) -> int:
    cfg = resolve_config(args)
    try:
        params, _, _ = load_trained(cfg, _checkpoint_path(args, cfg))
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    train_ds, test_ds = load_datasets(cfg)
    ds = train_ds if args.on == "train" else test_ds
    x = ds.images[: args.count]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, RECON_STREAM]))
    noise = rng.standard_normal((len(x), cfg.model.latent_dim))
    mean = reconstruct(params, cfg.model, x, "mean_of_q")
    sample = reconstruct(params, cfg.model, x, "sample_of_q", noise)
    grid = reconstruction_grid(x, mean, sample, columns=args.columns)
    out = Path(args.image)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, grid)
    print(f"wrote {grid.shape[1]}x{grid.shape[0]} grid to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_suite(seed=args.seed)
    ok = True
    for r in reports:
        passed = r.max_rel_err <= args.tol
        ok &= passed
        print(f"{r.bound:7s} {r.block:16s} max_rel_err={r.max_rel_err:.3e} {'ok' if passed else 'FAIL'}")
    print("gradcheck " + ("passed" if ok else "FAILED"))
    return 0 if ok else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivae",
        description="Train and inspect VAEs with interval-likelihood bounds. " + EPSILON_HELP,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write metrics.csv, config.txt and checkpoints")
    _add_config_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory (default ./run)")
    p.add_argument("--checkpoint-every", type=int, help="save every k epochs (and at the end); 0 disables")
    p.add_argument("--max-grad-norm", type=float, help="optional global gradient clip (off by default)")
    p.add_argument("--histograms", action="store_true", help="write per-epoch decoder sigma/mean histograms")
    p.add_argument("--wall-clock", action="store_true", help="fill wall_seconds in metrics.csv (breaks byte-identity)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mean bound and term decomposition from a checkpoint")
    _add_config_flags(p)
    p.add_argument("--out", help="run directory holding checkpoint.ivae")
    p.add_argument("--checkpoint")
    p.add_argument("--on", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="write a PGM grid of originals and reconstructions")
    _add_config_flags(p)
    p.add_argument("--out", help="run directory holding checkpoint.ivae")
    p.add_argument("--checkpoint")
    p.add_argument("--on", choices=["train", "test"], default="test")
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--columns", type=int, default=10)
    p.add_argument("--image", default="reconstructions.pgm", help="output PGM path")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gradcheck", help="finite-difference check of all bounds on a toy net")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
