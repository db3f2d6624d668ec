"""Training and evaluation loops with CSV metrics, checkpoints and abort dumps."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import BatchPlan, Dataset, batches, load_idx, rescale, synth_high_contrast
from .diagnostics import SigmaHistogram
from .model import (
    PRESETS,
    ModelConfig,
    VaeParams,
    decode,
    encode,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .bounds import BoundConfig, BoundKind, evaluate_bound
from .optim import AdamState, NonFiniteGradientError, adam_step

__all__ = [
    "RunConfig",
    "EvalResult",
    "TrainingAborted",
    "METRIC_COLUMNS",
    "load_datasets",
    "evaluate",
    "train",
    "PRESET_RUN",
    "with_bound",
    "load_trained",
]

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "epoch",
    "train_bound",
    "test_bound",
    "train_recon",
    "train_div",
    "sigma_frac_below_1e-3",
    "nonfinite_flag",
    "wall_seconds",
)

NOISE_STREAM = 1
EVAL_STREAM = 4
RECON_STREAM = 5

PRESET_RUN = {
    "paper-ielbo": {"lr": 1e-4, "batch_size": 100},
    "paper-irelbo": {"lr": 5e-4, "batch_size": 100},
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: PRESETS["paper-ielbo"])
    preset: str = "paper-ielbo"
    train_path: str | None = None
    test_path: str | None = None
    synthetic_count: int = 1000
    synthetic_test_count: int = 200
    data_seed: int = 0
    subset: int | None = None
    test_subset: int | None = None
    epochs: int = 10
    batch_size: int = 100
    lr: float = 1e-4
    seed: int = 0
    out: str = "run"
    checkpoint_every: int = 10
    max_grad_norm: float | None = None
    histograms: bool = False
    wall_clock_in_metrics: bool = False

    def echo(self) -> list[str]:
        lines = [
            f"preset={self.preset}",
            f"train_path={self.train_path or ''}",
            f"test_path={self.test_path or ''}",
            f"synthetic_count={self.synthetic_count}",
            f"synthetic_test_count={self.synthetic_test_count}",
            f"data_seed={self.data_seed}",
            f"subset={'' if self.subset is None else self.subset}",
            f"test_subset={'' if self.test_subset is None else self.test_subset}",
            f"epochs={self.epochs}",
            f"batch_size={self.batch_size}",
            f"lr={self.lr!r}",
            f"seed={self.seed}",
            f"checkpoint_every={self.checkpoint_every}",
            f"max_grad_norm={'' if self.max_grad_norm is None else repr(self.max_grad_norm)}",
            f"histograms={int(self.histograms)}",
            f"wall_clock_in_metrics={int(self.wall_clock_in_metrics)}",
            "epsilon_convention=half-width (interval width = 2*epsilon)",
        ]
        return self.model.echo() + lines

    @classmethod
    def from_echo(cls, text: str) -> "RunConfig":
        """Rebuild a config from the ``key=value`` lines written by :meth:`echo`."""
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        opt_int = lambda v: int(v) if v else None
        bound = BoundConfig(
            BoundKind(kv["bound"]),
            epsilon=float(kv["epsilon"]),
            alpha=float(kv["alpha"]),
            mc_samples=int(kv["mc_samples"]),
        )
        model = ModelConfig(
            input_dim=int(kv["input_dim"]),
            hidden=tuple(int(h) for h in kv["hidden"].split(",") if h),
            activation=kv["activation"],
            latent_dim=int(kv["latent_dim"]),
            bound=bound,
            bias_init=float(kv["bias_init"]),
            init=kv["init"],
        )
        return cls(
            model=model,
            preset=kv["preset"],
            train_path=kv["train_path"] or None,
            test_path=kv["test_path"] or None,
            synthetic_count=int(kv["synthetic_count"]),
            synthetic_test_count=int(kv["synthetic_test_count"]),
            data_seed=int(kv["data_seed"]),
            subset=opt_int(kv["subset"]),
            test_subset=opt_int(kv["test_subset"]),
            epochs=int(kv["epochs"]),
            batch_size=int(kv["batch_size"]),
            lr=float(kv["lr"]),
            seed=int(kv["seed"]),
            checkpoint_every=int(kv["checkpoint_every"]),
            max_grad_norm=float(kv["max_grad_norm"]) if kv["max_grad_norm"] else None,
            histograms=bool(int(kv["histograms"])),
            wall_clock_in_metrics=bool(int(kv["wall_clock_in_metrics"])),
        )


class TrainingAborted(RuntimeError):
    """Training hit a non-finite bound or gradient; a diagnostic dump was written."""

    def __init__(self, message: str, dump_path: Path):
        super().__init__(message)
        self.dump_path = dump_path


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Train/test sets from IDX files, or synthetic high-contrast images."""
    n = cfg.model.input_dim
    if cfg.train_path:
        train = rescale(load_idx(cfg.train_path), cfg.train_path)
    else:
        train = synth_high_contrast(cfg.synthetic_count, n, cfg.data_seed)
    if cfg.test_path:
        test = rescale(load_idx(cfg.test_path), cfg.test_path)
    elif cfg.train_path:
        test = train
    else:
        test = synth_high_contrast(cfg.synthetic_test_count, n, cfg.data_seed + 1)
    train, test = train.subset(cfg.subset), test.subset(cfg.test_subset)
    for ds in (train, test):
        if ds.n_pixels != n:
            raise ValueError(f"{ds.source}: {ds.n_pixels} pixels per image, model expects {n}")
    return train, test


@dataclass
class EvalResult:
    bound: float
    recon: float
    div: float
    nonfinite: bool
    histogram: SigmaHistogram


def evaluate(params: VaeParams, model: ModelConfig, ds: Dataset, batch_size: int, seed: int) -> EvalResult:
    """Mean bound and terms over ``ds`` in file order with a fixed noise stream."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, EVAL_STREAM]))
    hist = SigmaHistogram()
    totals, recons, divs, weights = [], [], [], []
    k, s = model.latent_dim, model.bound.mc_samples
    with ad.no_tape():
        for start in range(0, ds.count, batch_size):
            x = ds.images[start : start + batch_size]
            noise = rng.standard_normal((s, len(x), k))
            q = encode(params, model, x)

            def dec(z):
                dist = decode(params, model, z)
                hist.observe_decoder(dist)
                return dist

            terms = evaluate_bound(x, q, dec, model.bound, noise)
            totals.append(float(terms.total.data))
            recons.append(float(terms.reconstruction.data))
            divs.append(float(terms.divergence.data))
            weights.append(len(x))
    w = np.array(weights, dtype=np.float64)
    mean = lambda v: float(np.dot(w, v) / w.sum())
    bound, recon, div = mean(totals), mean(recons), mean(divs)
    nonfinite = not all(math.isfinite(v) for v in (bound, recon, div))
    return EvalResult(bound, recon, div, nonfinite, hist)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(v)
    return format(float(v), ".17g")


def _write_hist(path: Path, hist: SigmaHistogram) -> None:
    lines = ["sigma_lo,sigma_hi,count"] + [f"{_fmt(lo)},{_fmt(hi)},{c}" for lo, hi, c in hist.rows()]
    lines += ["mean_lo,mean_hi,count"] + [
        f"{_fmt(i / 100)},{_fmt((i + 1) / 100)},{c}" for i, c in enumerate(hist.mean_counts)
    ]
    path.write_text("\n".join(lines) + "\n")


def _dump(out: Path, epoch: int, batch: int, reason: str, params: VaeParams, extra: dict) -> Path:
    path = out / "diagnostic_dump.txt"
    lines = [f"reason={reason}", f"epoch={epoch}", f"batch={batch}"]
    lines += [f"{k}={_fmt(v) if not isinstance(v, str) else v}" for k, v in extra.items()]
    for name, t in params.items():
        d = t.data
        finite = np.isfinite(d)
        lines.append(
            f"param {name}: finite={int(finite.all())} max_abs={_fmt(np.max(np.abs(d[finite])) if finite.any() else math.nan)}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def train(cfg: RunConfig) -> Path:
    """Run training; returns the metrics CSV path.

    Raises :class:`TrainingAborted` after writing the metrics row and a
    diagnostic dump when the bound or a gradient goes non-finite.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text("\n".join(cfg.echo()) + "\n")
    train_ds, test_ds = load_datasets(cfg)
    model = cfg.model
    params = init_params(model, cfg.seed)
    opt = AdamState.create(params.tensors(), cfg.lr, max_grad_norm=cfg.max_grad_norm)
    plan = BatchPlan(cfg.batch_size, cfg.seed)
    noise_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, NOISE_STREAM]))
    k, s = model.latent_dim, model.bound.mc_samples

    metrics_path = out / "metrics.csv"
    timing_path = out / "timing.csv"
    metrics = open(metrics_path, "w", newline="")
    timing = open(timing_path, "w", newline="")
    metrics.write(",".join(METRIC_COLUMNS) + "\n")
    timing.write("epoch,wall_seconds\n")

    def emit(row: dict, wall: float) -> None:
        row["wall_seconds"] = _fmt(wall) if cfg.wall_clock_in_metrics else ""
        metrics.write(",".join(_fmt(row[c]) for c in METRIC_COLUMNS) + "\n")
        metrics.flush()
        timing.write(f"{row['epoch']},{_fmt(wall)}\n")
        timing.flush()

    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            for b, x in enumerate(batches(train_ds, plan, epoch)):
                noise = noise_rng.standard_normal((s, len(x), k))
                with ad.Tape() as tape:
                    terms = _forward(params, model, x, noise)
                    loss = ad.negate(terms.total)
                bound = float(terms.total.data)
                reason = None
                if not math.isfinite(bound):
                    reason = "non-finite bound"
                else:
                    grads = tape.gradient(loss, params.tensors())
                    try:
                        adam_step(opt, params.tensors(), grads)
                    except NonFiniteGradientError as exc:
                        reason = str(exc)
                if reason is not None:
                    extra = {
                        "batch_bound": bound,
                        "batch_recon": float(terms.reconstruction.data),
                        "batch_div": float(terms.divergence.data),
                        "optimizer_step": opt.step,
                    }
                    row = dict(
                        epoch=epoch,
                        train_bound=bound,
                        test_bound=math.nan,
                        train_recon=extra["batch_recon"],
                        train_div=extra["batch_div"],
                    )
                    row["sigma_frac_below_1e-3"] = math.nan
                    row["nonfinite_flag"] = 1
                    emit(row, time.perf_counter() - t0)
                    dump = _dump(out, epoch, b, reason, params, extra)
                    raise TrainingAborted(f"epoch {epoch} batch {b}: {reason}", dump)

            tr = evaluate(params, model, train_ds, cfg.batch_size, cfg.seed)
            te = evaluate(params, model, test_ds, cfg.batch_size, cfg.seed)
            row = dict(epoch=epoch, train_bound=tr.bound, test_bound=te.bound, train_recon=tr.recon, train_div=tr.div)
            row["sigma_frac_below_1e-3"] = tr.histogram.frac_below
            row["nonfinite_flag"] = int(tr.nonfinite or te.nonfinite)
            if cfg.histograms:
                (out / "histograms").mkdir(exist_ok=True)
                _write_hist(out / "histograms" / f"epoch_{epoch:04d}.csv", tr.histogram)
            if cfg.checkpoint_every > 0 and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
                save_checkpoint(out / "checkpoint.ivae", model, params, opt, epoch)
            emit(row, time.perf_counter() - t0)
            log.info("epoch %d train %.6g test %.6g", epoch, tr.bound, te.bound)
            if tr.histogram.extreme_log_sigma:
                log.warning("epoch %d: %d decoder |log sigma| > 30", epoch, tr.histogram.extreme_log_sigma)
            if row["nonfinite_flag"]:
                dump = _dump(out, epoch, -1, "non-finite evaluation", params, {"train_bound": tr.bound, "test_bound": te.bound})
                raise TrainingAborted(f"epoch {epoch}: non-finite evaluation", dump)
    finally:
        metrics.close()
        timing.close()
    return metrics_path


def _forward(params, model, x, noise):
    q = encode(params, model, x)
    return evaluate_bound(x, q, lambda z: decode(params, model, z), model.bound, noise)


def with_bound(model: ModelConfig, **changes) -> ModelConfig:
    """Copy of ``model`` with some bound settings replaced."""
    return replace(model, bound=replace(model.bound, **changes))


def load_trained(cfg: RunConfig, checkpoint) -> tuple[VaeParams, AdamState, int]:
    return load_checkpoint(checkpoint, cfg.model, lr=cfg.lr)

