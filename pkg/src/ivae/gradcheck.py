"""Finite-difference verification of every objective's parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .bounds import BoundConfig, BoundKind
from .model import ModelConfig, forward, init_params

__all__ = ["BlockReport", "toy_config", "check_gradients", "run_suite", "relative_error"]

# denominators below this make the relative error an absolute one
REL_FLOOR = 1e-6


@dataclass(frozen=True)
class BlockReport:
    bound: str
    block: str
    max_rel_err: float
    max_abs_err: float


def toy_config(bound: BoundConfig) -> ModelConfig:
    """Reduced net: 4 pixels, one hidden layer of 5 ELUs, 2 latents."""
    return ModelConfig(input_dim=4, hidden=(5,), activation="elu", latent_dim=2, bound=bound, bias_init=0.1)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)


def check_gradients(
    cfg: ModelConfig,
    seed: int = 0,
    batch: int = 3,
    h: float = 1e-6,
    corrupt: Callable[[list[np.ndarray]], list[np.ndarray]] | None = None,
) -> list[BlockReport]:
    """Compare tape gradients of the batch-mean bound with central differences."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    for t in params.values():
        # move biases off their constant init so every block sees a generic point
        t.data += rng.normal(0.0, 0.3, size=t.shape)
    x = rng.uniform(0.001, 0.999, size=(batch, cfg.input_dim))
    noise = rng.standard_normal((cfg.bound.mc_samples, batch, cfg.latent_dim))

    def loss_value() -> float:
        with ad.no_tape():
            return float(forward(params, cfg, x, noise).total.data)

    with ad.Tape() as tape:
        total = forward(params, cfg, x, noise).total
    grads = tape.gradient(total, params.tensors())
    if corrupt is not None:
        grads = corrupt(grads)

    reports = []
    for (name, t), g in zip(params.items(), grads):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = loss_value()
            flat[i] = old - h
            fm = loss_value()
            flat[i] = old
            nflat[i] = (fp - fm) / (2.0 * h)
        reports.append(
            BlockReport(
                cfg.bound.kind.value,
                name,
                float(np.max(relative_error(g, numeric))),
                float(np.max(np.abs(g - numeric))),
            )
        )
    return reports


def default_bounds() -> list[BoundConfig]:
    return [
        BoundConfig(BoundKind.ELBO, mc_samples=3),
        BoundConfig(BoundKind.IELBO, epsilon=0.01, mc_samples=3),
        BoundConfig(BoundKind.IRELBO, epsilon=0.01, alpha=1.5, mc_samples=3),
    ]


def run_suite(seed: int = 0, corrupt=None) -> list[BlockReport]:
    reports = []
    for bound in default_bounds():
        reports += check_gradients(toy_config(bound), seed=seed, corrupt=corrupt)
    return reports
