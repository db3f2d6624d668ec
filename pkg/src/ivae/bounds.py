"""Training objectives: ELBO, the interval ELBO and the interval Renyi bound.

All three take a batch ``x`` of shape ``[B, n]`` (or a single ``[n]`` example),
the encoder distribution ``q`` over ``[B, k]``, a ``decode`` callable mapping a
latent tensor ``[S, B, k]`` to a :class:`DiagGaussian` over ``[S, B, n]``, and
standard-normal ``noise`` of shape ``[S, B, k]``.  Scalars in the returned
:class:`BoundTerms` are batch means and stay on the tape.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussian import (
    Box,
    DiagGaussian,
    inverse_power_log_integrals,
    kl_to_std_normal,
    log_density,
    log_interval_likelihood,
    sample_reparam,
    std_normal_log_density,
)
from .special import log_sum_exp

__all__ = [
    "BoundKind",
    "BoundConfig",
    "BoundTerms",
    "EvidenceEstimate",
    "elbo",
    "ielbo",
    "irelbo",
    "evaluate_bound",
    "mc_log_interval_evidence",
    "irelbo_standard_error",
]

Decoder = Callable[[Tensor], DiagGaussian]


class BoundKind(str, enum.Enum):
    ELBO = "elbo"
    IELBO = "ielbo"
    IRELBO = "irelbo"


@dataclass(frozen=True)
class BoundConfig:
    """Objective selection; ``epsilon`` is the half-width of each pixel interval."""

    kind: BoundKind = BoundKind.IELBO
    epsilon: float = 0.01
    alpha: float = 1.5
    mc_samples: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", BoundKind(self.kind))
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.kind is not BoundKind.ELBO and not self.epsilon > 0:
            raise ValueError("interval bounds need epsilon > 0")
        if self.kind is BoundKind.IRELBO and not 1.0 < self.alpha < 2.0:
            raise ValueError("IRELBO needs 1 < alpha < 2")


@dataclass
class BoundTerms:
    reconstruction: Tensor
    divergence: Tensor
    total: Tensor
    per_example: np.ndarray
    per_sample_log_weights: np.ndarray | None = None


def _batch_mean(t: Tensor) -> Tensor:
    return ad.mean(t) if t.ndim else t


def _decode_samples(q: DiagGaussian, decode: Decoder, noise) -> tuple[Tensor, DiagGaussian]:
    noise = np.asarray(noise, np.float64)
    if noise.ndim == q.mu.ndim:
        noise = noise[None]
    z = sample_reparam(q, noise)
    return z, decode(z)


def _kl_bound(x, q, decode, noise, log_lik) -> BoundTerms:
    _, dist = _decode_samples(q, decode, noise)
    recon = ad.mean(log_lik(dist, x), axis=0)
    div = kl_to_std_normal(q)
    total = ad.sub(recon, div)
    return BoundTerms(_batch_mean(recon), _batch_mean(div), _batch_mean(total), np.array(total.data))


def elbo(x, q: DiagGaussian, decode: Decoder, cfg: BoundConfig, noise) -> BoundTerms:
    """Standard ELBO with a Gaussian log-density reconstruction term."""
    x = np.asarray(x, np.float64)
    return _kl_bound(x, q, decode, noise, lambda d, x: ad.sum(log_density(d, x), axis=-1))


def ielbo(x, q: DiagGaussian, decode: Decoder, cfg: BoundConfig, noise) -> BoundTerms:
    """ELBO with log P(x - eps <= X <= x + eps) in place of the log-density."""
    box = Box.around(x, cfg.epsilon)
    return _kl_bound(x, q, decode, noise, lambda d, _: log_interval_likelihood(d, box))


def irelbo(x, q: DiagGaussian, decode: Decoder, cfg: BoundConfig, noise) -> BoundTerms:
    """Interval Renyi bound ``(log V - log mean_s h_s) / (alpha - 1)``.

    ``log h = (2 - alpha) * sum_j log int_box p(x_j|z)^(-(alpha-1)/(2-alpha))
    + (alpha - 1) * (log q(z|x) - log p(z))``, with V the box volume.
    """
    alpha = cfg.alpha
    if not 1.0 < alpha < 2.0:
        raise ValueError("IRELBO needs 1 < alpha < 2")
    box = Box.around(x, cfg.epsilon)
    z, dist = _decode_samples(q, decode, noise)
    log_int = ad.sum(inverse_power_log_integrals(dist, box.lo, box.hi, alpha), axis=-1)
    log_q = ad.sum(log_density(q, z), axis=-1)
    log_p = ad.sum(std_normal_log_density(z), axis=-1)
    lik_part = ad.scale(log_int, 2.0 - alpha)
    ratio_part = ad.scale(ad.sub(log_q, log_p), alpha - 1.0)
    log_h = ad.add(lik_part, ratio_part)
    n_samples = log_h.shape[0]
    log_mean_h = ad.sub(ad.logsumexp(log_h, axis=0), math.log(n_samples))
    total = ad.scale(ad.sub(box.log_volume(), log_mean_h), 1.0 / (alpha - 1.0))
    return BoundTerms(
        reconstruction=_batch_mean(ad.mean(lik_part, axis=0)),
        divergence=_batch_mean(ad.mean(ratio_part, axis=0)),
        total=_batch_mean(total),
        per_example=np.array(total.data),
        per_sample_log_weights=np.array(log_h.data),
    )


_BOUNDS = {BoundKind.ELBO: elbo, BoundKind.IELBO: ielbo, BoundKind.IRELBO: irelbo}


def evaluate_bound(x, q: DiagGaussian, decode: Decoder, cfg: BoundConfig, noise) -> BoundTerms:
    return _BOUNDS[cfg.kind](x, q, decode, cfg, noise)


def irelbo_standard_error(log_weights, alpha: float) -> np.ndarray:
    """Delta-method standard error of the IRELBO estimate from its log h draws.

    ``log_weights`` has samples on axis 0; one value per example is returned.
    """
    lw = np.asarray(log_weights, np.float64)
    n = lw.shape[0]
    w = np.exp(lw - np.max(lw, axis=0))
    rel_sd = np.std(w, axis=0, ddof=1 if n > 1 else 0) / np.mean(w, axis=0)
    return rel_sd / math.sqrt(n) / (alpha - 1.0)


@dataclass(frozen=True)
class EvidenceEstimate:
    value: float
    standard_error: float


def mc_log_interval_evidence(x, prior: DiagGaussian, decode: Decoder, epsilon: float, n_draws: int, noise) -> EvidenceEstimate:
    """Prior-sampling estimate of ``log P(x - eps <= X <= x + eps)`` for one example.

    ``noise`` is either an array of standard-normal draws ``[n_draws, k]`` or a
    numpy Generator.  The mean of the weights is unbiased, so by Jensen the log
    of it is biased downward, by roughly half the squared relative standard
    error.  The standard error is the delta-method value.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    k = prior.shape[-1]
    if isinstance(noise, np.random.Generator):
        noise = noise.standard_normal((n_draws, k))
    noise = np.asarray(noise, np.float64)[:n_draws]
    box = Box.around(x, epsilon)
    with ad.no_tape():
        z = sample_reparam(prior, noise)
        log_w = log_interval_likelihood(decode(z), box).data
    value = log_sum_exp(log_w) - math.log(n_draws)
    if n_draws == 1:
        return EvidenceEstimate(float(log_w[0]), math.inf)
    w = np.exp(log_w - np.max(log_w))
    se = float(np.std(w, ddof=1) / np.mean(w) / math.sqrt(n_draws))
    return EvidenceEstimate(float(value), se)
