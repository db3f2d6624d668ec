"""Diagonal Gaussians over tensors: sampling, densities, KL and box probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .special import LOG_SQRT_2PI, inverse_power_terms, std_interval_terms

__all__ = [
    "DiagGaussian",
    "Box",
    "sample_reparam",
    "log_density",
    "kl_to_std_normal",
    "log_interval_likelihood",
    "interval_log_probs",
    "inverse_power_log_integrals",
    "std_normal_log_density",
]


@dataclass(frozen=True)
class DiagGaussian:
    """Independent Gaussians, one per trailing-axis entry.

    Stored by mean and log standard deviation; the networks emit log sigma
    directly, so ``sigma = exp(log_sigma)`` can underflow to 0 without the
    log being lost.
    """

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} != sigma shape {self.log_sigma.shape}")

    @classmethod
    def from_sigma(cls, mu, sigma) -> "DiagGaussian":
        return cls(ad.as_tensor(mu), ad.log(sigma))

    @property
    def sigma(self) -> Tensor:
        return ad.exp(self.log_sigma)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape


@dataclass(frozen=True)
class Box:
    """Per-dimension closed interval ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, np.float64)
        hi = np.asarray(self.hi, np.float64)
        if lo.shape != hi.shape:
            raise ValueError("box endpoints differ in shape")
        if np.any(~(lo < hi)):
            raise ValueError("box requires lo < hi in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, x, epsilon: float) -> "Box":
        """``[x - epsilon, x + epsilon]`` with no clamping to the data range."""
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        x = np.asarray(x.data if isinstance(x, Tensor) else x, np.float64)
        return cls(x - epsilon, x + epsilon)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.lo.shape

    def log_volume(self) -> np.ndarray:
        """Sum over the last axis of log widths."""
        return np.sum(np.log(self.hi - self.lo), axis=-1)


def sample_reparam(g: DiagGaussian, noise) -> Tensor:
    """``mu + sigma * noise``; noise may carry extra leading sample axes."""
    noise = np.asarray(noise, np.float64)
    if noise.shape[noise.ndim - g.mu.ndim :] != g.shape:
        raise ValueError(f"noise shape {noise.shape} does not end with {g.shape}")
    return ad.add(ad.mul(noise, g.sigma), g.mu)


def log_density(g: DiagGaussian, x) -> Tensor:
    """Elementwise log N(x; mu, sigma^2)."""
    resid = ad.mul(ad.sub(x, g.mu), ad.exp(ad.negate(g.log_sigma)))
    return ad.sub(ad.scale(ad.square(resid), -0.5), ad.add(g.log_sigma, LOG_SQRT_2PI))


def std_normal_log_density(z) -> Tensor:
    """Elementwise log N(z; 0, 1)."""
    return ad.sub(ad.scale(ad.square(z), -0.5), LOG_SQRT_2PI)


def kl_to_std_normal(g: DiagGaussian) -> Tensor:
    """KL(g || N(0, I)) summed over the last axis."""
    mu2 = ad.square(g.mu)
    var = ad.exp(ad.scale(g.log_sigma, 2.0))
    per_dim = ad.sub(ad.add(mu2, var), ad.add(ad.scale(g.log_sigma, 2.0), 1.0))
    return ad.scale(ad.sum(per_dim, axis=-1), 0.5)


def interval_log_probs(g: DiagGaussian, lo, hi) -> Tensor:
    """Elementwise log P(lo <= X <= hi) with analytic endpoint gradients."""
    mu = g.mu.data
    log_sigma = g.log_sigma.data
    with np.errstate(over="ignore", invalid="ignore"):
        inv_sigma = np.exp(-log_sigma)
        lo_std = (lo - mu) * inv_sigma
        hi_std = (hi - mu) * inv_sigma
    logp, ra, rb, lo_std, hi_std = std_interval_terms(lo_std, hi_std)

    def vjp(grad):
        with np.errstate(over="ignore", invalid="ignore"):
            dmu = np.where(ra == rb, 0.0, (ra - rb) * inv_sigma)
        dlog_sigma = lo_std * ra - hi_std * rb
        return grad * dmu, grad * dlog_sigma

    return ad.custom_op(logp, (g.mu, g.log_sigma), vjp)


def log_interval_likelihood(g: DiagGaussian, box: Box) -> Tensor:
    """log P(X in box), summed over the last axis; always <= 0."""
    if g.shape[g.mu.ndim - box.lo.ndim :] != box.shape:
        raise ValueError(f"box shape {box.shape} does not match distribution shape {g.shape}")
    return ad.sum(interval_log_probs(g, box.lo, box.hi), axis=-1)


def inverse_power_log_integrals(g: DiagGaussian, lo, hi, alpha: float) -> Tensor:
    """Elementwise log of the integral of N(x; mu, sigma^2)^((1-alpha)/(2-alpha)) over [lo, hi]."""
    val, dmu, dls = inverse_power_terms(g.mu.data, g.log_sigma.data, lo, hi, alpha)
    return ad.custom_op(val, (g.mu, g.log_sigma), lambda grad: (grad * dmu, grad * dls))
