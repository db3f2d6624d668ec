"""Decoder sigma/mean histograms and reconstruction-vs-divergence tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundTerms

__all__ = [
    "SIGMA_EDGES",
    "COLLAPSE_THRESHOLD",
    "SigmaHistogram",
    "UnbalanceRecord",
    "record_terms",
    "LOG_SIGMA_ALERT",
]

# two bins per decade over [1e-12, 1e2]; out-of-range values land in the end bins
_LOG10_LO, _BINS_PER_DECADE = -12.0, 2.0
SIGMA_EDGES = np.logspace(-12, 2, 29)
MEAN_EDGES = np.linspace(0.0, 1.0, 101)
COLLAPSE_THRESHOLD = 1e-3
LOG_SIGMA_ALERT = 30.0


@dataclass
class SigmaHistogram:
    """Accumulated decoder sigma and mean histograms with fixed bin edges."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros(len(SIGMA_EDGES) - 1, dtype=np.int64))
    mean_counts: np.ndarray = field(default_factory=lambda: np.zeros(len(MEAN_EDGES) - 1, dtype=np.int64))
    below: int = 0
    extreme_log_sigma: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def frac_below(self) -> float:
        """Fraction of observed sigmas under 1e-3 (0 before any observation)."""
        return self.below / self.total if self.total else 0.0

    def observe_decoder(self, dist) -> None:
        """Add every entry of a decoder DiagGaussian."""
        log_sigma = np.asarray(dist.log_sigma.data, np.float64).ravel()
        mu = np.asarray(dist.mu.data, np.float64).ravel()
        # bin in log10 space so sigmas that underflow to 0 still count
        log10 = log_sigma / math.log(10.0)
        idx = np.floor((log10 - _LOG10_LO) * _BINS_PER_DECADE)
        idx = np.clip(np.nan_to_num(idx, nan=0.0), 0, len(self.counts) - 1).astype(np.int64)
        self.counts += np.bincount(idx, minlength=len(self.counts))
        self.below += int(np.count_nonzero(log_sigma < math.log(COLLAPSE_THRESHOLD)))
        self.extreme_log_sigma += int(np.count_nonzero(np.abs(log_sigma) > LOG_SIGMA_ALERT))
        midx = np.clip(np.floor(mu * (len(MEAN_EDGES) - 1)), 0, len(self.mean_counts) - 1).astype(np.int64)
        self.mean_counts += np.bincount(midx, minlength=len(self.mean_counts))

    def rows(self) -> list[tuple[float, float, int]]:
        """(lower edge, upper edge, count) per sigma bin."""
        return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(SIGMA_EDGES[:-1], SIGMA_EDGES[1:], self.counts)]


@dataclass(frozen=True)
class UnbalanceRecord:
    epoch: int
    reconstruction: float
    divergence: float
    ratio: float
    nonfinite: bool


def record_terms(terms: BoundTerms, epoch: int) -> UnbalanceRecord:
    """Magnitudes of the two bound terms and their ratio (divergence floored at 1e-12)."""
    rec = abs(float(terms.reconstruction.data))
    div = abs(float(terms.divergence.data))
    nonfinite = not all(math.isfinite(float(t.data)) for t in (terms.total, terms.reconstruction, terms.divergence))
    return UnbalanceRecord(epoch, rec, div, rec / max(div, 1e-12), nonfinite)
