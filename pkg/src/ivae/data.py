"""IDX image files, pixel rescaling, batching and a synthetic stroke dataset."""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "IdxError",
    "IdxHeaderError",
    "IdxFormatError",
    "IdxSizeError",
    "Dataset",
    "BatchPlan",
    "load_idx",
    "write_idx",
    "rescale",
    "batches",
    "synth_high_contrast",
    "to_bytes",
    "PIXEL_LO",
    "PIXEL_HI",
]

IDX_UBYTE_3D = 0x00000803
PIXEL_LO = 0.001
PIXEL_HI = 0.999
SHUFFLE_STREAM = 2
SYNTH_STREAM = 3
# refuse headers promising more than this many payload bytes
_MAX_PAYLOAD = 1 << 34


class IdxError(ValueError):
    pass


class IdxHeaderError(IdxError):
    """File too short to hold the 16-byte header."""


class IdxFormatError(IdxError):
    """Magic number is not an unsigned-byte 3-D tensor."""


class IdxSizeError(IdxError):
    """Declared dimensions overflow or disagree with the payload length."""


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def load_idx(path) -> np.ndarray:
    """Read an IDX ubyte image file into a ``[count, rows * cols]`` uint8 array.

    Gzipped files (``.gz``) are decompressed transparently.
    """
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise IdxHeaderError(f"{path}: {len(raw)} bytes, shorter than the 16-byte IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_UBYTE_3D:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_UBYTE_3D:08x}")
    size = count * rows * cols
    if size > _MAX_PAYLOAD:
        raise IdxSizeError(f"{path}: dimensions {count}x{rows}x{cols} overflow the payload limit")
    if len(raw) - 16 != size:
        raise IdxSizeError(f"{path}: payload is {len(raw) - 16} bytes, header declares {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols).copy()


def write_idx(path, images: np.ndarray) -> None:
    """Write ``[count, rows, cols]`` uint8 images as an IDX file."""
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_UBYTE_3D, count, rows, cols) + images.tobytes())


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    source: str = ""

    def __post_init__(self):
        if self.images.ndim != 2 or len(self.images) == 0:
            raise ValueError("dataset needs a non-empty [count, pixels] array")
        if self.images.min() < PIXEL_LO or self.images.max() > PIXEL_HI:
            raise ValueError("pixels must lie in [0.001, 0.999]")

    @property
    def count(self) -> int:
        return len(self.images)

    @property
    def n_pixels(self) -> int:
        return self.images.shape[1]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.images.tobytes()).hexdigest()[:16]

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= self.count:
            return self
        return Dataset(self.images[:n], f"{self.source}[:{n}]")


def rescale(raw, source: str = "") -> Dataset:
    """Map bytes affinely onto [0.001, 0.999]: 0 -> 0.001, 255 -> 0.999."""
    raw = np.asarray(raw)
    if raw.min() < 0 or raw.max() > 255:
        raise ValueError("pixel bytes must lie in [0, 255]")
    x = PIXEL_LO + raw.astype(np.float64) * ((PIXEL_HI - PIXEL_LO) / 255.0)
    # pin the endpoints against rounding
    x = np.where(raw == 255, PIXEL_HI, x)
    return Dataset(np.clip(x, PIXEL_LO, PIXEL_HI), source)


def to_bytes(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rescale`, rounding half to even and clipping to [0, 255]."""
    b = np.rint((np.asarray(x, np.float64) - PIXEL_LO) * (255.0 / (PIXEL_HI - PIXEL_LO)))
    return np.clip(b, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def batches(ds: Dataset, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    """Shuffled batches for ``epoch``; the permutation depends only on (seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([plan.seed, SHUFFLE_STREAM, epoch]))
    order = rng.permutation(ds.count)
    return [ds.images[order[i : i + plan.batch_size]] for i in range(0, ds.count, plan.batch_size)]


def synth_high_contrast(count: int, n_pixels: int, seed: int) -> Dataset:
    """Images of a few thick random strokes on a dark background.

    Pixels sit at 0.001 or 0.999 with a thin band of intermediate values on
    stroke edges and +-0.01 jitter, mimicking continuous MNIST's contrast.
    Square pixel counts are laid out as a 2-D grid; otherwise as a 1-D strip.
    """
    if count < 1 or n_pixels < 1:
        raise ValueError("count and n_pixels must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, SYNTH_STREAM]))
    side = int(round(np.sqrt(n_pixels)))
    if side * side == n_pixels:
        rr, cc = np.mgrid[0:side, 0:side]
        coords = np.stack([rr.ravel(), cc.ravel()], axis=1) / max(side - 1, 1)
    else:
        coords = np.stack([np.linspace(0, 1, n_pixels), np.full(n_pixels, 0.5)], axis=1)
    images = np.empty((count, n_pixels))
    for i in range(count):
        ink = np.zeros(n_pixels)
        for _ in range(rng.integers(1, 4)):
            p0, p1 = rng.uniform(0.15, 0.85, size=(2, 2))
            d = p1 - p0
            t = np.clip(((coords - p0) @ d) / max(d @ d, 1e-12), 0.0, 1.0)
            dist = np.linalg.norm(coords - (p0 + t[:, None] * d), axis=1)
            width = rng.uniform(0.05, 0.09)
            # hard core with a one-pixel soft edge
            ink = np.maximum(ink, np.clip((width - dist) * side + 0.5, 0.0, 1.0))
        img = PIXEL_LO + (PIXEL_HI - PIXEL_LO) * ink
        img = img + rng.uniform(-0.01, 0.01, size=n_pixels)
        images[i] = np.clip(img, PIXEL_LO, PIXEL_HI)
    return Dataset(images, f"synthetic(count={count}, n_pixels={n_pixels}, seed={seed})")
