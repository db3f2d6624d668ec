"""Binary PGM (P5) output and the original/mean/sample reconstruction grid."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .data import to_bytes

__all__ = ["write_pgm", "read_pgm", "reconstruction_grid"]


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as ``P5`` with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM output needs a 2-D uint8 array")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read the P5 files written by :func:`write_pgm` (no comment lines)."""
    blob = Path(path).read_bytes()
    magic, dims, maxval, rest = blob.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P5 image")
    w, h = map(int, dims.split())
    return np.frombuffer(rest, dtype=np.uint8, count=w * h).reshape(h, w)


def reconstruction_grid(originals, mean_recon, sample_recon, columns: int = 10) -> np.ndarray:
    """Tile images as repeating row triples: originals, q-mean path, q-sample path.

    Inputs are ``[count, side*side]`` arrays in [0.001, 0.999]; empty cells
    in the last row group are black.
    """
    originals = np.asarray(originals)
    count, n = originals.shape
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"{n} pixels is not a square image")
    groups = math.ceil(count / columns)
    grid = np.zeros((3 * groups * side, columns * side), dtype=np.uint8)
    for i in range(count):
        g, c = divmod(i, columns)
        for r, imgs in enumerate((originals, mean_recon, sample_recon)):
            top = (3 * g + r) * side
            grid[top : top + side, c * side : (c + 1) * side] = to_bytes(imgs[i]).reshape(side, side)
    return grid
