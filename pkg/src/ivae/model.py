"""Encoder/decoder MLPs, initialization and the IVAE1 checkpoint format.

Checkpoint layout (all integers and floats little-endian)::

    b"IVAE1"                 5-byte magic
    sha256(config echo)      32 bytes, see ModelConfig.digest
    uint64 epoch
    uint64 optimizer step
    float64[...] parameters  in ModelConfig.param_specs order
    float64[...] Adam first moments, same order
    float64[...] Adam second moments, same order

Parameter order: for each encoder hidden layer i ``enc.i.W, enc.i.b``, then
``enc.mu.W, enc.mu.b, enc.logsigma.W, enc.logsigma.b``, then the decoder in
the same pattern with prefix ``dec``.  Weights are ``[fan_in, fan_out]``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bounds import BoundConfig, BoundKind, BoundTerms, evaluate_bound
from .gaussian import DiagGaussian, sample_reparam
from .optim import AdamState

__all__ = [
    "ModelConfig",
    "VaeParams",
    "PRESETS",
    "init_params",
    "encode",
    "decode",
    "reconstruct",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointMismatchError",
]

MAGIC = b"IVAE1"
INIT_STREAM = 0

_ACTIVATIONS = {"elu": ad.elu, "relu": ad.relu}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 784
    hidden: tuple[int, ...] = (200, 200)
    activation: str = "elu"
    latent_dim: int = 25
    bound: BoundConfig = field(default_factory=BoundConfig)
    bias_init: float = 0.1
    init: str = "xavier"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.latent_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.init != "xavier":
            raise ValueError("only xavier initialization is supported")

    def param_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        specs = []
        for prefix, n_in, n_out in (("enc", self.input_dim, self.latent_dim), ("dec", self.latent_dim, self.input_dim)):
            width = n_in
            for i, h in enumerate(self.hidden):
                specs += [(f"{prefix}.{i}.W", (width, h)), (f"{prefix}.{i}.b", (h,))]
                width = h
            for head in ("mu", "logsigma"):
                specs += [(f"{prefix}.{head}.W", (width, n_out)), (f"{prefix}.{head}.b", (n_out,))]
        return specs

    def echo(self) -> list[str]:
        b = self.bound
        return [
            f"input_dim={self.input_dim}",
            f"hidden={','.join(map(str, self.hidden))}",
            f"activation={self.activation}",
            f"latent_dim={self.latent_dim}",
            f"init={self.init}",
            f"bias_init={self.bias_init!r}",
            f"bound={b.kind.value}",
            f"epsilon={b.epsilon!r}",
            f"alpha={b.alpha!r}",
            f"mc_samples={b.mc_samples}",
        ]

    def digest(self) -> bytes:
        return hashlib.sha256("\n".join(self.echo()).encode()).digest()


PRESETS = {
    "paper-ielbo": ModelConfig(
        hidden=(200, 200),
        activation="elu",
        latent_dim=25,
        bound=BoundConfig(BoundKind.IELBO, epsilon=0.01, mc_samples=10),
        bias_init=0.1,
    ),
    # an integration interval of length 1 is full width 2 * epsilon
    "paper-irelbo": ModelConfig(
        hidden=(400,),
        activation="relu",
        latent_dim=20,
        bound=BoundConfig(BoundKind.IRELBO, epsilon=0.5, alpha=1.5, mc_samples=1),
        bias_init=0.0,
    ),
}


class VaeParams(dict):
    """Ordered mapping from parameter name to a gradient-tracked Tensor."""

    def tensors(self) -> list[Tensor]:
        return list(self.values())

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}


def init_params(cfg: ModelConfig, seed: int) -> VaeParams:
    """Glorot-uniform weights, constant ``cfg.bias_init`` biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, INIT_STREAM]))
    params = VaeParams()
    for name, shape in cfg.param_specs():
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        else:
            data = np.full(shape, cfg.bias_init)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _affine(h: Tensor, params: VaeParams, name: str) -> Tensor:
    return ad.add(ad.matmul(h, params[f"{name}.W"]), params[f"{name}.b"])


def _mlp(params: VaeParams, cfg: ModelConfig, prefix: str, x: Tensor) -> tuple[Tensor, Tensor]:
    act = _ACTIVATIONS[cfg.activation]
    h = x
    for i in range(len(cfg.hidden)):
        h = act(_affine(h, params, f"{prefix}.{i}"))
    return _affine(h, params, f"{prefix}.mu"), _affine(h, params, f"{prefix}.logsigma")


def _flatten_leading(x: Tensor, width: int, expected: int) -> tuple[Tensor, tuple[int, ...]]:
    if x.shape[-1] != expected:
        raise ValueError(f"expected trailing dimension {expected}, got shape {x.shape}")
    lead = x.shape[:-1]
    return ad.reshape(x, (-1, width)), lead


def encode(params: VaeParams, cfg: ModelConfig, x) -> DiagGaussian:
    """q(z|x): affine mean head, exponentiated log-sigma head."""
    x = ad.as_tensor(x)
    flat, lead = _flatten_leading(x, cfg.input_dim, cfg.input_dim)
    mu, log_sigma = _mlp(params, cfg, "enc", flat)
    shape = lead + (cfg.latent_dim,)
    return DiagGaussian(ad.reshape(mu, shape), ad.reshape(log_sigma, shape))


def decode(params: VaeParams, cfg: ModelConfig, z) -> DiagGaussian:
    """p(x|z): sigmoid mean head, exponentiated log-sigma head."""
    z = ad.as_tensor(z)
    flat, lead = _flatten_leading(z, cfg.latent_dim, cfg.latent_dim)
    logits, log_sigma = _mlp(params, cfg, "dec", flat)
    shape = lead + (cfg.input_dim,)
    return DiagGaussian(ad.reshape(ad.sigmoid(logits), shape), ad.reshape(log_sigma, shape))


def forward(params: VaeParams, cfg: ModelConfig, x, noise) -> BoundTerms:
    """Encode, sample and evaluate the configured bound on batch ``x``."""
    q = encode(params, cfg, x)
    return evaluate_bound(np.asarray(x), q, lambda z: decode(params, cfg, z), cfg.bound, noise)


def reconstruct(params: VaeParams, cfg: ModelConfig, x, mode: str = "mean_of_q", noise=None) -> np.ndarray:
    """Decoder mean at the q-mean latent, or at one reparameterized draw."""
    with ad.no_tape():
        q = encode(params, cfg, x)
        if mode == "mean_of_q":
            z = q.mu
        elif mode == "sample_of_q":
            if noise is None:
                raise ValueError("sample_of_q needs noise")
            z = sample_reparam(q, noise)
        else:
            raise ValueError(f"unknown reconstruction mode {mode!r}")
        return decode(params, cfg, z).mu.data.copy()


class CheckpointError(IOError):
    """A checkpoint could not be read."""


class CheckpointFormatError(CheckpointError):
    """Wrong magic/version or a truncated payload."""


class CheckpointMismatchError(CheckpointError):
    """The checkpoint was written for a different model configuration."""


def save_checkpoint(path, cfg: ModelConfig, params: VaeParams, opt: AdamState, epoch: int) -> None:
    parts = [MAGIC, cfg.digest(), struct.pack("<QQ", epoch, opt.step)]
    for group in (params.tensors(), opt.m, opt.v):
        for arr in group:
            data = arr.data if isinstance(arr, Tensor) else arr
            parts.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, cfg: ModelConfig, lr: float = 1e-3) -> tuple[VaeParams, AdamState, int]:
    """Read a checkpoint written for ``cfg``; returns params, optimizer state, epoch."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{path}: not an IVAE1 checkpoint (magic {blob[:5]!r})")
    off = len(MAGIC)
    if blob[off : off + 32] != cfg.digest():
        raise CheckpointMismatchError(f"{path}: checkpoint was written for a different model configuration")
    off += 32
    specs = cfg.param_specs()
    sizes = [int(np.prod(s)) for _, s in specs]
    expected = off + 16 + 3 * 8 * sum(sizes)
    if len(blob) != expected:
        raise CheckpointFormatError(f"{path}: size {len(blob)} bytes, expected {expected}")
    epoch, step = struct.unpack_from("<QQ", blob, off)
    off += 16
    groups = []
    for _ in range(3):
        arrays = []
        for (_, shape), n in zip(specs, sizes):
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
            off += 8 * n
        groups.append(arrays)
    params = VaeParams((name, Tensor(a, requires_grad=True)) for (name, _), a in zip(specs, groups[0]))
    opt = AdamState(lr=lr, step=step, m=groups[1], v=groups[2])
    return params, opt, epoch
