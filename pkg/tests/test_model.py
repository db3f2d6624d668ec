import math

import numpy as np
import pytest

from ivae import autodiff as ad
from ivae.autodiff import Tape, Tensor
from ivae.bounds import BoundConfig, BoundKind
from ivae.gaussian import Box, kl_to_std_normal, log_interval_likelihood
from ivae.model import (
    PRESETS,
    CheckpointError,
    CheckpointFormatError,
    CheckpointMismatchError,
    ModelConfig,
    decode,
    encode,
    forward,
    init_params,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
)
from ivae.optim import AdamState, adam_step
from oracles import finite_difference

SMALL = ModelConfig(input_dim=6, hidden=(5, 4), activation="elu", latent_dim=3, bound=BoundConfig(BoundKind.IELBO, mc_samples=2))


def zeroed(cfg):
    params = init_params(cfg, 0)
    for t in params.values():
        t.data[...] = 0.0
    return params


def test_param_order_and_shapes():
    names = [n for n, _ in SMALL.param_specs()]
    assert names[:6] == ["enc.0.W", "enc.0.b", "enc.1.W", "enc.1.b", "enc.mu.W", "enc.mu.b"]
    assert names[6:8] == ["enc.logsigma.W", "enc.logsigma.b"]
    assert names[8] == "dec.0.W"
    assert dict(SMALL.param_specs())["dec.mu.W"] == (4, 6)


def test_init_is_deterministic_and_bounded():
    cfg = PRESETS["paper-ielbo"]
    a, b = init_params(cfg, 3), init_params(cfg, 3)
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)
    assert init_params(cfg, 4)["enc.0.W"].data.tobytes() != a["enc.0.W"].data.tobytes()
    limit = math.sqrt(6.0 / (784 + 200))
    w = a["enc.0.W"].data
    assert w.shape == (784, 200)
    assert np.abs(w).max() <= limit
    assert np.abs(w).max() > 0.99 * limit
    for name, t in a.items():
        if name.endswith(".b"):
            assert np.all(t.data == 0.1)


def test_presets():
    ie, ir = PRESETS["paper-ielbo"], PRESETS["paper-irelbo"]
    assert (ie.hidden, ie.activation, ie.latent_dim) == ((200, 200), "elu", 25)
    assert (ie.bound.kind, ie.bound.epsilon, ie.bound.mc_samples) == (BoundKind.IELBO, 0.01, 10)
    assert (ir.hidden, ir.activation, ir.latent_dim) == ((400,), "relu", 20)
    assert (ir.bound.kind, ir.bound.alpha, ir.bound.mc_samples) == (BoundKind.IRELBO, 1.5, 1)
    assert 2 * ir.bound.epsilon == 1.0


def test_zero_weights_give_standard_outputs():
    params = zeroed(SMALL)
    q = encode(params, SMALL, np.full((2, 6), 0.4))
    assert np.array_equal(q.mu.data, np.zeros((2, 3)))
    assert np.array_equal(q.sigma.data, np.ones((2, 3)))
    p = decode(params, SMALL, np.ones((4, 2, 3)))
    assert p.shape == (4, 2, 6)
    assert np.array_equal(p.mu.data, np.full((4, 2, 6), 0.5))
    assert np.array_equal(p.sigma.data, np.ones((4, 2, 6)))
    assert np.array_equal(reconstruct(params, SMALL, np.full((2, 6), 0.9)), np.full((2, 6), 0.5))


def test_encode_is_deterministic_and_decoder_mean_inside_unit_interval():
    params = init_params(SMALL, 1)
    x = np.random.default_rng(0).uniform(0.001, 0.999, (5, 6))
    assert encode(params, SMALL, x).mu.data.tobytes() == encode(params, SMALL, x).mu.data.tobytes()
    for t in params.values():
        t.data *= 30.0
    mu = decode(params, SMALL, np.random.default_rng(1).normal(size=(5, 3)) * 5).mu.data
    assert np.all((mu >= 0) & (mu <= 1))


def test_reconstruction_modes_agree_when_encoder_sigma_vanishes():
    params = init_params(SMALL, 2)
    params["enc.logsigma.W"].data[...] = 0.0
    params["enc.logsigma.b"].data[...] = -800.0
    x = np.random.default_rng(0).uniform(0.001, 0.999, (3, 6))
    noise = np.random.default_rng(1).normal(size=(3, 3))
    a = reconstruct(params, SMALL, x, "mean_of_q")
    b = reconstruct(params, SMALL, x, "sample_of_q", noise)
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))
    with pytest.raises(ValueError):
        reconstruct(params, SMALL, x, "sample_of_q")
    with pytest.raises(ValueError):
        reconstruct(params, SMALL, x, "mode_of_q")


def _check_block_grads(loss_fn, params, names):
    with Tape() as tape:
        loss = loss_fn()
    grads = dict(zip(params, tape.gradient(loss, params.tensors())))
    for name in names:
        t = params[name]

        def f(a, t=t):
            old = t.data.copy()
            t.data[...] = a
            with ad.no_tape():
                v = float(loss_fn().data)
            t.data[...] = old
            return v

        fd = finite_difference(f, t.data.copy())
        assert np.allclose(grads[name], fd, rtol=1e-5, atol=1e-7), name


def test_gradient_through_encoder_into_kl():
    params = init_params(SMALL, 3)
    x = np.random.default_rng(0).uniform(0.001, 0.999, (2, 6))
    loss = lambda: ad.mean(kl_to_std_normal(encode(params, SMALL, x)))
    _check_block_grads(loss, params, ["enc.0.W", "enc.mu.b", "enc.logsigma.W"])


def test_gradient_through_decoder_into_interval_likelihood():
    params = init_params(SMALL, 4)
    rng = np.random.default_rng(0)
    z, x = rng.normal(size=(2, 3)), rng.uniform(0.001, 0.999, (2, 6))
    box = Box.around(x, 0.01)
    loss = lambda: ad.mean(log_interval_likelihood(decode(params, SMALL, z), box))
    _check_block_grads(loss, params, ["dec.0.W", "dec.1.b", "dec.mu.W", "dec.logsigma.b"])


def test_forward_full_network_gradient():
    params = init_params(SMALL, 5)
    rng = np.random.default_rng(1)
    x, noise = rng.uniform(0.001, 0.999, (2, 6)), rng.normal(size=(2, 2, 3))
    _check_block_grads(lambda: forward(params, SMALL, x, noise).total, params, ["enc.1.W", "dec.logsigma.W"])


def test_checkpoint_round_trip(tmp_path):
    params = init_params(SMALL, 6)
    opt = AdamState.create(params.tensors(), lr=0.01)
    rng = np.random.default_rng(0)
    adam_step(opt, params.tensors(), [rng.normal(size=t.shape) for t in params.values()])
    path = tmp_path / "ck.ivae"
    save_checkpoint(path, SMALL, params, opt, epoch=7)
    blob = path.read_bytes()
    assert blob[:5] == b"IVAE1" and blob[5:37] == SMALL.digest()
    p2, o2, epoch = load_checkpoint(path, SMALL, lr=0.01)
    assert epoch == 7 and o2.step == 1
    for k in params:
        assert p2[k].data.tobytes() == params[k].data.tobytes()
    for a, b in zip(opt.m + opt.v, o2.m + o2.v):
        assert a.tobytes() == b.tobytes()
    save_checkpoint(tmp_path / "again.ivae", SMALL, p2, o2, epoch=7)
    assert (tmp_path / "again.ivae").read_bytes() == blob


def test_checkpoint_errors(tmp_path):
    params = init_params(SMALL, 0)
    opt = AdamState.create(params.tensors(), lr=0.01)
    path = tmp_path / "ck.ivae"
    save_checkpoint(path, SMALL, params, opt, epoch=1)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ivae", SMALL)
    bad = tmp_path / "bad.ivae"
    bad.write_bytes(b"XVAE1" + path.read_bytes()[5:])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(bad, SMALL)
    bad.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(bad, SMALL)
    other = ModelConfig(input_dim=6, hidden=(5, 4), activation="relu", latent_dim=3, bound=SMALL.bound)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, other)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(activation="tanh")
    with pytest.raises(ValueError):
        ModelConfig(hidden=(0,))
    assert ModelConfig(hidden=[3, 2]).hidden == (3, 2)
