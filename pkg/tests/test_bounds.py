import math

import numpy as np
import pytest

from ivae import autodiff as ad
from ivae.autodiff import Tensor
from ivae.bounds import (
    BoundConfig,
    BoundKind,
    elbo,
    evaluate_bound,
    ielbo,
    irelbo,
    irelbo_standard_error,
    mc_log_interval_evidence,
)
from ivae.gaussian import Box, DiagGaussian, log_interval_likelihood
from ivae.special import LOG_SQRT_2PI
from oracles import log_normal_interval_exact
from toy import bound_expectation, bound_value, decode, ielbo_mc, irelbo_exact, posterior, stratified_noise

EPS = 0.01


def const_decoder(mu, log_sigma):
    mu, log_sigma = np.asarray(mu, float), np.asarray(log_sigma, float)

    def dec(z):
        lead = z.shape[:-1]
        return DiagGaussian(Tensor(np.broadcast_to(mu, lead + mu.shape[-1:])), Tensor(np.broadcast_to(log_sigma, lead + mu.shape[-1:])))

    return dec


def prior_q(batch, k):
    return DiagGaussian(Tensor(np.zeros((batch, k))), Tensor(np.zeros((batch, k))))


def test_config_validation():
    with pytest.raises(ValueError):
        BoundConfig(BoundKind.IRELBO, alpha=2.0)
    with pytest.raises(ValueError):
        BoundConfig(BoundKind.IELBO, epsilon=0.0)
    with pytest.raises(ValueError):
        BoundConfig(mc_samples=0)
    assert BoundConfig("elbo").kind is BoundKind.ELBO


def test_elbo_unit_decoder_at_data():
    x = np.array([[0.2, 0.4, 0.9]])
    dec = lambda z: DiagGaussian(Tensor(np.broadcast_to(x, z.shape[:-1] + (3,))), Tensor(np.zeros(z.shape[:-1] + (3,))))
    t = elbo(x, prior_q(1, 2), dec, BoundConfig("elbo"), np.zeros((1, 1, 2)))
    assert float(t.reconstruction.data) == pytest.approx(-3 * LOG_SQRT_2PI, rel=1e-15)
    assert float(t.divergence.data) == 0.0


def test_elbo_density_blow_up():
    t = elbo(np.array([[0.5]]), prior_q(1, 1), const_decoder([0.5], [math.log(1e-4)]), BoundConfig("elbo"), np.zeros((1, 1, 1)))
    assert float(t.reconstruction.data) == pytest.approx(math.log(1 / (math.sqrt(2 * math.pi) * 1e-4)), rel=1e-13)
    assert float(t.reconstruction.data) == pytest.approx(8.29, abs=0.01)


def test_ielbo_covering_interval_gives_zero():
    x = np.array([[0.3, 0.6]])
    t = ielbo(x, prior_q(1, 1), const_decoder([0.3, 0.6], [math.log(0.01)] * 2), BoundConfig("ielbo", epsilon=1.0), np.zeros((1, 1, 1)))
    assert abs(float(t.total.data)) < 1e-15


def test_elbo_below_log_marginal_density():
    x = 0.8
    exact = -0.5 * x * x / 2 - 0.5 * math.log(2 * math.pi * 2)
    for m, s in [(0.0, 1.0), (0.4, 0.7), (-0.3, 0.2)]:
        assert bound_expectation("elbo", x, m, s) < exact
    assert bound_expectation("elbo", x, 0.4, math.sqrt(0.5)) == pytest.approx(exact, abs=1e-12)


def test_ielbo_tight_at_posterior_on_toy():
    x = 0.7
    exact = log_normal_interval_exact(x, EPS, 2.0)
    m, s = posterior(x)
    val = bound_expectation("ielbo", x, m, s)
    assert val <= exact
    assert val == pytest.approx(exact, abs=1e-8)


def test_ielbo_strictly_below_with_mismatched_q():
    x = 0.7
    exact = log_normal_interval_exact(x, EPS, 2.0)
    assert bound_expectation("ielbo", x, 0.0, 1.0) < exact - 1e-2


def test_irelbo_below_evidence_and_alpha_to_one():
    x = 0.7
    exact = log_normal_interval_exact(x, EPS, 2.0)
    m, s = posterior(x)
    for alpha in (1.1, 1.5, 1.9):
        assert irelbo_exact(x, m, s, alpha=alpha) <= exact
        assert irelbo_exact(x, 0.2, 0.9, alpha=alpha) <= exact
    # single-draw estimate, as in the training preset
    rng = np.random.default_rng(5)
    t = bound_value("irelbo", x, m, s, rng.standard_normal((1, 1, 1)), alpha=1.5)
    assert np.isfinite(float(t.total.data))

    noise = rng.standard_normal((20000, 1, 1))
    ie = bound_expectation("ielbo", x, 0.2, 0.9)
    t = bound_value("irelbo", x, 0.2, 0.9, noise, alpha=1.01)
    se = float(irelbo_standard_error(t.per_sample_log_weights, 1.01)[0])
    # the alpha -> 1 limit differs from the IELBO only by O(alpha - 1)
    assert abs(float(t.total.data) - ie) <= 3 * se + 5e-3
    assert abs(irelbo_exact(x, 0.2, 0.9, alpha=1.01) - ie) < 5e-3


def test_irelbo_volume_term_and_flat_likelihood():
    # a decoder this wide is flat over the box, so each power integral is
    # w * (sigma sqrt(2 pi))^k with k = 1 at alpha = 1.5, and the bound is tight
    x = np.full((1, 3), 0.5)
    w, log_sigma = 0.2, 40.0
    c = log_sigma + LOG_SQRT_2PI
    dec = const_decoder(np.full(3, 0.5), np.full(3, log_sigma))
    cfg = BoundConfig("irelbo", epsilon=w / 2, alpha=1.5, mc_samples=1)
    t = irelbo(x, prior_q(1, 1), dec, cfg, np.zeros((1, 1, 1)))
    assert Box.around(x, w / 2).log_volume()[0] == pytest.approx(3 * math.log(w), rel=1e-15)
    assert float(t.reconstruction.data) == pytest.approx(0.5 * 3 * (math.log(w) + c), rel=1e-12)
    assert float(t.divergence.data) == 0.0
    assert float(t.total.data) == pytest.approx(3 * (math.log(w) - c), rel=1e-12)


def test_evaluate_bound_dispatch_and_shapes():
    x = np.full((4, 2), 0.5)
    rng = np.random.default_rng(0)
    noise = rng.standard_normal((3, 4, 1))
    q = DiagGaussian(Tensor(rng.normal(size=(4, 1))), Tensor(rng.normal(size=(4, 1)) * 0.1))
    dec = const_decoder([0.4, 0.6], [-1.0, -2.0])
    for kind in BoundKind:
        t = evaluate_bound(x, q, dec, BoundConfig(kind, mc_samples=3), noise)
        assert t.per_example.shape == (4,)
        assert float(t.total.data) == pytest.approx(t.per_example.mean(), rel=1e-14)


def test_mc_evidence_zero_variance_for_constant_decoder():
    x = np.array([0.3, 0.6])
    dec = const_decoder([0.35, 0.55], [math.log(0.1), math.log(0.2)])
    prior = DiagGaussian(Tensor(np.zeros(2)), Tensor(np.zeros(2)))
    est = mc_log_interval_evidence(x, prior, dec, EPS, 50, np.random.default_rng(0))
    want = float(log_interval_likelihood(dec(Tensor(np.zeros(2))), Box.around(x, EPS)).data)
    assert est.value == pytest.approx(want, rel=1e-13)
    assert est.standard_error == pytest.approx(0.0, abs=1e-14)


def test_mc_evidence_single_draw():
    x = np.array([0.7])
    prior = DiagGaussian(Tensor(np.zeros(1)), Tensor(np.zeros(1)))
    noise = np.array([[0.4]])
    est = mc_log_interval_evidence(x, prior, decode, EPS, 1, noise)
    want = float(log_interval_likelihood(decode(Tensor(np.array([0.4]))), Box.around(x, EPS)).data)
    assert est.value == want


def test_mc_evidence_matches_analytic_marginal():
    x = np.array([0.7])
    prior = DiagGaussian(Tensor(np.zeros(1)), Tensor(np.zeros(1)))
    est = mc_log_interval_evidence(x, prior, decode, EPS, 1_000_000, np.random.default_rng(11))
    assert abs(est.value - log_normal_interval_exact(0.7, EPS, 2.0)) < 3 * est.standard_error


def test_ielbo_mc_helper_reports_error():
    rng = np.random.default_rng(0)
    val, se = ielbo_mc(0.7, 0.35, math.sqrt(0.5), 20000, rng)
    assert se > 0
    assert abs(val - log_normal_interval_exact(0.7, EPS, 2.0)) < 3 * se + 1e-4


def test_ielbo_gradients_flow_to_encoder():
    m = Tensor(np.array([[0.1]]), True)
    ls = Tensor(np.array([[-0.2]]), True)
    with ad.Tape() as tape:
        t = ielbo(np.array([[0.7]]), DiagGaussian(m, ls), decode, BoundConfig("ielbo"), stratified_noise(200))
    gm, gs = tape.gradient(t.total, [m, ls])
    # ascent direction moves the mean toward the posterior mean 0.35
    assert gm[0, 0] > 0
    assert np.isfinite(gs).all()
