"""Contracts of the noising/denoising core, checked against independent oracles."""

import fractions

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reconbench.denoisers import GMMParams, exact_gmm_denoiser, identity_estimator
from reconbench.diffusion import (
    AttackSpec,
    build_schedule,
    forward_chain_sample,
    forward_marginal_sample,
    reconstruct_attack,
    reconstruct_attack_batch,
    reverse_posterior_coeffs,
    reverse_step,
)
from reconbench.errors import ParameterError


# ---------------------------------------------------------------- schedules

def test_constant_single_step_alpha_bar():
    sched = build_schedule("constant", T=1, beta_min=0.5, beta_max=0.5)
    assert sched.alpha_bars[1] == pytest.approx(0.5, abs=1e-15)


def test_constant_two_step_alpha_bar():
    sched = build_schedule("constant", T=2, beta_min=0.01, beta_max=0.01)
    assert sched.alpha_bars[2] == pytest.approx(0.9801, abs=1e-15)


def test_linear_schedule_matches_exact_rational_product():
    T = 100
    sched = build_schedule("linear", T=T, beta_min=1e-4, beta_max=0.02)
    # Independent oracle: exact rational running product of the same betas.
    betas = np.linspace(1e-4, 0.02, T)
    prod = fractions.Fraction(1)
    for b in betas:
        prod *= 1 - fractions.Fraction(float(b))
    exact = float(prod)
    assert abs(sched.alpha_bars[T] - exact) / exact < 1e-12


def test_alpha_bar_strictly_decreasing_and_product_identity():
    sched = build_schedule("linear", T=50, beta_min=1e-3, beta_max=0.3)
    ab = sched.alpha_bars
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0)
    running = 1.0
    for t in range(1, 51):
        running *= sched.alphas[t]
        assert ab[t] == pytest.approx(running, rel=1e-15)


@pytest.mark.parametrize(
    "kind,T,bmin,bmax",
    [
        ("linear", 0, 1e-4, 0.02),
        ("linear", 10, 0.0, 0.02),
        ("linear", 10, 1e-4, 1.0),
        ("linear", 10, 0.02, 0.01),
        ("cosine", 10, 1e-4, 0.02),
        ("linear", 10, np.nan, 0.02),
    ],
)
def test_bad_schedule_parameters_rejected(kind, T, bmin, bmax):
    with pytest.raises(ParameterError):
        build_schedule(kind, T=T, beta_min=bmin, beta_max=bmax)


# ------------------------------------------------------------ forward chain

def test_forward_marginal_s0_is_identity():
    sched = build_schedule("constant", T=3, beta_min=0.1, beta_max=0.1)
    x0 = np.array([0.3, -1.2, 4.0])
    out = forward_marginal_sample(x0, 0, sched, 7)
    assert np.array_equal(out, x0)


def test_forward_marginal_variance_matches_closed_form():
    sched = build_schedule("constant", T=2, beta_min=0.01, beta_max=0.01)
    x0 = np.zeros(8)
    draws = np.stack([forward_marginal_sample(x0, 2, sched, 1000 + i) for i in range(12_500)])
    var = draws.ravel().var()
    assert abs(var - 0.0199) / 0.0199 < 0.03


def test_forward_marginal_collapses_to_standard_normal():
    # abar_T < 1e-6 for this schedule, so the marginal forgets x0.
    sched = build_schedule("constant", T=100, beta_min=0.15, beta_max=0.15)
    assert sched.alpha_bars[100] < 1e-6
    x0 = np.full(10, 2.5)
    draws = np.stack([forward_marginal_sample(x0, 100, sched, i) for i in range(10_000)])
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.03


def test_forward_chain_s0_and_rejects_s_above_T():
    sched = build_schedule("constant", T=2, beta_min=0.2, beta_max=0.2)
    x0 = np.array([1.0, 2.0])
    assert np.array_equal(forward_chain_sample(x0, 0, sched, 3), x0)
    with pytest.raises(ParameterError):
        forward_chain_sample(x0, 3, sched, 3)
    with pytest.raises(ParameterError):
        forward_marginal_sample(x0, 3, sched, 3)


def test_forward_chain_variance_matches_marginal():
    sched = build_schedule("constant", T=2, beta_min=0.01, beta_max=0.01)
    x0 = np.zeros(8)
    draws = np.stack([forward_chain_sample(x0, 2, sched, i) for i in range(12_500)])
    var = draws.ravel().var()
    assert abs(var - 0.0199) / 0.0199 < 0.03


def test_forward_chain_single_step_exact_algebra():
    sched = build_schedule("constant", T=1, beta_min=0.5, beta_max=0.5)
    seed = 424242
    eps = np.random.default_rng(seed).standard_normal(())
    out = forward_chain_sample(np.asarray(1.0), 1, sched, seed)
    assert out == pytest.approx(np.sqrt(0.5) + np.sqrt(0.5) * eps, abs=1e-15)


def test_marginal_and_chain_moments_agree():
    sched = build_schedule("linear", T=20, beta_min=0.01, beta_max=0.2)
    x0 = np.array([1.5, -0.5, 0.25, 2.0])
    m = np.stack([forward_marginal_sample(x0, 20, sched, 50_000 + i) for i in range(25_000)])
    c = np.stack([forward_chain_sample(x0, 20, sched, 90_000 + i) for i in range(25_000)])
    assert np.allclose(m.mean(axis=0), c.mean(axis=0), atol=0.03)
    ref = m.var(axis=0)
    assert np.all(np.abs(c.var(axis=0) - ref) / ref < 0.03)


# ------------------------------------------------------------- reverse step

def test_reverse_step_at_s1_returns_x0_hat_exactly():
    sched = build_schedule("linear", T=5, beta_min=0.05, beta_max=0.3)
    x1 = np.array([3.0, -2.0])
    x0h = np.array([0.25, 0.5])
    out = reverse_step(x1, 1, x0h, sched, 99)
    assert np.array_equal(out, x0h)


def test_reverse_step_mean_matches_hand_computed_coefficients():
    # betas [0.1, 0.2]: alpha1=0.9, alpha2=0.8, abar1=0.9, abar2=0.72.
    betas = np.array([0.0, 0.1, 0.2])
    sched = build_schedule("linear", T=2, beta_min=0.1, beta_max=0.2)
    assert np.allclose(sched.betas, betas)
    c0, cs, var = reverse_posterior_coeffs(2, sched)
    # Independent evaluation of the two closed-form coefficients.
    exp_c0 = np.sqrt(0.9) * 0.2 / (1 - 0.72)
    exp_cs = np.sqrt(0.8) * (1 - 0.9) / (1 - 0.72)
    assert c0 == pytest.approx(exp_c0, rel=1e-14)
    assert cs == pytest.approx(exp_cs, rel=1e-14)
    mean = c0 * 0.5 + cs * 1.0
    assert mean == pytest.approx(0.6583, abs=5e-5)
    assert var == pytest.approx(0.2 * (1 - 0.9) / (1 - 0.72), rel=1e-14)


def test_reverse_step_rejects_s0_and_shape_mismatch():
    sched = build_schedule("constant", T=2, beta_min=0.1, beta_max=0.1)
    with pytest.raises(ParameterError):
        reverse_step(np.zeros(2), 0, np.zeros(2), sched, 1)
    from reconbench.errors import ContractError

    with pytest.raises(ContractError):
        reverse_step(np.zeros(2), 1, np.zeros(3), sched, 1)


def test_full_chain_with_exact_gaussian_denoiser_recovers_prior_moments():
    # Single-Gaussian world; generation from pure noise must reproduce the
    # prior's mean and variance. The schedule mixes to abar_T < 1e-6 so the
    # standard-normal start matches the true terminal marginal.
    mu, var0 = 0.8, 1.7
    gmm = GMMParams(weights=[1.0], means=[[mu]], variances=[var0])
    den = exact_gmm_denoiser(gmm)
    T = 400
    sched = build_schedule("constant", T=T, beta_min=0.05, beta_max=0.05)
    assert sched.alpha_bars[T] < 1e-6
    n = 100_000
    rng = np.random.default_rng(2024)
    x = rng.standard_normal((n, 1))
    for t in range(T, 0, -1):
        x0h = den.predict_x0(x, t, sched)
        c0, cs, v = reverse_posterior_coeffs(t, sched)
        x = c0 * x0h + cs * x
        if v > 0:
            x = x + np.sqrt(v) * rng.standard_normal((n, 1))
    assert abs(x.mean() - mu) < 0.03 * max(1.0, abs(mu))
    assert abs(x.var() - var0) / var0 < 0.03


# ------------------------------------------------------- attack generation

def _two_blob_world():
    gmm = GMMParams(weights=[0.5, 0.5], means=[[2.0, 0.0], [-2.0, 0.0]],
                    variances=[0.5, 0.5])
    sched = build_schedule("linear", T=50, beta_min=0.01, beta_max=0.25)
    return gmm, sched


def test_reconstruct_attack_s0_identity_and_determinism():
    gmm, sched = _two_blob_world()
    den = exact_gmm_denoiser(gmm)
    est = identity_estimator()
    y0 = np.array([3.0, 3.0])
    spec0 = AttackSpec(s=0, denoiser_id="exact_gmm", estimator_id="identity", seed=5)
    assert np.array_equal(reconstruct_attack(y0, spec0, sched, den, est), y0)
    spec = AttackSpec(s=7, denoiser_id="exact_gmm", estimator_id="identity", seed=5)
    a = reconstruct_attack(y0, spec, sched, den, est)
    b = reconstruct_attack(y0, spec, sched, den, est)
    assert np.array_equal(a, b)


def test_reconstruct_attack_loglik_nondecreasing_in_s():
    # Fakes are prior draws pushed off-distribution by a constant offset;
    # more denoising steps must pull them back toward the data distribution,
    # measured by the exact mixture log-density.
    from reconbench.denoisers import gmm_log_density, gmm_sample

    gmm, sched = _two_blob_world()
    den = exact_gmm_denoiser(gmm)
    est = identity_estimator()
    n = 1000
    fakes = gmm_sample(gmm, n, 123) + np.array([1.5, -1.5])
    means = []
    for s in (1, 10, 50):
        seeds = 7_000_000 + np.arange(n)
        attacks = reconstruct_attack_batch(fakes, s, seeds, sched, den, est)
        means.append(gmm_log_density(attacks, gmm).mean())
    assert means[0] <= means[1] <= means[2]


def test_batch_attack_equals_per_sample_loop():
    gmm, sched = _two_blob_world()
    den = exact_gmm_denoiser(gmm)
    est = identity_estimator()
    fakes = np.random.default_rng(9).normal(size=(5, 2))
    seeds = [11, 22, 33, 44, 55]
    batch = reconstruct_attack_batch(fakes, 9, np.array(seeds), sched, den, est)
    for i, seed in enumerate(seeds):
        spec = AttackSpec(s=9, denoiser_id="exact_gmm", estimator_id="identity", seed=seed)
        single = reconstruct_attack(fakes[i], spec, sched, den, est)
        assert np.array_equal(batch[i], single)


def test_reconstruct_attack_clamps_to_value_range():
    gmm, sched = _two_blob_world()
    den = exact_gmm_denoiser(gmm)
    est = identity_estimator()
    spec = AttackSpec(s=50, denoiser_id="exact_gmm", estimator_id="identity", seed=1)
    out = reconstruct_attack(np.array([9.0, -9.0]), spec, sched, den, est,
                             value_range=(-1.0, 1.0))
    assert out.min() >= -1.0 and out.max() <= 1.0


@settings(max_examples=25, deadline=None)
@given(s=st.integers(min_value=1, max_value=12), seed=st.integers(0, 2**32 - 1))
def test_seeded_operations_are_pure(s, seed):
    sched = build_schedule("linear", T=12, beta_min=0.01, beta_max=0.2)
    x0 = np.array([0.5, -1.0, 2.0])
    for op in (forward_marginal_sample, forward_chain_sample):
        assert np.array_equal(op(x0, s, sched, seed), op(x0, s, sched, seed))
    x0h = np.array([0.1, 0.1, 0.1])
    assert np.array_equal(
        reverse_step(x0, s, x0h, sched, seed), reverse_step(x0, s, x0h, sched, seed)
    )
