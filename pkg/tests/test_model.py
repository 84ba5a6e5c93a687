import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from panelmix import links
from panelmix.gibbs import check_invariants, eta_obs, obs_means
from panelmix.model import (
    ConfigError,
    ModelConfig,
    Problem,
    gaussian_diag_loglik,
    gp_kernel_matrix,
    init_state,
    latent_conditional_density,
    marginal_covariance,
    stick_to_weights,
)

from conftest import build_tiny_dataset, build_tiny_state


def test_gp_kernel_values():
    K = gp_kernel_matrix([0.0, 1.0], kappa=1.0, jitter=0.5)
    assert K[0, 0] == pytest.approx(1.5)
    assert K[0, 1] == pytest.approx(math.exp(-1.0))
    K2 = gp_kernel_matrix([0.0, 5.0], kappa=0.04)
    assert K2[0, 1] == pytest.approx(math.exp(-1.0))


def test_gp_kernel_grid_factorises():
    cfg = ModelConfig(H=2, kappa_grid_size=25)
    times = np.arange(1.0, 10.0)
    for kappa in cfg.kappa_grid:
        np.linalg.cholesky(gp_kernel_matrix(times, kappa, jitter=1e-6))


def test_gp_kernel_rejects_duplicate_times():
    with pytest.raises(ValueError):
        gp_kernel_matrix([1.0, 1.0], kappa=0.5)


def test_stick_to_weights_example():
    pi = stick_to_weights([0.5, 0.5, 0.5])
    assert np.allclose(pi, [0.5, 0.25, 0.125, 0.125], atol=0, rtol=0)


def test_stick_to_weights_degenerate():
    pi = stick_to_weights([1 - 1e-12, 0.5])
    assert pi[0] == pytest.approx(1.0, abs=1e-11)


def test_stick_to_weights_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.random(59) * 0.999 + 5e-4
        pi = stick_to_weights(v)
        assert abs(pi.sum() - 1.0) < 1e-12
        assert np.all(pi >= 0)


def test_latent_density_at_mean_and_translation_invariance():
    state, _ = build_tiny_state(seed=4)
    P = state.problem
    x = state.X[0]
    mu_t = state.mu[0]
    eta = np.ones(P.Q)
    state.sigma2[0] = np.ones(P.p)
    mean = state.B[0] @ x + state.Omega[0] @ mu_t + state.Lambda[0] @ eta
    ll = latent_conditional_density(mean, x, mu_t, eta, 0, state)
    assert ll == pytest.approx(-0.5 * P.p * math.log(2 * math.pi))
    shifted = latent_conditional_density(mean + 3.3, x, mu_t, eta, 0, state)
    base = latent_conditional_density(mean + 3.3 - mean + mean, x, mu_t, eta, 0, state)
    assert shifted == pytest.approx(base)


def test_latent_density_matches_dense_evaluator():
    state, _ = build_tiny_state(seed=8)
    P = state.problem
    rng = np.random.default_rng(2)
    # well-scaled parameters so absolute 1e-10 agreement is meaningful
    state.U = rng.normal(size=state.U.shape)
    state.sigma2 = rng.uniform(0.5, 2.0, size=state.sigma2.shape)
    for _ in range(30):
        h = int(rng.integers(P.H))
        y = rng.normal(size=P.p)
        x = state.X[int(rng.integers(P.n))]
        mu_t = state.mu[int(rng.integers(P.T))]
        eta = rng.normal(size=P.Q)
        got = latent_conditional_density(y, x, mu_t, eta, h, state)
        mean = state.B[h] @ x + state.Omega[h] @ mu_t + state.Lambda[h] @ eta
        want = multivariate_normal.logpdf(y, mean=mean, cov=np.diag(state.sigma2[h]))
        assert got == pytest.approx(want, abs=1e-10)


def test_density_invariant_to_coordinate_permutation():
    state, _ = build_tiny_state(seed=9)
    P = state.problem
    rng = np.random.default_rng(5)
    perm = rng.permutation(P.p)
    y = rng.normal(size=P.p)
    x = state.X[0]
    mu_t = state.mu[1]
    eta = rng.normal(size=P.Q)
    base = latent_conditional_density(y, x, mu_t, eta, 0, state)
    import copy

    permuted = copy.deepcopy(state)
    permuted.U[0] = state.U[0][perm]
    permuted.sigma2[0] = state.sigma2[0][perm]
    assert latent_conditional_density(y[perm], x, mu_t, eta, 0, permuted) == pytest.approx(base)


def test_marginal_covariance_structure():
    state, _ = build_tiny_state(seed=10)
    P = state.problem
    cov = marginal_covariance(state, 1, state.X[0], 0)
    assert np.array_equal(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > -1e-10)
    zeroed = build_tiny_state(seed=10)[0]
    zeroed.U[:, :, P.L + P.Q_mu:] = 0.0
    cov0 = marginal_covariance(zeroed, 1, zeroed.X[0], 0)
    assert np.allclose(cov0, np.diag(zeroed.sigma2[1]))


def test_marginal_covariance_matches_forward_simulation():
    state, _ = build_tiny_state(seed=11)
    P = state.problem
    h, i, t = 0, 2, 1
    x = state.X[i]
    cov = marginal_covariance(state, h, x, t)
    rng = np.random.default_rng(77)
    m = 100_000
    eta_star = rng.standard_normal(m)
    eta_tilde = rng.standard_normal((m, P.Q_eta))
    eta = (state.V[h] @ x)[None, :] * eta_star[:, None] + eta_tilde @ state.xi[t].T
    mean = state.B[h] @ x + state.Omega[h] @ state.mu[t]
    draws = mean[None, :] + eta @ state.Lambda[h].T + rng.standard_normal(
        (m, P.p)
    ) * np.sqrt(state.sigma2[h])
    sample_cov = np.cov(draws.T)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / m)
    assert np.all(np.abs(sample_cov - cov) < 4 * se + 1e-8)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * np.sqrt(np.diag(cov) / m))


def test_init_state_deterministic_and_feasible():
    s1, _ = build_tiny_state(seed=21)
    s2, _ = build_tiny_state(seed=21)
    assert np.array_equal(s1.ystar, s2.ystar)
    assert np.array_equal(s1.s, s2.s)
    assert s1.alpha == s2.alpha
    check_invariants(s1)  # includes g(y*) = y on observed cells
    assert abs(s1.pi.sum() - 1.0) < 1e-12


def test_init_state_handles_empty_dataset():
    ds = build_tiny_dataset(n=0, with_missing=False, weights=np.zeros(0), population=10)
    cfg = ModelConfig(H=3, Q=2, Q_mu=2, Q_eta=2, kappa_grid_size=4)
    state = init_state(cfg, ds, np.random.default_rng(0))
    assert state.s.size == 0 and state.ystar.shape[0] == 0


def test_config_validation_and_yaml_roundtrip(tmp_path):
    with pytest.raises(ConfigError):
        ModelConfig(H=1)
    with pytest.raises(ConfigError):
        ModelConfig(prior_mass_fraction=0.0)
    with pytest.raises(ConfigError):
        ModelConfig(allocation_eta="sometimes")
    cfg = ModelConfig(H=12, burnin=5, iterations=20, thin=2)
    path = tmp_path / "config.yaml"
    cfg.to_yaml(path)
    back = ModelConfig.from_yaml(path)
    assert back == cfg
    assert back.hash() == cfg.hash()
    assert len(cfg.kappa_grid) == 25 and cfg.kappa_grid[-1] == 1.0


def test_sigma2_prior_resolution_uses_transformed_variance():
    ds = build_tiny_dataset(n=30, seed=5, with_missing=False)
    cfg = ModelConfig(H=2, Q=2, Q_mu=2, Q_eta=2)
    prob = Problem(cfg, ds)
    # continuous coordinate: b_tilde = 2 * var(y)/200 = var(y)/100
    y = ds.responses[:, 0]
    assert prob.sigma2_b_tilde[0] == pytest.approx(np.var(y, ddof=1) / 100)
    assert np.all(prob.sigma2_a_tilde == 4.0)
    # nominal coordinates use unit variance
    a, b = prob.layout.span(3)
    assert np.all(prob.sigma2_b_tilde[a:b] == pytest.approx(2.0 / 200.0))


def test_forward_latent_mean_matches_model():
    """Forward-simulated y* has mean B x + Omega mu_t at the generating state."""
    state, _ = build_tiny_state(seed=31, with_missing=False)
    P = state.problem
    rng = np.random.default_rng(4)
    m = 100_000
    h, i, t = 1, 0, 0
    x = state.X[i]
    eta_star = rng.standard_normal(m)
    eta_tilde = rng.standard_normal((m, P.Q_eta))
    eta = (state.V[h] @ x)[None, :] * eta_star[:, None] + eta_tilde @ state.xi[t].T
    draws = (
        state.B[h] @ x + state.Omega[h] @ state.mu[t]
    )[None, :] + eta @ state.Lambda[h].T + rng.standard_normal((m, P.p)) * np.sqrt(
        state.sigma2[h]
    )
    target = state.B[h] @ x + state.Omega[h] @ state.mu[t]
    sd = np.sqrt(np.diag(marginal_covariance(state, h, x, t)))
    assert np.all(np.abs(draws.mean(axis=0) - target) < 3.5 * sd / math.sqrt(m))
