import numpy as np
import pytest
from scipy.stats import multivariate_normal

from rpflow import gp
from rpflow.errors import DimensionMismatch, InvalidParam
from rpflow.numerics import Rng
from rpflow.rff import KernelSpec, kernel_matrix, make_basis


def naive_posterior(ell, noise, X, y, Xs):
    K = kernel_matrix(ell, X) + noise * np.eye(len(X))
    Ks = kernel_matrix(ell, Xs, X)
    Kinv = np.linalg.inv(K)
    return Ks @ Kinv @ y, kernel_matrix(ell, Xs) - Ks @ Kinv @ Ks.T


@pytest.mark.parametrize("noise", [0.0, 0.05])
def test_posterior_matches_dense_inverse(noise):
    rng = np.random.default_rng(0)
    X, Xs = rng.random((10, 2)), rng.random((7, 2))
    y = rng.standard_normal((10, 3))
    post = gp.fit_posterior(KernelSpec(0.3, noise), X, y, jitter=0.0)
    mean, cov = gp.posterior_mean_cov(post, Xs)
    m_ref, c_ref = naive_posterior(0.3, noise, X, y, Xs)
    np.testing.assert_allclose(mean, m_ref, atol=1e-8)
    np.testing.assert_allclose(cov, c_ref, atol=1e-8)
    _, var = gp.posterior_mean_cov(post, Xs, full_cov=False)
    np.testing.assert_allclose(var, np.diag(cov), atol=1e-12)


def test_noiseless_posterior_interpolates():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.cos(3 * X)
    post = gp.fit_posterior(KernelSpec(0.2), X, y)
    mean, var = gp.posterior_mean_cov(post, X, full_cov=False)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert np.all(var < 1e-6)
    draws = gp.sample_posterior(1, post, X, 4)
    np.testing.assert_allclose(draws, np.broadcast_to(y, draws.shape), atol=1e-3)


def test_posterior_samples_have_posterior_moments():
    X = np.array([[0.2], [0.7]])
    post = gp.fit_posterior(KernelSpec(0.25), X, np.array([[1.0], [-0.5]]))
    Xs = np.array([[0.45], [0.9]])
    mean, cov = gp.posterior_mean_cov(post, Xs)
    s = gp.sample_posterior(0, post, Xs, 20000)[:, :, 0]
    np.testing.assert_allclose(s.mean(0), mean[:, 0], atol=0.02)
    np.testing.assert_allclose(np.cov(s.T), cov, atol=0.02)


def test_blocked_sampling_keeps_marginals():
    X = np.linspace(0, 1, 6)[:, None]
    post = gp.fit_posterior(KernelSpec(0.2), X, np.sin(5 * X))
    Xs = np.linspace(0, 1, 40)[:, None]
    s = gp.sample_posterior(2, post, Xs, 4000, cap=16)
    mean, var = gp.posterior_mean_cov(post, Xs, full_cov=False)
    assert s.shape == (4000, 40, 1)
    np.testing.assert_allclose(s.mean(0)[:, 0], mean[:, 0], atol=0.05)
    np.testing.assert_allclose(s.var(0)[:, 0], var, atol=0.05)


def test_prior_samplers():
    X = np.array([[0.0], [0.1], [0.5]])
    s = np.stack([gp.sample_prior_exact(i, KernelSpec(0.2), X).values[:, 0] for i in range(6000)])
    np.testing.assert_allclose(np.cov(s.T), kernel_matrix(0.2, X), atol=0.05)
    with pytest.raises(InvalidParam):
        gp.sample_prior_exact(0, KernelSpec(0.2), X, cap=2)
    b = make_basis(0, 8, 1, 5.0)
    r = gp.sample_prior_rff(Rng(3), b, X, 2)
    W = Rng(3).standard_normal(b.dim, 2)
    np.testing.assert_allclose(r.values, b.embed(X) @ W)
    assert r.mode == "rff-approx"


def test_log_likelihood_matches_scipy():
    rng = np.random.default_rng(1)
    X = rng.random((9, 1))
    y = rng.standard_normal((9, 2))
    spec = KernelSpec(0.3, 0.01)
    K = kernel_matrix(0.3, X) + 0.01 * np.eye(9)
    ref = sum(multivariate_normal(np.zeros(9), K).logpdf(y[:, j]) for j in range(2))
    assert gp.log_likelihood(spec, X, y, jitter=0.0) == pytest.approx(ref, rel=1e-10)


def test_mle_recovers_lengthscale():
    X = np.linspace(0, 1, 120)[:, None]
    y = gp.sample_prior_exact(4, KernelSpec(0.1), X, m=3).values
    ell, ll = gp.lengthscale_mle(X, y, np.geomspace(0.02, 0.5, 41))
    assert 0.07 < ell < 0.14
    assert np.isfinite(ll).all()


def test_mle_and_fit_errors():
    with pytest.raises(InvalidParam):
        gp.lengthscale_mle(np.zeros((4, 1)), np.zeros(4))
    with pytest.raises(InvalidParam):
        gp.lengthscale_mle(np.linspace(0, 1, 10), np.zeros(10), [0.1, -1.0])
    with pytest.raises(DimensionMismatch):
        gp.fit_posterior(KernelSpec(0.1), np.zeros((3, 1)), np.zeros((2, 1)))
    post = gp.fit_posterior(KernelSpec(0.1), np.linspace(0, 1, 3), np.zeros(3))
    with pytest.raises(DimensionMismatch):
        gp.posterior_mean_cov(post, np.zeros((2, 2)))
