import numpy as np
import pytest

from lfmm.model import class_covariance, class_mean, haar_spec
from lfmm.spectral import (
    build_cache,
    dense_resolvent,
    kappa_of_theta,
    sigma2_of,
    signal_response,
    signal_response_subspace,
)


def test_identity_covariance():
    spec = haar_spec(50, [1.0, 2.0], "gaussian")
    cache = build_cache(spec, 50, 1.0)
    assert np.allclose(cache.sigma_eigs, 1.0, atol=1e-12)
    assert np.allclose(cache.gram, np.eye(2), atol=1e-12)
    assert np.allclose(cache.signal_matrix(1.0), np.eye(2) / 2.0, atol=1e-12)
    # p = n, lam = theta = 1: kappa = p / (n (lam + theta))
    assert kappa_of_theta(cache, 1.0) == pytest.approx(0.5, abs=1e-12)
    # lam + theta = 2: sigma^2 = gamma^2 / 4
    assert sigma2_of(cache, 1.0, 3.0) == pytest.approx(9.0 / 4.0, abs=1e-12)


def test_known_spectrum(spec_fig3):
    cache = build_cache(spec_fig3, 800, 1.0)
    assert cache.sigma_eigs[0] == pytest.approx(4.0, abs=1e-10)
    assert np.allclose(cache.sigma_eigs[1:], 1.0, atol=1e-10)


@pytest.mark.parametrize("p,n", [(40, 120), (200, 600), (400, 300)])
def test_trace_functionals_match_dense(p, n):
    spec = haar_spec(p, [np.sqrt(2), 0.7], "gaussian", seed=p, diag_scale=np.linspace(0.5, 2.0, p))
    Sigma = class_covariance(spec)
    rng = np.random.default_rng(p)
    for lam in (0.01, 0.5, 3.0):
        cache = build_cache(spec, n, lam)
        for theta in (0.0, 0.3, 2.5):
            Q = dense_resolvent(Sigma, lam, theta)
            assert kappa_of_theta(cache, theta) == pytest.approx(np.trace(Sigma @ Q) / n, rel=1e-10)
            QS = Q @ Sigma
            gamma = rng.uniform(0.1, 2)
            assert sigma2_of(cache, theta, gamma) == pytest.approx(gamma**2 * np.trace(QS @ QS) / n, rel=1e-10)


def test_signal_response_matches_dense(spec_fig3):
    Sigma = class_covariance(spec_fig3)
    mu = class_mean(spec_fig3)
    Vi = spec_fig3.V_info
    rng = np.random.default_rng(0)
    cache = build_cache(spec_fig3, 800, 1.0)
    for _ in range(5):
        theta, eta = rng.uniform(0, 3), rng.normal()
        omega = rng.normal(size=2)
        xi = Vi @ (eta * spec_fig3.s + omega)
        Q = dense_resolvent(Sigma, 1.0, theta)
        m, psi = signal_response(cache, theta, eta, omega)
        assert abs(m - mu @ Q @ xi) < 1e-10
        assert np.max(np.abs(psi - Vi.T @ Q @ xi)) < 1e-10


def test_subspace_formula_needs_orthogonality(spec_fig3):
    orth = haar_spec(60, [1.0, 0.5], "gaussian", seed=2)
    cache = build_cache(orth, 100, 0.7)
    a = signal_response(cache, 0.9, 0.4, [0.1, -0.2])
    b = signal_response_subspace(cache, 0.9, 0.4, [0.1, -0.2])
    assert abs(a[0] - b[0]) < 1e-12 and np.allclose(a[1], b[1], atol=1e-12)
    # diagonally scaled Haar: the q x q reduction is only approximate
    cache = build_cache(spec_fig3, 800, 1.0)
    a = signal_response(cache, 0.9, 0.4, [0.1, -0.2])
    b = signal_response_subspace(cache, 0.9, 0.4, [0.1, -0.2])
    assert abs(a[0] - b[0]) > 1e-6


def test_p_normalization():
    spec = haar_spec(30, [1.0], "gaussian")
    c_n, c_p = build_cache(spec, 60, 1.0), build_cache(spec, 60, 1.0, normalization="p")
    assert sigma2_of(c_p, 1.0, 1.0) == pytest.approx(2 * sigma2_of(c_n, 1.0, 1.0), rel=1e-12)
    assert kappa_of_theta(c_p, 1.0) == kappa_of_theta(c_n, 1.0)


def test_errors(spec_small):
    with pytest.raises(ValueError):
        build_cache(spec_small, 10, 0.0)
    cache = build_cache(spec_small, 10, 1.0)
    with pytest.raises(ValueError):
        kappa_of_theta(cache, -0.1)
    with pytest.raises(ValueError):
        cache.with_lambda(-1.0)
    assert cache.with_lambda(2.0).lam == 2.0
    V = spec_small.V.copy()
    V[:, 1] = V[:, 0]
    with pytest.raises(ArithmeticError):
        build_cache(spec_small.replace(V=V), 10, 1.0)


def test_apply_helpers(spec_fig3):
    cache = build_cache(spec_fig3, 800, 0.5)
    Sigma = class_covariance(spec_fig3)
    v = np.random.default_rng(1).normal(size=200)
    assert np.allclose(cache.apply_resolvent(1.3, v), dense_resolvent(Sigma, 0.5, 1.3) @ v, atol=1e-10)
    w = cache.apply_sqrt_sigma(cache.apply_sqrt_sigma(v))
    assert np.allclose(w, Sigma @ v, atol=1e-10)
