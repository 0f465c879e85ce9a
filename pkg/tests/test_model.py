import numpy as np
import pytest

from lfmm.model import (
    LfmmSpec,
    NoiseLaw,
    build_haar_orthogonal,
    class_covariance,
    class_mean,
    equivalent_gmm,
    haar_spec,
    sample_dataset,
    sample_scores,
    validate_spec,
)


def test_haar_one_by_one():
    for seed in range(5):
        M = build_haar_orthogonal(1, seed)
        assert M.shape == (1, 1)
        assert abs(abs(M[0, 0]) - 1.0) < 1e-15


def test_haar_orthogonal():
    M = build_haar_orthogonal(3, 7)
    assert np.max(np.abs(M.T @ M - np.eye(3))) < 1e-10
    M = build_haar_orthogonal(150, 1)
    assert np.max(np.abs(M.T @ M - np.eye(150))) < 1e-10


def test_haar_seeds_differ_and_repeat():
    a, b = build_haar_orthogonal(50, 1), build_haar_orthogonal(50, 2)
    assert np.max(np.abs(a - b)) > 0.01
    assert np.array_equal(a, build_haar_orthogonal(50, 1))


def test_haar_first_entry_is_symmetric():
    # Haar invariance: M[0, 0] has mean zero and variance 1/p
    vals = np.array([build_haar_orthogonal(5, s)[0, 0] for s in range(2000)])
    assert abs(vals.mean()) < 4 * np.sqrt(0.2 / 2000)
    assert abs(vals.var() - 0.2) < 0.03


def test_bad_p():
    with pytest.raises(ValueError):
        build_haar_orthogonal(0, 0)


def test_validate_haar_passes():
    spec = haar_spec(60, [np.sqrt(2)], "gaussian")
    report = validate_spec(spec)
    assert report.ok, report.details
    assert abs(report.sigma_norm - 1) < 1e-10 and abs(report.sigma_inv_norm - 1) < 1e-10


def test_validate_duplicated_column():
    spec = haar_spec(20, [1.0], "gaussian")
    V = spec.V.copy()
    V[:, 1] = V[:, 0]
    report = validate_spec(spec.replace(V=V))
    assert not report.ok
    assert "rank" in report.violations and "orthogonality" in report.violations
    assert "positivity" not in report.violations


def test_validate_positivity_and_prior():
    spec = haar_spec(10, [0.0, 1.0], "gaussian")
    assert "positivity" in validate_spec(spec).violations
    assert "prior" in validate_spec(spec.replace(rho=1.0)).violations


def test_diag_scaled_spectrum(spec_fig3):
    eig = np.linalg.eigvalsh(class_covariance(spec_fig3))
    assert abs(eig[-1] - 4.0) < 1e-10
    assert np.allclose(eig[:-1], 1.0, atol=1e-10)
    report = validate_spec(spec_fig3)
    assert abs(report.sigma_norm - 4.0) < 1e-10
    # row scaling of a Haar matrix breaks exact signal/noise orthogonality
    assert report.checks["rank"] and report.checks["positivity"]
    assert report.max_orthogonality_violation > 1e-4


def test_class_mean(spec_fig3):
    mu = class_mean(spec_fig3)
    expected = 1.5 * spec_fig3.V[:, 0] + 0.5 * spec_fig3.V[:, 1]
    assert np.allclose(mu, expected, atol=1e-14)


def test_spec_is_immutable(spec_small):
    with pytest.raises(ValueError):
        spec_small.V[0, 0] = 1.0
    assert spec_small == spec_small.replace()
    assert spec_small != spec_small.replace(rho=0.3)


def test_spec_rejects_bad_shapes():
    with pytest.raises(ValueError):
        LfmmSpec(V=np.ones((3, 2)), s=[1.0], noise_laws=("gaussian",) * 3)
    with pytest.raises(ValueError):
        LfmmSpec(V=np.eye(3), s=[1.0], noise_laws=("gaussian",) * 2)


def test_fourth_moments():
    rng = np.random.default_rng(0)
    for law in NoiseLaw:
        e = law.sample(rng, 400_000)
        assert abs(e.mean()) < 0.01
        assert abs(np.mean(e**2) - 1) < 0.01
        assert abs(np.mean(e**4) - law.fourth_moment) < 0.05


def test_sample_dataset_moments():
    p = 8
    spec = haar_spec(p, [1.5, 0.5], ["rademacher", "uniform"] + ["gaussian"] * (p - 2), 0.3, 1)
    data = sample_dataset(spec, 200_000, 5)
    assert data.X.shape == (p, 200_000)
    assert abs(np.mean(data.y == -1) - 0.3) < 0.005
    mu = class_mean(spec)
    pos = data.X[:, data.y == 1]
    assert np.max(np.abs(pos.mean(axis=1) - mu)) < 0.02
    assert np.max(np.abs(np.cov(pos) - class_covariance(spec))) < 0.03


def test_sample_dataset_deterministic(spec_small):
    a, b = sample_dataset(spec_small, 30, 9), sample_dataset(spec_small, 30, 9)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def test_sample_scores_match_explicit(spec_small):
    beta = np.random.default_rng(0).standard_normal(spec_small.p)
    scores, y = sample_scores(spec_small, beta, 5000, np.random.default_rng(4), chunk=777)
    data = sample_dataset(spec_small, 5000, np.random.default_rng(4))
    # same generator stream when drawn in one chunk
    s1, y1 = sample_scores(spec_small, beta, 5000, np.random.default_rng(4), chunk=5000)
    assert np.array_equal(y1, data.y)
    assert np.allclose(s1, data.X.T @ beta, atol=1e-10)
    assert scores.shape == y.shape == (5000,)


def test_equivalent_gmm_shares_moments():
    spec = haar_spec(10, [1.0], ["uniform"] * 10, 0.4, 2)
    gmm = equivalent_gmm(spec)
    assert all(law is NoiseLaw.GAUSSIAN for law in gmm.noise_laws)
    assert np.array_equal(class_mean(gmm), class_mean(spec))
    assert np.array_equal(class_covariance(gmm), class_covariance(spec))
    assert gmm.rho == spec.rho
