"""Trace and signal-subspace functionals of the resolvent Q = (lam I + theta Sigma)^-1.

Sigma = V V' is diagonalized once; every query afterwards costs O(p q).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import LfmmSpec


@dataclass(frozen=True, eq=False)
class SpectralCache:
    """Spectrum of Sigma plus the projections needed for signal responses.

    ``proj`` is ``V_info' U`` (q x p) where ``U`` holds the eigenvectors, so that
    ``V_info' Q V_info = proj diag(1 / (lam + theta sigma_i)) proj'`` holds for any
    V, orthogonal signal/noise subspaces or not.
    """

    sigma_eigs: np.ndarray
    eigvecs: np.ndarray
    proj: np.ndarray
    gram: np.ndarray
    V_info: np.ndarray
    s: np.ndarray
    n: int
    lam: float
    normalization: str = "n"

    @property
    def p(self) -> int:
        return self.sigma_eigs.size

    @property
    def q(self) -> int:
        return self.s.size

    @property
    def divisor(self) -> float:
        """Normalization of the trace in the score-variance term."""
        return float(self.n if self.normalization == "n" else self.p)

    def with_lambda(self, lam: float) -> "SpectralCache":
        if lam <= 0:
            raise ValueError("lambda must be positive")
        return replace(self, lam=float(lam))

    def resolvent_diag(self, theta: float) -> np.ndarray:
        return 1.0 / (self.lam + theta * self.sigma_eigs)

    def signal_matrix(self, theta: float) -> np.ndarray:
        """V_info' Q V_info (q x q)."""
        return (self.proj * self.resolvent_diag(theta)) @ self.proj.T

    def apply_resolvent(self, theta: float, vec: np.ndarray) -> np.ndarray:
        U = self.eigvecs
        return U @ (self.resolvent_diag(theta) * (U.T @ vec))

    def apply_sqrt_sigma(self, vec: np.ndarray) -> np.ndarray:
        U = self.eigvecs
        return U @ (np.sqrt(self.sigma_eigs) * (U.T @ vec))


def build_cache(spec: LfmmSpec, n: int, lam: float, normalization: str = "n") -> SpectralCache:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if normalization not in ("n", "p"):
        raise ValueError("normalization must be 'n' or 'p'")
    Sigma = spec.V @ spec.V.T
    try:
        eigs, U = np.linalg.eigh(Sigma)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition of Sigma failed: {exc}") from exc
    order = np.argsort(eigs)[::-1]
    eigs, U = eigs[order], U[:, order]
    # eigenvalues at round-off level relative to the top one mean a singular Sigma
    if eigs[-1] <= eigs.size * np.finfo(float).eps * max(eigs[0], 0.0):
        raise ArithmeticError(f"Sigma is not positive definite (min eigenvalue {eigs[-1]:.3e})")
    V_info = spec.V_info.copy()
    for arr in (eigs, U, V_info):
        arr.setflags(write=False)
    return SpectralCache(
        sigma_eigs=eigs,
        eigvecs=U,
        proj=V_info.T @ U,
        gram=V_info.T @ V_info,
        V_info=V_info,
        s=np.array(spec.s),
        n=int(n),
        lam=float(lam),
        normalization=normalization,
    )


def _check_theta(theta):
    if theta < 0:
        raise ValueError(f"theta must be nonnegative, got {theta}")


def kappa_of_theta(cache: SpectralCache, theta: float) -> float:
    """(1/n) tr(Sigma Q)."""
    _check_theta(theta)
    return float(np.sum(cache.sigma_eigs * cache.resolvent_diag(theta)) / cache.n)


def sigma2_of(cache: SpectralCache, theta: float, gamma: float) -> float:
    """(gamma^2 / n) tr((Q Sigma)^2); the divisor is p if the cache says so."""
    _check_theta(theta)
    qs = cache.sigma_eigs * cache.resolvent_diag(theta)
    return float(gamma**2 * np.sum(qs**2) / cache.divisor)


def signal_response(cache: SpectralCache, theta: float, eta: float, omega) -> tuple[float, np.ndarray]:
    """(m, psi) with psi_k = v_k' Q xi, m = mu' Q xi and xi = V_info (eta s + omega)."""
    _check_theta(theta)
    coef = eta * cache.s + np.asarray(omega, dtype=float)
    psi = cache.signal_matrix(theta) @ coef
    return float(cache.s @ psi), psi


def signal_response_subspace(cache: SpectralCache, theta: float, eta: float, omega):
    """Same as ``signal_response`` via G (lam I + theta G)^-1, exact only when
    the signal span is orthogonal to the noise directions."""
    G = cache.gram
    coef = eta * cache.s + np.asarray(omega, dtype=float)
    psi = G @ np.linalg.solve(cache.lam * np.eye(cache.q) + theta * G, coef)
    return float(cache.s @ psi), psi


def dense_resolvent(Sigma: np.ndarray, lam: float, theta: float) -> np.ndarray:
    """Explicit (lam I + theta Sigma)^-1, for cross-checks at small p."""
    return np.linalg.inv(lam * np.eye(Sigma.shape[0]) + theta * Sigma)
