"""Self-consistent order parameters of ridge-regularized ERM on an LFMM.

The unknowns (theta, eta, gamma, omega_1..omega_q) satisfy

    theta   = -E[dh/dr(r, y)]
    eta     =  E[y h(r, y)]
    gamma   =  sqrt(E[h(r, y)^2])
    omega_k =  E[h(r, y) e_k] + theta psi_k

with h the normalized prox displacement at curvature kappa and
``r = y m + sigma etilde + sum_k psi_k e_k``.  Expectations over
(y, e_1..e_q, etilde) are computed on a tensor-product quadrature grid.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq, root

from .losses import Loss, get_loss
from .model import SQRT3, LfmmSpec, NoiseLaw
from .spectral import SpectralCache, kappa_of_theta, sigma2_of, signal_response

log = logging.getLogger(__name__)

DEFAULT_GH_POINTS = 48
# numpy's Gauss-Hermite weights overflow somewhat above this
MAX_GH_POINTS = 256


def factor_rule(law: NoiseLaw, points: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights reproducing expectations under ``law``."""
    law = NoiseLaw(law)
    if law is NoiseLaw.GAUSSIAN:
        x, w = hermegauss(points)
        return x, w / np.sqrt(2.0 * np.pi)
    if law is NoiseLaw.RADEMACHER:
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    if law is NoiseLaw.UNIFORM:
        x, w = leggauss(points)
        return SQRT3 * x, 0.5 * w
    raise ValueError(f"no quadrature rule for noise law {law!r}")


@dataclass(frozen=True, eq=False)
class ExpectationGrid:
    """Flattened tensor grid over (y, e_1..e_q, etilde).

    Only informative factors are gridded; the noise factors never enter the
    fixed-point system.
    """

    y: np.ndarray
    e: np.ndarray
    etilde: np.ndarray
    weights: np.ndarray
    rho: float
    rules: tuple = field(default=())

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def q(self) -> int:
        return self.e.shape[1]


def build_grid(spec: LfmmSpec, gh_points: int = DEFAULT_GH_POINTS) -> ExpectationGrid:
    if not 8 <= gh_points <= MAX_GH_POINTS:
        raise ValueError(f"gh_points must lie in [8, {MAX_GH_POINTS}]")
    axes = [(np.array([-1.0, 1.0]), np.array([spec.rho, 1.0 - spec.rho]))]
    rules = []
    for law in spec.informative_laws:
        try:
            axes.append(factor_rule(law, gh_points))
        except ValueError as exc:
            raise ValueError(f"configuration error: {exc}") from None
        rules.append((law.value, axes[-1][0].size))
    axes.append(factor_rule(NoiseLaw.GAUSSIAN, gh_points))
    rules.append(("etilde", gh_points))

    nodes = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wts = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    flat = [g.ravel() for g in nodes]
    weights = np.prod([w.ravel() for w in wts], axis=0)
    return ExpectationGrid(
        y=flat[0],
        e=np.stack(flat[1:-1], axis=1),
        etilde=flat[-1],
        weights=weights,
        rho=spec.rho,
        rules=tuple(rules),
    )


@dataclass(frozen=True)
class OrderParameters:
    theta: float
    eta: float
    gamma: float
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.atleast_1d(np.asarray(self.omega, dtype=float)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.theta, self.eta, self.gamma], self.omega])

    @classmethod
    def from_vector(cls, vec) -> "OrderParameters":
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), float(vec[1]), float(vec[2]), vec[3:].copy())

    @classmethod
    def initial(cls, q: int) -> "OrderParameters":
        return cls(0.5, 0.0, 1.0, np.zeros(q))

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "eta": self.eta,
            "gamma": self.gamma,
            "omega": self.omega.tolist(),
        }


@dataclass(frozen=True)
class DerivedScalars:
    kappa: float
    m: float
    sigma2: float
    psi: np.ndarray

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "m": self.m, "sigma2": self.sigma2, "psi": self.psi.tolist()}


@dataclass
class SolveDiagnostics:
    iterations: int
    final_residual: float
    converged: bool
    theta_clamps: int = 0
    trajectory: list | None = None
    multi_solution: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.final_residual,
            "converged": self.converged,
            "theta_clamps": self.theta_clamps,
            "multi_solution": self.multi_solution,
        }


class FixedPoint(NamedTuple):
    params: OrderParameters
    derived: DerivedScalars
    diagnostics: SolveDiagnostics

    def to_dict(self) -> dict:
        return {**self.params.to_dict(), **self.derived.to_dict(), **self.diagnostics.to_dict()}


def derive(params: OrderParameters, cache: SpectralCache) -> DerivedScalars:
    kappa = kappa_of_theta(cache, params.theta)
    m, psi = signal_response(cache, params.theta, params.eta, params.omega)
    return DerivedScalars(kappa, m, sigma2_of(cache, params.theta, params.gamma), psi)


def expectations(grid: ExpectationGrid, loss, kappa, m, sigma2, psi):
    """(E[h'], E[y h], E[h^2], E[h e_k]) under the law of r on the grid."""
    loss = get_loss(loss)
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    psi = np.asarray(psi, dtype=float)
    if loss.gaussian_closed_form:
        return _expectations_closed_etilde(grid, loss, kappa, m, sigma2, psi)
    r = grid.y * m + np.sqrt(sigma2) * grid.etilde + grid.e @ psi
    ev = loss.prox(kappa, r, grid.y)
    w = grid.weights
    h = ev.h_value
    return (
        float(w @ ev.h_prime),
        float(w @ (grid.y * h)),
        float(w @ h**2),
        (w * h) @ grid.e,
    )


def _expectations_closed_etilde(grid, loss, kappa, m, sigma2, psi):
    """Same expectations with the etilde integral done in closed form.

    Used for piecewise-linear h, whose kink makes Gauss-Hermite sums jitter as
    the parameters move.  The etilde axis is the fastest-varying grid axis.
    """
    n_et = grid.rules[-1][1]
    y = grid.y.reshape(-1, n_et)[:, 0]
    e = grid.e.reshape(-1, n_et, grid.q)[:, 0]
    w = grid.weights.reshape(-1, n_et).sum(axis=1)
    hp, hu, hu2 = loss.gaussian_h_moments(kappa, m + y * (e @ psi), np.sqrt(sigma2))
    return float(w @ hp), float(w @ hu), float(w @ hu2), (w * y * hu) @ e


def step(params: OrderParameters, cache: SpectralCache, grid: ExpectationGrid, loss):
    """One application of the fixed-point map; returns (new params, derived at input)."""
    derived = derive(params, cache)
    E_hp, E_yh, E_h2, E_he = expectations(
        grid, loss, derived.kappa, derived.m, derived.sigma2, derived.psi
    )
    theta = -E_hp
    new = OrderParameters(theta, E_yh, np.sqrt(E_h2), E_he + theta * derived.psi)
    return new, derived


def _residual_map(cache, grid, loss):
    def F(x):
        return step(OrderParameters.from_vector(x), cache, grid, loss)[0].to_vector() - x

    return F


def _polish(cache, grid, loss, x0, tol):
    """Quasi-Newton root of F(x) - x with theta, gamma in log coordinates."""
    F = _residual_map(cache, grid, loss)
    if x0[0] <= 0 or x0[2] <= 0:
        return None

    def unpack(z):
        x = z.copy()
        x[0], x[2] = np.exp(z[0]), np.exp(z[2])
        return x

    def G(z):
        x = unpack(z)
        r = F(x)
        return r if np.all(np.isfinite(r)) else np.full_like(r, 1e6)

    z0 = x0.copy()
    z0[0], z0[2] = np.log(x0[0]), np.log(x0[2])
    sol = root(G, z0, method="hybr", options={"xtol": 1e-15, "maxfev": 400 * (x0.size + 1)})
    x = unpack(sol.x)
    return x, float(np.max(np.abs(F(x)))), int(sol.nfev)


def solve(
    cache: SpectralCache,
    grid: ExpectationGrid,
    loss,
    init: OrderParameters | None = None,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 2000,
    record: bool = False,
    adaptive: bool = True,
    min_damping: float = 1e-3,
    patience: int = 200,
    polish: bool = True,
) -> FixedPoint:
    """Damped Picard iteration ``x <- (1 - d) x + d F(x)``.

    With ``adaptive`` the damping is halved (down to ``min_damping``) whenever
    the residual exceeds its best value so far, and grows back towards
    ``damping`` while it improves.  Iteration stops when
    ``max |F(x) - x| <= tol``, after ``max_iter`` steps, or when the best
    residual has not improved for ``patience`` steps.  For small lambda the
    fixed point can be repelling for every damping; ``polish`` then hands the
    best iterate to a quasi-Newton root finder.  Non-convergence is reported
    through ``diagnostics.converged``, not raised.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    loss = get_loss(loss)
    params = init if init is not None else OrderParameters.initial(cache.q)
    F = _residual_map(cache, grid, loss)
    x = params.to_vector()
    trajectory = [params] if record else None
    clamps, residual, it, stale = 0, np.inf, 0, 0
    d, best, x_best = damping, np.inf, x
    for it in range(1, max_iter + 1):
        delta = F(x)
        residual = float(np.max(np.abs(delta)))
        if not np.isfinite(residual):
            log.warning("fixed-point map became non-finite at iteration %d", it)
            break
        if residual < best:
            best, x_best, stale = residual, x, 0
            if adaptive:
                d = min(1.5 * d, damping)
        else:
            stale += 1
            if adaptive:
                d = max(0.5 * d, min_damping)
        if residual <= tol or stale >= patience:
            break
        x = x + d * delta
        if x[0] < 0:
            x[0] = 0.0
            clamps += 1
        if record:
            trajectory.append(OrderParameters.from_vector(x))
    if clamps:
        log.warning("theta clamped at 0 in %d iterations", clamps)
    x, residual = x_best, best
    if residual > tol and polish:
        out = _polish(cache, grid, loss, x_best, tol)
        if out is not None and out[1] < residual:
            x, residual = out[0], out[1]
            it += out[2]
            log.info("fixed point polished by root finding, residual %.2e", residual)
    final = OrderParameters.from_vector(x)
    diag = SolveDiagnostics(
        iterations=it,
        final_residual=residual,
        converged=bool(residual <= tol),
        theta_clamps=clamps,
        trajectory=trajectory,
    )
    return FixedPoint(final, derive(final, cache), diag)


def solve_multistart(
    cache: SpectralCache,
    grid: ExpectationGrid,
    loss,
    n_starts: int = 5,
    seed: int = 0,
    disagreement: float = 1e-6,
    **kwargs,
) -> FixedPoint:
    """Solve from the default start plus ``n_starts`` random ones.

    Sets ``diagnostics.multi_solution`` if converged solutions disagree by more
    than ``disagreement``.
    """
    rng = np.random.default_rng(seed)
    base = solve(cache, grid, loss, **kwargs)
    others = []
    for _ in range(n_starts):
        init = OrderParameters(
            theta=rng.uniform(0.05, 1.0),
            eta=rng.normal(0.0, 0.5),
            gamma=rng.uniform(0.1, 2.0),
            omega=rng.normal(0.0, 0.1, cache.q),
        )
        others.append(solve(cache, grid, loss, init=init, **kwargs))
    ref = base.params.to_vector()
    for fp in others:
        if fp.diagnostics.converged and np.max(np.abs(fp.params.to_vector() - ref)) > disagreement:
            base.diagnostics.multi_solution = True
            warnings.warn("fixed-point solves from different starts disagree", RuntimeWarning)
            break
    return base


def closed_form_square_loss(cache: SpectralCache) -> FixedPoint:
    """Fixed point for the square loss via a scalar root in theta.

    With h(r, y) = (y - r) / (1 + kappa): theta (1 + kappa(theta)) = 1,
    omega = 0, eta = 1 / (1 + kappa + s'Ms) and
    gamma^2 = ((1 - m)^2 + |psi|^2) / ((1 + kappa)^2 - c), where M = V_info'QV_info
    and c is sigma^2 / gamma^2.  Holds for every noise law.
    """

    def f(theta):
        return theta * (1.0 + kappa_of_theta(cache, theta)) - 1.0

    theta = brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    kappa = kappa_of_theta(cache, theta)
    M = cache.signal_matrix(theta)
    eta = 1.0 / (1.0 + kappa + cache.s @ M @ cache.s)
    omega = np.zeros(cache.q)
    m, psi = signal_response(cache, theta, eta, omega)
    c = sigma2_of(cache, theta, 1.0)
    gamma = np.sqrt(((1.0 - m) ** 2 + psi @ psi) / ((1.0 + kappa) ** 2 - c))
    params = OrderParameters(float(theta), float(eta), float(gamma), omega)
    diag = SolveDiagnostics(iterations=0, final_residual=0.0, converged=True)
    return FixedPoint(params, derive(params, cache), diag)
