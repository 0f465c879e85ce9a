"""Smooth convex margin losses, their proximal maps and the h-mapping.

Every loss here is a function of the margin ``u = y * yhat``:
``loss(yhat, y) = phi(y * yhat)``.  Derivatives with respect to ``yhat`` are
``y phi'(u)`` and ``phi''(u)``.  Where ``phi''`` jumps (square hinge) the left
limit in ``yhat`` is used, which for ``y = -1`` is the right limit in ``u``.

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

NON_SMOOTH = {"hinge", "absolute"}


@dataclass(frozen=True)
class ProxEvaluation:
    prox_value: np.ndarray
    h_value: np.ndarray
    h_prime: np.ndarray


class Loss:
    name: str = ""
    has_closed_form_prox: bool = True
    gradient_is_linear: bool = False
    # True when gaussian_h_moments is available
    gaussian_closed_form: bool = False

    # margin-form pieces, overridden per loss
    def phi(self, u):
        raise NotImplementedError

    def dphi(self, u):
        raise NotImplementedError

    def d2phi_left(self, u, y):
        """phi'' at u, using the left limit in yhat = y * u at kinks."""
        raise NotImplementedError

    def prox_margin(self, kappa, tau):
        """argmin_u phi(u) + (u - tau)^2 / (2 kappa)."""
        raise NotImplementedError

    def gaussian_h_moments(self, kappa, mean, sd):
        """(E[h'], E[h_u], E[h_u^2]) for a margin u ~ N(mean, sd^2), where
        h = y h_u.  Only for losses whose h is piecewise linear."""
        raise NotImplementedError

    def value(self, yhat, y):
        return self.phi(np.multiply(y, yhat))

    def grad(self, yhat, y):
        return np.multiply(y, self.dphi(np.multiply(y, yhat)))

    def hess(self, yhat, y):
        return self.d2phi_left(np.multiply(y, yhat), y)

    def prox(self, kappa, t, y) -> ProxEvaluation:
        if not np.all(np.asarray(kappa) > 0):
            raise ValueError(f"kappa must be positive, got {kappa}")
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        a = y * self.prox_margin(kappa, y * t)
        curv = self.hess(a, y)
        return ProxEvaluation(
            prox_value=a,
            h_value=(a - t) / kappa,
            h_prime=-curv / (1.0 + kappa * curv),
        )

    def __repr__(self):
        return f"{type(self).__name__}()"


class SquareLoss(Loss):
    """(y - yhat)^2 / 2."""

    name = "square"
    gradient_is_linear = True

    def phi(self, u):
        return 0.5 * (1.0 - u) ** 2

    def dphi(self, u):
        return u - 1.0

    def d2phi_left(self, u, y):
        return np.ones_like(np.asarray(u, dtype=float))

    def prox_margin(self, kappa, tau):
        return (tau + kappa) / (1.0 + kappa)


class LogisticLoss(Loss):
    """-log(1 / (1 + exp(-y yhat)))."""

    name = "logistic"
    has_closed_form_prox = False

    def __init__(self, tol: float = 1e-13, max_iter: int = 100):
        self.tol = tol
        self.max_iter = max_iter

    def phi(self, u):
        u = np.asarray(u, dtype=float)
        # log(1 + e^{-u}) without overflow
        return np.maximum(-u, 0.0) + np.log1p(np.exp(-np.abs(u)))

    def dphi(self, u):
        return -expit(-np.asarray(u, dtype=float))

    def d2phi_left(self, u, y):
        sig = expit(np.asarray(u, dtype=float))
        return sig * (1.0 - sig)

    def prox_margin(self, kappa, tau):
        # root of g(u) = u - kappa * sigmoid(-u) - tau, bracketed by [tau, tau + kappa]
        # Newton falls back to bisection when it leaves the bracket or fails to
        # halve the step from two iterations back (rtsafe rule)
        tau, kappa = np.broadcast_arrays(np.asarray(tau, float), np.asarray(kappa, float))
        lo, hi = tau.copy(), tau + kappa
        u = tau + 0.5 * kappa
        dx_old = hi - lo
        dx = dx_old.copy()
        scale = self.tol * np.maximum(1.0, np.abs(tau))
        for _ in range(self.max_iter):
            sig = expit(-u)
            g = u - kappa * sig - tau
            if np.all((np.abs(g) <= scale) | (hi - lo <= scale)):
                break
            pos = g > 0
            hi = np.where(pos, u, hi)
            lo = np.where(pos, lo, u)
            newton = u - g / (1.0 + kappa * sig * (1.0 - sig))
            bisect = (newton <= lo) | (newton >= hi) | (np.abs(2.0 * (newton - u)) > np.abs(dx_old))
            dx_old = dx
            u_new = np.where(bisect, 0.5 * (lo + hi), newton)
            dx = u_new - u
            u = u_new
        return u


class SquareHingeLoss(Loss):
    """max(0, 1 - y yhat)^2."""

    name = "square_hinge"

    def phi(self, u):
        return np.maximum(0.0, 1.0 - np.asarray(u, dtype=float)) ** 2

    def dphi(self, u):
        return -2.0 * np.maximum(0.0, 1.0 - np.asarray(u, dtype=float))

    def d2phi_left(self, u, y):
        u = np.asarray(u, dtype=float)
        active = (u < 1.0) | ((u == 1.0) & (np.asarray(y) > 0))
        return np.where(active, 2.0, 0.0)

    def prox_margin(self, kappa, tau):
        tau = np.asarray(tau, dtype=float)
        return np.where(tau >= 1.0, tau, (tau + 2.0 * kappa) / (1.0 + 2.0 * kappa))

    gaussian_closed_form = True

    def gaussian_h_moments(self, kappa, mean, sd):
        # h_u = c (1 - u) on u < 1, else 0, with c = 2 / (1 + 2 kappa); with
        # a = (1 - mean) / sd the truncated moments of a - Z over Z < a give
        # E[(1-u)1] = sd (a Phi + phi), E[(1-u)^2 1] = sd^2 ((a^2 + 1) Phi + a phi)
        c = 2.0 / (1.0 + 2.0 * kappa)
        mean = np.asarray(mean, dtype=float)
        gap = 1.0 - mean
        if sd <= 0:
            active = (gap > 0).astype(float)
            return -c * active, c * gap * active, c**2 * gap**2 * active
        a = gap / sd
        Phi, phi = norm.cdf(a), norm.pdf(a)
        return -c * Phi, c * sd * (a * Phi + phi), c**2 * sd**2 * ((a * a + 1.0) * Phi + a * phi)


LOSSES = {cls.name: cls for cls in (SquareLoss, LogisticLoss, SquareHingeLoss)}


def get_loss(name: str | Loss) -> Loss:
    """Loss instance by name ("square", "logistic", "square_hinge")."""
    if isinstance(name, Loss):
        return name
    if name in NON_SMOOTH:
        raise ValueError(
            f"{name!r} loss is not continuously differentiable; only smooth losses "
            f"{sorted(LOSSES)} are supported"
        )
    try:
        loss = LOSSES[name]()
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
    if loss.grad(0.0, 1.0) == 0 or loss.grad(0.0, -1.0) == 0:
        raise ValueError(f"{name!r} has zero derivative at the origin")
    return loss


def loss_value(loss, yhat, y):
    return get_loss(loss).value(yhat, y)


def loss_grad(loss, yhat, y):
    return get_loss(loss).grad(yhat, y)


def loss_hess(loss, yhat, y):
    return get_loss(loss).hess(yhat, y)


def prox(loss, kappa, t, y) -> ProxEvaluation:
    return get_loss(loss).prox(kappa, t, y)


def h_map(loss, kappa, t, y):
    """(prox(t) - t) / kappa."""
    return get_loss(loss).prox(kappa, t, y).h_value


def prox_oracle(loss, kappa: float, t: float, y: float, tol: float = 1e-12) -> float:
    """Scalar prox by bisection on the derivative of the prox objective.

    Independent of ``Loss.prox_margin``: uses only the loss gradient.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    loss = get_loss(loss)

    def dobj(a):
        return float(loss.grad(a, y)) + (a - t) / kappa

    g0 = float(loss.grad(t, y))
    lo, hi = (t - kappa * g0, t) if g0 > 0 else (t, t - kappa * g0)
    if lo == hi:
        return float(t)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if dobj(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)
