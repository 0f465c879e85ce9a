"""Asymptotic accuracies, score densities and Gaussian-universality audits.

The limiting out-of-sample score is ``r = y m + sigma etilde + sum_k psi_k e_k``.
Gaussian informative factors are folded into the Gaussian part analytically,
so only non-Gaussian factors are enumerated (exactly for Rademacher, by
Gauss-Legendre for uniform).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .fixed_point import (
    DEFAULT_GH_POINTS,
    FixedPoint,
    build_grid,
    factor_rule,
    solve,
)
from .losses import get_loss
from .model import LfmmSpec, NoiseLaw, equivalent_gmm
from .spectral import build_cache


@dataclass(frozen=True)
class ScoreLaw:
    m: float
    sigma: float
    psi: np.ndarray
    laws: tuple[NoiseLaw, ...]
    rho: float = 0.5

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "psi", np.atleast_1d(np.asarray(self.psi, dtype=float)))
        object.__setattr__(self, "laws", tuple(NoiseLaw(x) for x in self.laws))

    @classmethod
    def from_fixed_point(cls, fp: FixedPoint, spec: LfmmSpec) -> "ScoreLaw":
        d = fp.derived
        return cls(d.m, float(np.sqrt(d.sigma2)), d.psi, spec.informative_laws, spec.rho)

    def cells(self, points: int = DEFAULT_GH_POINTS):
        """(offsets, weights, sigma_eff): r | y ~ y m + offset + sigma_eff * N(0, 1)."""
        gauss = np.array([law is NoiseLaw.GAUSSIAN for law in self.laws], dtype=bool)
        sigma_eff = float(np.sqrt(self.sigma**2 + np.sum(self.psi[gauss] ** 2)))
        rules = [factor_rule(law, points) for law, g in zip(self.laws, gauss) if not g]
        coefs = self.psi[~gauss]
        if not rules:
            return np.zeros(1), np.ones(1), sigma_eff
        offsets, weights = [], []
        for combo in itertools.product(*[range(r[0].size) for r in rules]):
            offsets.append(sum(c * r[0][i] for c, r, i in zip(coefs, rules, combo)))
            weights.append(np.prod([r[1][i] for r, i in zip(rules, combo)]))
        return np.array(offsets), np.array(weights), sigma_eff


def _tail_prob(shift, sigma):
    """P(shift + sigma Z > 0), with the sigma = 0 indicator limit."""
    if sigma > 0:
        return norm.cdf(shift / sigma)
    return (shift > 0).astype(float)


def generalization_accuracy(law: ScoreLaw, points: int = DEFAULT_GH_POINTS) -> float:
    """P(y r > 0); for symmetric noise y r has the law of r given y = 1."""
    offsets, weights, sigma = law.cells(points)
    return float(weights @ _tail_prob(law.m + offsets, sigma))


def training_accuracy(law: ScoreLaw, loss, kappa: float, points: int = DEFAULT_GH_POINTS) -> float:
    """P(y prox(r) > 0).

    prox is increasing, so y prox(r) > 0 iff y r > kappa * phi'(0) where phi is
    the loss in margin form; the event is then a Gaussian tail in etilde.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    loss = get_loss(loss)
    threshold = kappa * float(loss.dphi(0.0))
    offsets, weights, sigma = law.cells(points)
    return float(weights @ _tail_prob(law.m + offsets - threshold, sigma))


def _class_components(law: ScoreLaw, points: int):
    offsets, weights, sigma = law.cells(points)
    for y, py in ((1.0, 1.0 - law.rho), (-1.0, law.rho)):
        if py > 0:
            # symmetric noise: offsets enter with either sign
            yield y, py, y * law.m + offsets, weights, sigma


def score_density(law: ScoreLaw, x, loss=None, kappa: float | None = None, points: int = DEFAULT_GH_POINTS):
    """Density of r (test scores) or, given ``loss`` and ``kappa``, of prox(r, y)
    (training scores), on the points ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    loss = get_loss(loss) if loss is not None else None
    for y, py, means, weights, sigma in _class_components(law, points):
        if loss is None:
            t, jac = x, 1.0
        else:
            # prox(t) = a  <=>  t = a + kappa * loss'(a, y)
            t = x + kappa * loss.grad(x, y)
            jac = 1.0 + kappa * loss.hess(x, y)
        if sigma <= 0:
            raise ValueError("density of a degenerate score law is not a function")
        dens = norm.pdf((t[..., None] - means) / sigma) @ weights / sigma
        out += py * dens * jac
    return out


def score_cdf(law: ScoreLaw, x, points: int = DEFAULT_GH_POINTS):
    """Distribution function of the test score r."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for y, py, means, weights, sigma in _class_components(law, points):
        if sigma > 0:
            out += py * (norm.cdf((x[..., None] - means) / sigma) @ weights)
        else:
            out += py * ((x[..., None] >= means) @ weights)
    return out


@dataclass
class UniversalityVerdict:
    in_distribution_universal: bool
    classifier_universal: bool
    parameter_deltas: dict
    accuracy_delta: float
    accuracy_lfmm: float
    accuracy_gmm: float
    threshold: float
    informative_gaussian: bool
    fixed_points: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "in_distribution_universal": self.in_distribution_universal,
            "classifier_universal": self.classifier_universal,
            "parameter_deltas": self.parameter_deltas,
            "accuracy_delta": self.accuracy_delta,
            "accuracy_lfmm": self.accuracy_lfmm,
            "accuracy_gmm": self.accuracy_gmm,
            "threshold": self.threshold,
            "informative_gaussian": self.informative_gaussian,
            "fixed_points": {k: fp.to_dict() for k, fp in self.fixed_points.items()},
        }


class SolveFailure(RuntimeError):
    pass


def universality_audit(
    spec: LfmmSpec,
    loss,
    lam: float,
    n: int,
    threshold: float = 1e-6,
    gh_points: int = DEFAULT_GH_POINTS,
    **solver_kwargs,
) -> UniversalityVerdict:
    """Compare the fixed points of ``spec`` and of its equivalent GMM."""
    gmm = equivalent_gmm(spec)
    cache = build_cache(spec, n, lam)
    fps = {}
    for name, model in (("lfmm", spec), ("gmm", gmm)):
        fp = solve(cache, build_grid(model, gh_points), loss, **solver_kwargs)
        if not fp.diagnostics.converged:
            raise SolveFailure(
                f"{name} fixed point did not converge (residual {fp.diagnostics.final_residual:.2e})"
            )
        fps[name] = fp
    a, b = fps["lfmm"].params, fps["gmm"].params
    deltas = {
        "theta": abs(a.theta - b.theta),
        "eta": abs(a.eta - b.eta),
        "gamma": abs(a.gamma - b.gamma),
    }
    for k, (wa, wb) in enumerate(zip(a.omega, b.omega), start=1):
        deltas[f"omega_{k}"] = abs(float(wa - wb))
    acc_l = generalization_accuracy(ScoreLaw.from_fixed_point(fps["lfmm"], spec), gh_points)
    acc_g = generalization_accuracy(ScoreLaw.from_fixed_point(fps["gmm"], gmm), gh_points)
    classifier = all(v < threshold for v in deltas.values())
    gaussian = all(law is NoiseLaw.GAUSSIAN for law in spec.informative_laws)
    return UniversalityVerdict(
        in_distribution_universal=bool(classifier and gaussian),
        classifier_universal=bool(classifier),
        parameter_deltas=deltas,
        accuracy_delta=abs(acc_l - acc_g),
        accuracy_lfmm=acc_l,
        accuracy_gmm=acc_g,
        threshold=threshold,
        informative_gaussian=gaussian,
        fixed_points=fps,
    )
