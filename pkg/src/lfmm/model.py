"""Linear factor mixture model: specification, validation, sampling.

A sample is ``x = sum_k (y s_k + e_k) v_k`` with labels ``y = -1`` drawn with
probability ``rho``.  Only the first ``q`` factors carry signal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SQRT3 = np.sqrt(3.0)
ORTHOGONALITY_RTOL = 1e-8


class NoiseLaw(str, enum.Enum):
    """Standardized (mean 0, variance 1) symmetric noise distributions."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform"

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self is NoiseLaw.GAUSSIAN:
            return rng.standard_normal(size)
        if self is NoiseLaw.RADEMACHER:
            return 2.0 * rng.integers(0, 2, size=size) - 1.0
        return rng.uniform(-SQRT3, SQRT3, size=size)

    @property
    def fourth_moment(self) -> float:
        return {"gaussian": 3.0, "rademacher": 1.0, "uniform": 9.0 / 5.0}[self.value]


def _as_laws(laws) -> tuple[NoiseLaw, ...]:
    return tuple(NoiseLaw(law) for law in laws)


@dataclass(frozen=True, eq=False)
class LfmmSpec:
    """Generative description of an LFMM.

    ``V`` holds the factor directions as columns; ``s`` has length ``q`` and
    lists the signal strengths of the informative factors ``v_1 .. v_q``.
    """

    V: np.ndarray
    s: np.ndarray
    noise_laws: tuple[NoiseLaw, ...]
    rho: float = 0.5

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        s = np.atleast_1d(np.array(self.s, dtype=float))
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise ValueError(f"V must be square, got shape {V.shape}")
        if s.ndim != 1 or not 1 <= s.size <= V.shape[0]:
            raise ValueError("s must be a vector of length 1..p")
        laws = _as_laws(self.noise_laws)
        if len(laws) != V.shape[0]:
            raise ValueError(f"expected {V.shape[0]} noise laws, got {len(laws)}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        V.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "noise_laws", laws)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def p(self) -> int:
        return self.V.shape[0]

    @property
    def q(self) -> int:
        return self.s.size

    @property
    def V_info(self) -> np.ndarray:
        return self.V[:, : self.q]

    @property
    def informative_laws(self) -> tuple[NoiseLaw, ...]:
        return self.noise_laws[: self.q]

    def replace(self, **changes) -> "LfmmSpec":
        kwargs = dict(V=self.V, s=self.s, noise_laws=self.noise_laws, rho=self.rho)
        kwargs.update(changes)
        return LfmmSpec(**kwargs)

    def __eq__(self, other):
        if not isinstance(other, LfmmSpec):
            return NotImplemented
        return (
            self.rho == other.rho
            and self.noise_laws == other.noise_laws
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.V, other.V)
        )

    __hash__ = None


@dataclass
class Dataset:
    """Feature columns ``X`` (p x n) with labels ``y`` in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.X.shape[1] != self.y.shape[0]:
            raise ValueError("X must have one column per label")
        if not np.all(np.abs(self.y) == 1):
            raise ValueError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class ValidationReport:
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)
    max_orthogonality_violation: float = 0.0
    mu_norm: float = float("nan")
    sigma_norm: float = float("nan")
    sigma_inv_norm: float = float("nan")

    @property
    def violations(self) -> list[str]:
        return [name for name, passed in self.checks.items() if not passed]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": dict(self.checks),
            "violations": self.violations,
            "details": dict(self.details),
            "max_orthogonality_violation": self.max_orthogonality_violation,
            "mu_norm": self.mu_norm,
            "sigma_norm": self.sigma_norm,
            "sigma_inv_norm": self.sigma_inv_norm,
        }


def build_haar_orthogonal(p: int, seed: int) -> np.ndarray:
    """Haar-distributed p x p orthogonal matrix (Gaussian + QR, diag(R) > 0)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((p, p))
    Q, R = np.linalg.qr(Z)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def haar_spec(p, s, noise_laws, rho=0.5, seed=0, diag_scale=None) -> LfmmSpec:
    """Spec with ``V = diag(diag_scale) H`` for Haar ``H`` (``V = H`` by default).

    ``noise_laws`` may be a single law name, applied to every factor.
    """
    H = build_haar_orthogonal(p, seed)
    if diag_scale is not None:
        d = np.ones(p)
        scale = np.atleast_1d(np.asarray(diag_scale, dtype=float))
        d[: scale.size] = scale
        H = d[:, None] * H
    if isinstance(noise_laws, (str, NoiseLaw)):
        noise_laws = [noise_laws] * p
    return LfmmSpec(V=H, s=s, noise_laws=tuple(noise_laws), rho=rho)


def class_mean(spec: LfmmSpec) -> np.ndarray:
    return spec.V_info @ spec.s


def class_covariance(spec: LfmmSpec) -> np.ndarray:
    return spec.V @ spec.V.T


def validate_spec(spec: LfmmSpec) -> ValidationReport:
    """Check the model assumptions; failures are reported, never raised."""
    report = ValidationReport()
    V, q = spec.V, spec.q

    report.checks["positivity"] = bool(np.all(spec.s > 0))
    if not report.checks["positivity"]:
        report.details["positivity"] = f"non-positive signal strengths: {spec.s.tolist()}"

    report.checks["prior"] = 0.0 < spec.rho < 1.0
    if not report.checks["prior"]:
        report.details["prior"] = f"rho={spec.rho} outside (0, 1)"

    rank = np.linalg.matrix_rank(V)
    report.checks["rank"] = bool(rank == spec.p)
    if not report.checks["rank"]:
        report.details["rank"] = f"rank(V) = {rank} < p = {spec.p}"

    norms = np.linalg.norm(V, axis=0)
    if q < spec.p:
        cross = np.abs(V[:, :q].T @ V[:, q:])
        scale = np.outer(norms[:q], norms[q:])
        rel = cross / np.maximum(scale, np.finfo(float).tiny)
        report.max_orthogonality_violation = float(rel.max())
    report.checks["orthogonality"] = report.max_orthogonality_violation <= ORTHOGONALITY_RTOL
    if not report.checks["orthogonality"]:
        report.details["orthogonality"] = (
            f"max |v_j'v_k| / (|v_j||v_k|) = {report.max_orthogonality_violation:.3e}"
            f" for j <= q < k exceeds {ORTHOGONALITY_RTOL:g}"
        )

    report.mu_norm = float(np.linalg.norm(class_mean(spec)))
    sv = np.linalg.svd(V, compute_uv=False)
    report.sigma_norm = float(sv[0] ** 2)
    report.sigma_inv_norm = float(1.0 / sv[-1] ** 2) if sv[-1] > 0 else float("inf")
    return report


def _draw_factors(spec: LfmmSpec, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Factor matrix z (p x n) with z_k = y s_k + e_k."""
    n = y.shape[0]
    z = np.empty((spec.p, n))
    # group factors by law so each law costs one generator call
    laws = np.array([law.value for law in spec.noise_laws])
    for law in NoiseLaw:
        idx = np.flatnonzero(laws == law.value)
        if idx.size:
            z[idx] = law.sample(rng, (idx.size, n))
    z[: spec.q] += np.outer(spec.s, y)
    return z


def draw_labels(rho: float, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random(n) < rho, -1, 1).astype(np.int64)


def sample_dataset(spec: LfmmSpec, n: int, seed) -> Dataset:
    """Draw ``n`` labelled samples; ``seed`` may be an int, SeedSequence or Generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = draw_labels(spec.rho, n, rng)
    z = _draw_factors(spec, y, rng)
    return Dataset(X=spec.V @ z, y=y)


def sample_scores(spec: LfmmSpec, beta: np.ndarray, n: int, rng, chunk: int = 20000):
    """Scores ``beta' x`` and labels for ``n`` fresh samples, without storing X."""
    w = spec.V.T @ beta
    ys, scores = [], []
    done = 0
    while done < n:
        b = min(chunk, n - done)
        y = draw_labels(spec.rho, b, rng)
        scores.append(w @ _draw_factors(spec, y, rng))
        ys.append(y)
        done += b
    return np.concatenate(scores), np.concatenate(ys)


def equivalent_gmm(spec: LfmmSpec) -> LfmmSpec:
    """Same means and covariance, every noise law replaced by the Gaussian."""
    return spec.replace(noise_laws=(NoiseLaw.GAUSSIAN,) * spec.p)
