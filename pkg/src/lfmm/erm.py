"""Ridge-regularized ERM training and Monte Carlo validation runs."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fixed_point import FixedPoint
from .losses import get_loss
from .model import Dataset, LfmmSpec, sample_dataset, sample_scores
from .spectral import SpectralCache

log = logging.getLogger(__name__)


class TrainingError(ArithmeticError):
    def __init__(self, message, iterations=None, grad_norm=None):
        super().__init__(message)
        self.iterations = iterations
        self.grad_norm = grad_norm


@dataclass
class TrainedClassifier:
    beta: np.ndarray
    objective_value: float
    grad_norm: float
    newton_iterations: int
    objective_trace: list = field(default_factory=list)


def objective(beta, data: Dataset, loss, lam: float) -> float:
    loss = get_loss(loss)
    return float(np.mean(loss.value(data.X.T @ beta, data.y)) + 0.5 * lam * beta @ beta)


def _gradient(beta, data, loss, lam):
    scores = data.X.T @ beta
    return data.X @ loss.grad(scores, data.y) / data.n + lam * beta, scores


def train(data: Dataset, loss, lam: float, tol: float = 1e-10, max_iter: int = 100) -> TrainedClassifier:
    """Minimize (1/n) sum loss(x_i' beta, y_i) + (lam/2) |beta|^2.

    Square loss is solved directly; other losses by Newton's method with
    Armijo backtracking until the gradient norm is at most ``tol``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    loss = get_loss(loss)
    X, y, n = data.X, data.y.astype(float), data.n
    p = X.shape[0]
    if loss.gradient_is_linear:
        beta = np.linalg.solve(X @ X.T / n + lam * np.eye(p), X @ y / n)
        g, _ = _gradient(beta, data, loss, lam)
        f = objective(beta, data, loss, lam)
        return TrainedClassifier(beta, f, float(np.linalg.norm(g)), 0, [f])

    beta = np.zeros(p)
    f = objective(beta, data, loss, lam)
    trace = [f]
    gnorm = np.inf
    for it in range(max_iter + 1):
        g, scores = _gradient(beta, data, loss, lam)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return TrainedClassifier(beta, f, gnorm, it, trace)
        if it == max_iter:
            break
        H = (X * loss.hess(scores, y)) @ X.T / n + lam * np.eye(p)
        direction = -np.linalg.solve(H, g)
        slope = g @ direction
        t = 1.0
        while True:
            cand = beta + t * direction
            f_new = objective(cand, data, loss, lam)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if f_new > f:
            # rounding floor reached; only the gradient test can certify optimality
            break
        beta, f = cand, f_new
        trace.append(f)
    raise TrainingError(
        f"Newton did not reach |grad| <= {tol:g} (|grad| = {gnorm:.3e})",
        iterations=len(trace) - 1,
        grad_norm=gnorm,
    )


def stationarity_residual(clf, data: Dataset, loss, lam: float) -> float:
    """|lam beta + (1/n) sum loss'(beta'x_i, y_i) x_i| / max(1, |lam beta|)."""
    beta = clf.beta if isinstance(clf, TrainedClassifier) else np.asarray(clf)
    g, _ = _gradient(beta, data, get_loss(loss), lam)
    return float(np.linalg.norm(g) / max(1.0, np.linalg.norm(lam * beta)))


def sample_equivalent_classifier(fp: FixedPoint, cache: SpectralCache, seed) -> np.ndarray:
    """One draw of (lam I + theta Sigma)^-1 (eta mu + sum omega_k v_k + gamma Sigma^1/2 u),
    u ~ N(0, I_p / n)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    par = fp.params
    xi = cache.V_info @ (par.eta * cache.s + par.omega)
    u = rng.standard_normal(cache.p) / np.sqrt(cache.n)
    return cache.apply_resolvent(par.theta, xi + par.gamma * cache.apply_sqrt_sigma(u))


@dataclass
class McReport:
    """Per-trial results of a Monte Carlo run, ordered by trial index."""

    train_acc: np.ndarray
    test_acc: np.ndarray
    seeds: list
    signal_proj: np.ndarray
    noise_proj: np.ndarray
    failures: dict = field(default_factory=dict)
    scores: list | None = None

    @property
    def trials(self) -> int:
        return len(self.seeds)

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.test_acc)

    @property
    def test_mean(self) -> float:
        return float(np.mean(self.test_acc[self.ok]))

    @property
    def test_std(self) -> float:
        return float(np.std(self.test_acc[self.ok], ddof=1)) if self.ok.sum() > 1 else 0.0

    @property
    def train_mean(self) -> float:
        return float(np.mean(self.train_acc[self.ok]))

    @property
    def train_std(self) -> float:
        return float(np.std(self.train_acc[self.ok], ddof=1)) if self.ok.sum() > 1 else 0.0

    def summary(self) -> dict:
        return {
            "trials": self.trials,
            "failed": len(self.failures),
            "train_mean": self.train_mean,
            "train_std": self.train_std,
            "test_mean": self.test_mean,
            "test_std": self.test_std,
            "seeds": self.seeds,
            "failures": {str(k): v for k, v in self.failures.items()},
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            q = self.signal_proj.shape[1] if self.signal_proj.ndim == 2 else 0
            w.writerow(
                ["trial", "seed", "train_acc", "test_acc"]
                + [f"beta_v{k + 1}" for k in range(q)]
                + ["beta_v_noise"]
            )
            for i in range(self.trials):
                w.writerow(
                    [i, self.seeds[i], repr(float(self.train_acc[i])), repr(float(self.test_acc[i]))]
                    + [repr(float(v)) for v in self.signal_proj[i]]
                    + [repr(float(self.noise_proj[i]))]
                )

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _accuracy(scores, y) -> float:
    # ties count as errors
    return float(np.mean(y * scores > 0))


def _run_trial(args):
    spec_train, spec_test, loss_name, lam, n, n_test, entropy, keep_scores, tol = args
    rng = np.random.default_rng(entropy)
    data = sample_dataset(spec_train, n, rng)
    clf = train(data, loss_name, lam, tol=tol)
    train_acc = _accuracy(data.X.T @ clf.beta, data.y)
    scores, y_test = sample_scores(spec_test, clf.beta, n_test, rng)
    q = spec_train.q
    proj = spec_train.V.T @ clf.beta
    noise = proj[q] if spec_train.p > q else np.nan
    return train_acc, _accuracy(scores, y_test), proj[:q], noise, (scores if keep_scores else None)


def trial_seeds(seed: int, trials: int) -> list[int]:
    """Disjoint per-trial seeds derived from one master seed."""
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def cross_test(
    spec_train: LfmmSpec,
    spec_test: LfmmSpec,
    loss,
    lam: float,
    n: int,
    n_test: int = 100_000,
    trials: int = 100,
    seed: int = 0,
    keep_scores: bool = False,
    workers: int = 1,
    tol: float = 1e-10,
) -> McReport:
    """Train on samples of ``spec_train``, evaluate on fresh samples of ``spec_test``.

    Trial ``i`` uses seed ``trial_seeds(seed, trials)[i]`` for both its training
    and test draws, so two calls with the same seed share training labels.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    if spec_train.p != spec_test.p:
        raise ValueError("train and test specs must share the dimension p")
    loss_name = get_loss(loss).name
    seeds = trial_seeds(seed, trials)
    jobs = [(spec_train, spec_test, loss_name, lam, n, n_test, s, keep_scores, tol) for s in seeds]

    q = spec_train.q
    train_acc = np.full(trials, np.nan)
    test_acc = np.full(trials, np.nan)
    signal = np.full((trials, q), np.nan)
    noise = np.full(trials, np.nan)
    scores = [None] * trials if keep_scores else None
    failures = {}

    def collect(i, fut_result):
        try:
            tr, te, sp, npj, sc = fut_result()
        except TrainingError as exc:
            failures[i] = str(exc)
            log.warning("trial %d failed: %s", i, exc)
            return
        train_acc[i], test_acc[i], signal[i], noise[i] = tr, te, sp, npj
        if keep_scores:
            scores[i] = sc

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_trial, job) for job in jobs]
            for i, fut in enumerate(futures):
                collect(i, fut.result)
    else:
        for i, job in enumerate(jobs):
            collect(i, lambda job=job: _run_trial(job))
    return McReport(train_acc, test_acc, seeds, signal, noise, failures, scores)


def run_trials(spec: LfmmSpec, loss, lam: float, n: int, n_test: int = 100_000, trials: int = 100, seed: int = 0, **kwargs) -> McReport:
    return cross_test(spec, spec, loss, lam, n, n_test, trials, seed, **kwargs)
