"""JSON experiment configuration.

Example::

    {
      "model": {
        "p": 200, "s": [1.5, 0.5], "rho": 0.5,
        "v_construction": "diag_scaled_haar", "diag_scale": [2.0],
        "noise_laws": {"default": "gaussian", "overrides": {"1": "rademacher"}},
        "seed": 0
      },
      "loss": "logistic",
      "lambda": {"log2_start": -9, "log2_stop": 6},
      "n": 800, "n_test": 100000, "trials": 100,
      "gh_points": 48,
      "solver": {"damping": 0.5, "tol": 1e-10, "max_iter": 2000},
      "seed": 1
    }

``v_construction`` is one of ``haar``, ``diag_scaled_haar`` or
``explicit_matrix_file``.  Explicit matrices are read row-major from ``.npy``
or from CSV (comma separated, one matrix row per line, lines starting with
``#`` are header comments).  Noise-law override keys are 1-based factor indices.

``allow_nonorthogonal`` and ``allow_zero_signal`` turn the corresponding
validation failures into warnings (for non-orthogonal signal/noise subspaces
and for chance-level models with s_k = 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fixed_point import DEFAULT_GH_POINTS
from .losses import get_loss
from .model import LfmmSpec, NoiseLaw, haar_spec

DEFAULT_LAMBDA_GRID = tuple(2.0**k for k in range(-9, 7))


class ConfigError(ValueError):
    pass


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"matrix file {path} does not exist")
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def write_matrix(path, M: np.ndarray):
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, M)
    else:
        np.savetxt(path, M, delimiter=",", header=f"rows={M.shape[0]} cols={M.shape[1]} row-major")


def _noise_laws(raw, p: int) -> tuple[NoiseLaw, ...]:
    if raw is None:
        raw = "gaussian"
    if isinstance(raw, str):
        return (NoiseLaw(raw),) * p
    if isinstance(raw, dict):
        laws = [NoiseLaw(raw.get("default", "gaussian"))] * p
        for key, law in raw.get("overrides", {}).items():
            idx = int(key) - 1
            if not 0 <= idx < p:
                raise ConfigError(f"noise law override index {key} outside 1..{p}")
            laws[idx] = NoiseLaw(law)
        return tuple(laws)
    laws = tuple(NoiseLaw(x) for x in raw)
    if len(laws) != p:
        raise ConfigError(f"noise_laws lists {len(laws)} laws for p = {p}")
    return laws


def build_spec(model: dict, base_dir=".") -> LfmmSpec:
    try:
        p = int(model["p"])
        s = np.atleast_1d(np.asarray(model["s"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"model section is missing {exc}") from None
    if "q" in model and int(model["q"]) != s.size:
        raise ConfigError(f"q = {model['q']} but s has {s.size} entries")
    rho = float(model.get("rho", 0.5))
    try:
        laws = _noise_laws(model.get("noise_laws"), p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kind = model.get("v_construction", "haar")
    seed = int(model.get("seed", 0))
    if kind == "haar":
        return haar_spec(p, s, laws, rho, seed)
    if kind == "diag_scaled_haar":
        return haar_spec(p, s, laws, rho, seed, diag_scale=model.get("diag_scale", [1.0]))
    if kind == "explicit_matrix_file":
        V = read_matrix(Path(base_dir) / model["matrix_file"])
        if V.shape != (p, p):
            raise ConfigError(f"matrix file holds {V.shape}, expected {(p, p)}")
        return LfmmSpec(V=V, s=s, noise_laws=laws, rho=rho)
    raise ConfigError(f"unknown v_construction {kind!r}")


def _lambdas(raw) -> list[float]:
    if raw is None:
        return list(DEFAULT_LAMBDA_GRID)
    if isinstance(raw, (int, float)):
        lams = [float(raw)]
    elif isinstance(raw, dict):
        start, stop = raw.get("log2_start", -9), raw.get("log2_stop", 6)
        num = raw.get("num", int(round(stop - start)) + 1)
        lams = list(np.logspace(start, stop, num, base=2.0))
    else:
        lams = [float(x) for x in raw]
    if not lams or any(lam <= 0 for lam in lams):
        raise ConfigError("lambda values must be a nonempty list of positive numbers")
    return lams


@dataclass
class ExperimentConfig:
    spec: LfmmSpec
    loss: str
    lambdas: list
    n: int
    n_test: int = 100_000
    trials: int = 100
    gh_points: int = DEFAULT_GH_POINTS
    solver: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "out"
    workers: int = 1
    allow_nonorthogonal: bool = False
    allow_zero_signal: bool = False
    threshold: float = 1e-6
    bins: int = 200
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "ExperimentConfig":
        if "model" not in raw:
            raise ConfigError("config needs a 'model' section")
        loss = raw.get("loss", "square")
        try:
            get_loss(loss)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        solver = dict(raw.get("solver", {}))
        unknown = set(solver) - {"damping", "tol", "max_iter", "adaptive", "min_damping", "patience", "polish"}
        if unknown:
            raise ConfigError(f"unknown solver settings {sorted(unknown)}")
        cfg = cls(
            spec=build_spec(raw["model"], base_dir),
            loss=loss,
            lambdas=_lambdas(raw.get("lambda")),
            n=int(raw.get("n", 800)),
            n_test=int(raw.get("n_test", 100_000)),
            trials=int(raw.get("trials", 100)),
            gh_points=int(raw.get("gh_points", DEFAULT_GH_POINTS)),
            solver=solver,
            seed=int(raw.get("seed", 0)),
            out=str(raw.get("out", "out")),
            workers=int(raw.get("workers", 1)),
            allow_nonorthogonal=bool(raw.get("allow_nonorthogonal", False)),
            allow_zero_signal=bool(raw.get("allow_zero_signal", False)),
            threshold=float(raw.get("threshold", 1e-6)),
            bins=int(raw.get("bins", 200)),
            raw=raw,
        )
        if cfg.n < 1 or cfg.trials < 1:
            raise ConfigError("n and trials must be positive")
        if cfg.n_test < 1:
            raise ConfigError("n_test must be positive: an empty test set was requested")
        return cfg

    @property
    def waived_checks(self) -> set:
        """Validation failures downgraded to warnings."""
        waived = set()
        if self.allow_nonorthogonal:
            waived.add("orthogonality")
        if self.allow_zero_signal and np.all(self.spec.s >= 0):
            waived.add("positivity")
        return waived

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent)
