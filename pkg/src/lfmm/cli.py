"""Command line entry point: ``lfmm solve|simulate|histogram|universality``."""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .erm import cross_test, run_trials, train
from .fixed_point import build_grid, solve
from .metrics import (
    ScoreLaw,
    SolveFailure,
    generalization_accuracy,
    score_cdf,
    score_density,
    training_accuracy,
    universality_audit,
)
from .model import equivalent_gmm, sample_dataset, sample_scores, validate_spec
from .spectral import build_cache

log = logging.getLogger("lfmm")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class CommandError(RuntimeError):
    def __init__(self, kind, message, code=EXIT_FAILED, **details):
        super().__init__(message)
        self.kind, self.code, self.details = kind, code, details


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _check_spec(cfg: ExperimentConfig, spec=None):
    report = validate_spec(spec or cfg.spec)
    waived = cfg.waived_checks
    blocking = [v for v in report.violations if v not in waived]
    for v in report.violations:
        if v in waived:
            log.warning("validation check %s waived: %s", v, report.details.get(v, ""))
    if blocking:
        raise CommandError(
            "validation",
            "model validation failed: " + ", ".join(blocking),
            violations=blocking,
            report=report.to_dict(),
        )
    return report


def _solve_one(args):
    spec, loss, lam, n, gh_points, solver = args
    fp = solve(build_cache(spec, n, lam), build_grid(spec, gh_points), loss, **solver)
    law = ScoreLaw.from_fixed_point(fp, spec)
    return {
        "lambda": lam,
        "loss": loss,
        **fp.to_dict(),
        "generalization_accuracy": generalization_accuracy(law, gh_points),
        "training_accuracy": training_accuracy(law, loss, fp.derived.kappa, gh_points),
    }


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _solve_sweep(cfg: ExperimentConfig, spec=None):
    spec = spec or cfg.spec
    jobs = [(spec, cfg.loss, lam, cfg.n, cfg.gh_points, cfg.solver) for lam in cfg.lambdas]
    return _map(_solve_one, jobs, cfg.workers)


def cmd_solve(cfg: ExperimentConfig, out: Path) -> int:
    _check_spec(cfg)
    reports = _solve_sweep(cfg)
    if len(reports) == 1:
        _write_json(out / "fixed_point.json", reports[0])
    else:
        for i, rep in enumerate(reports):
            _write_json(out / f"fixed_point_{i:03d}.json", rep)
    _write_rows(
        out / "sweep.csv",
        ["lambda", "theory_acc", "theory_train_acc", "converged"],
        [(r["lambda"], r["generalization_accuracy"], r["training_accuracy"], r["converged"]) for r in reports],
    )
    failed = [r["lambda"] for r in reports if not r["converged"]]
    if failed:
        raise CommandError("non_convergence", f"fixed point did not converge for lambda in {failed}", lambdas=failed)
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    _check_spec(cfg)
    theory = _solve_sweep(cfg)
    rows, trial_rows, failures = [], [], {}
    for i, (lam, th) in enumerate(zip(cfg.lambdas, theory)):
        rep = run_trials(
            cfg.spec, cfg.loss, lam, cfg.n, cfg.n_test, cfg.trials, seed=cfg.seed + i, workers=cfg.workers
        )
        se = rep.test_std / np.sqrt(rep.ok.sum()) if rep.ok.sum() > 1 else np.nan
        z = (rep.test_mean - th["generalization_accuracy"]) / se if se > 0 else np.nan
        rows.append((lam, th["generalization_accuracy"], rep.test_mean, rep.test_std,
                     th["training_accuracy"], rep.train_mean, rep.train_std, z))
        for t in range(rep.trials):
            trial_rows.append((lam, t, rep.seeds[t], rep.train_acc[t], rep.test_acc[t]))
        if rep.failures:
            failures[str(lam)] = rep.failures
    _write_rows(
        out / "sweep.csv",
        ["lambda", "theory_acc", "emp_mean", "emp_std", "theory_train_acc", "emp_train_mean", "emp_train_std", "z_score"],
        rows,
    )
    _write_rows(out / "trials.csv", ["lambda", "trial", "seed", "train_acc", "test_acc"], trial_rows)
    _write_json(out / "simulate.json", {"theory": theory, "failures": failures})
    failed = [r["lambda"] for r in theory if not r["converged"]]
    if failed:
        raise CommandError("non_convergence", f"fixed point did not converge for lambda in {failed}", lambdas=failed)
    return EXIT_OK


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov distance between the empirical law of ``samples`` and ``cdf``."""
    x = np.sort(samples)
    F = cdf(x)
    k = np.arange(1, x.size + 1) / x.size
    return float(max(np.max(k - F), np.max(F - (k - 1.0 / x.size))))


def cmd_histogram(cfg: ExperimentConfig, out: Path) -> int:
    _check_spec(cfg)
    lam = cfg.lambdas[0]
    th = _solve_one((cfg.spec, cfg.loss, lam, cfg.n, cfg.gh_points, cfg.solver))
    fp_law = ScoreLaw(th["m"], float(np.sqrt(th["sigma2"])), th["psi"], cfg.spec.informative_laws, cfg.spec.rho)
    rng = np.random.default_rng(cfg.seed)
    clf = train(sample_dataset(cfg.spec, cfg.n, rng), cfg.loss, lam)
    scores, _ = sample_scores(cfg.spec, clf.beta, cfg.n_test, rng)
    counts, edges = np.histogram(scores, bins=cfg.bins)
    width = np.diff(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = counts / (counts.sum() * width)
    _write_rows(
        out / "hist_empirical.csv",
        ["bin_left", "bin_right", "center", "count", "density"],
        zip(edges[:-1], edges[1:], centers, counts, density),
    )
    _write_rows(out / "density_theory.csv", ["x", "density"], zip(centers, score_density(fp_law, centers, points=cfg.gh_points)))
    ks = ks_distance(scores, lambda x: score_cdf(fp_law, x, cfg.gh_points))
    _write_json(out / "histogram.json", {**th, "ks_distance": ks, "n_test": cfg.n_test})
    if not th["converged"]:
        raise CommandError("non_convergence", f"fixed point did not converge for lambda={lam}")
    return EXIT_OK


def cmd_universality(cfg: ExperimentConfig, out: Path) -> int:
    _check_spec(cfg)
    lam = cfg.lambdas[0]
    try:
        verdict = universality_audit(cfg.spec, cfg.loss, lam, cfg.n, cfg.threshold, cfg.gh_points, **cfg.solver)
    except SolveFailure as exc:
        raise CommandError("non_convergence", str(exc)) from None
    gmm = equivalent_gmm(cfg.spec)
    kw = dict(lam=lam, n=cfg.n, n_test=cfg.n_test, trials=cfg.trials, seed=cfg.seed, workers=cfg.workers)
    on_lfmm = cross_test(cfg.spec, cfg.spec, cfg.loss, **kw)
    on_gmm = cross_test(gmm, cfg.spec, cfg.loss, **kw)
    gap = on_gmm.test_mean - on_lfmm.test_mean
    joint_se = np.sqrt((on_gmm.test_std**2 + on_lfmm.test_std**2) / cfg.trials)
    result = {
        "lambda": lam,
        "loss": cfg.loss,
        **verdict.to_dict(),
        "cross_test": {
            "train_lfmm_test_lfmm": on_lfmm.summary(),
            "train_gmm_test_lfmm": on_gmm.summary(),
            "accuracy_gap": gap,
            "joint_std_error": joint_se,
            "z_score": gap / joint_se if joint_se > 0 else None,
        },
    }
    _write_json(out / "universality.json", result)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "histogram": cmd_histogram,
    "universality": cmd_universality,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfmm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--workers", type=int, help="worker processes for sweeps and trials")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.workers is not None:
            cfg.workers = args.workers
        if args.seed is not None:
            cfg.seed = args.seed
        out = out or Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, out)
        error = None
    except ConfigError as exc:
        code, error = EXIT_USAGE, {"error": "config", "message": str(exc)}
    except CommandError as exc:
        code, error = exc.code, {"error": exc.kind, "message": str(exc), **exc.details}
    if error is not None:
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        if out is not None and out.is_dir():
            _write_json(out / "error.json", error)
    if out is not None and out.is_dir():
        _write_json(
            out / "run_metadata.json",
            {
                "command": args.command,
                "config": str(args.config),
                "exit_code": code,
                "version": __version__,
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            },
        )
    return code


if __name__ == "__main__":
    sys.exit(main())
