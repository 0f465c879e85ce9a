import csv
import json

import numpy as np
import pytest

from lfmm.cli import ks_distance, main
from lfmm.config import DEFAULT_LAMBDA_GRID, ConfigError, ExperimentConfig, build_spec, read_matrix, write_matrix
from lfmm.model import NoiseLaw, build_haar_orthogonal


def write_config(path, **overrides):
    cfg = {
        "model": {"p": 30, "s": [1.2], "seed": 1},
        "loss": "square",
        "lambda": 1.0,
        "n": 60,
        "n_test": 2000,
        "trials": 3,
        "gh_points": 16,
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_lambda_grid_default():
    cfg = ExperimentConfig.from_dict({"model": {"p": 5, "s": [1.0]}})
    assert cfg.lambdas == list(DEFAULT_LAMBDA_GRID)
    assert cfg.lambdas[0] == 2.0**-9 and cfg.lambdas[-1] == 2.0**6
    cfg = ExperimentConfig.from_dict({"model": {"p": 5, "s": [1.0]}, "lambda": {"log2_start": -2, "log2_stop": 2, "num": 21}})
    assert len(cfg.lambdas) == 21 and np.isclose(cfg.lambdas[10], 1.0)


@pytest.mark.parametrize(
    "raw",
    [
        {},
        {"model": {"p": 5}},
        {"model": {"p": 5, "s": [1.0]}, "lambda": []},
        {"model": {"p": 5, "s": [1.0]}, "lambda": [1.0, -2.0]},
        {"model": {"p": 5, "s": [1.0]}, "loss": "hinge"},
        {"model": {"p": 5, "s": [1.0]}, "n_test": 0},
        {"model": {"p": 5, "s": [1.0]}, "solver": {"bogus": 1}},
        {"model": {"p": 5, "s": [1.0], "noise_laws": {"overrides": {"9": "uniform"}}}},
        {"model": {"p": 5, "s": [1.0], "noise_laws": "cauchy"}},
        {"model": {"p": 5, "s": [1.0], "v_construction": "explicit_matrix_file", "matrix_file": "nope.npy"}},
    ],
)
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_noise_law_overrides():
    spec = build_spec({"p": 4, "s": [1.0], "noise_laws": {"default": "uniform", "overrides": {"1": "rademacher"}}})
    assert spec.noise_laws == (NoiseLaw.RADEMACHER,) + (NoiseLaw.UNIFORM,) * 3
    spec = build_spec({"p": 2, "s": [1.0], "noise_laws": ["gaussian", "uniform"]})
    assert spec.noise_laws == (NoiseLaw.GAUSSIAN, NoiseLaw.UNIFORM)


@pytest.mark.parametrize("suffix", [".npy", ".csv"])
def test_matrix_roundtrip(tmp_path, suffix):
    M = build_haar_orthogonal(6, 2)
    write_matrix(tmp_path / f"v{suffix}", M)
    assert np.allclose(read_matrix(tmp_path / f"v{suffix}"), M, atol=1e-15)
    spec = build_spec(
        {"p": 6, "s": [1.0], "v_construction": "explicit_matrix_file", "matrix_file": f"v{suffix}"}, tmp_path
    )
    assert np.allclose(spec.V, M, atol=1e-15)


def test_ks_distance():
    from scipy.stats import norm

    x = np.random.default_rng(0).standard_normal(100_000)
    assert ks_distance(x, norm.cdf) < 0.01
    assert ks_distance(x + 0.5, norm.cdf) > 0.15
    assert ks_distance(np.array([0.0]), lambda t: np.full_like(t, 0.5)) == pytest.approx(0.5)


def test_solve_command(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "fixed_point.json").read_text())
    for key in ("theta", "eta", "gamma", "omega", "kappa", "m", "sigma2", "psi", "iterations", "residual",
                "converged", "generalization_accuracy", "training_accuracy"):
        assert key in report
    assert report["converged"]
    assert "timestamp" in json.loads((out / "run_metadata.json").read_text())
    assert not (out / "error.json").exists()


def test_solve_sweep_naming_and_determinism(tmp_path):
    lams = list(np.logspace(-3, 1, 21, base=2.0))
    cfg = write_config(tmp_path / "c.json", loss="logistic", **{"lambda": lams})
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.glob("fixed_point_*.json"))
    assert files == [f"fixed_point_{i:03d}.json" for i in range(21)]
    assert [float(r["lambda"]) for r in read_csv(out / "sweep.csv")] == lams
    first = {f: (out / f).read_bytes() for f in files + ["sweep.csv"]}
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    assert all((out / f).read_bytes() == b for f, b in first.items())


def test_solve_invalid_spec(tmp_path, capsys):
    V = build_haar_orthogonal(10, 0)
    V[:, 1] = V[:, 0]
    write_matrix(tmp_path / "v.npy", V)
    cfg = write_config(
        tmp_path / "c.json",
        model={"p": 10, "s": [1.0], "v_construction": "explicit_matrix_file", "matrix_file": "v.npy"},
    )
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) != 0
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "validation"
    assert "rank" in err["violations"] and "orthogonality" in err["violations"]
    assert json.loads(capsys.readouterr().err)["error"] == "validation"


def test_nonorthogonal_waiver(tmp_path):
    model = {"p": 30, "s": [1.2], "v_construction": "diag_scaled_haar", "diag_scale": [2.0]}
    cfg = write_config(tmp_path / "c.json", model=model)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 1
    cfg = write_config(tmp_path / "c.json", model=model, allow_nonorthogonal=True)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0


def test_non_convergence_exit(tmp_path):
    cfg = write_config(tmp_path / "c.json", loss="logistic", solver={"max_iter": 2, "polish": False})
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 1
    assert json.loads((out / "error.json").read_text())["error"] == "non_convergence"
    assert (out / "fixed_point.json").exists()


def test_empty_test_set_is_usage_error(tmp_path):
    cfg = write_config(tmp_path / "c.json", n_test=0)
    out = tmp_path / "o"
    assert main(["histogram", "--config", str(cfg), "--out", str(out)]) == 2
    assert not (out / "hist_empirical.csv").exists()


def test_missing_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


def test_simulate_chance_level(tmp_path):
    cfg = write_config(
        tmp_path / "c.json", model={"p": 30, "s": [0.0]}, allow_zero_signal=True, n_test=20000, trials=8
    )
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    (row,) = read_csv(out / "sweep.csv")
    assert {"lambda", "theory_acc", "emp_mean", "emp_std", "z_score"} <= set(row)
    assert float(row["theory_acc"]) == pytest.approx(0.5, abs=1e-12)
    assert abs(float(row["emp_mean"]) - 0.5) < 0.01
    assert len(read_csv(out / "trials.csv")) == 8


def test_simulate_zero_signal_needs_waiver(tmp_path):
    cfg = write_config(tmp_path / "c.json", model={"p": 30, "s": [0.0]})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_histogram_command(tmp_path):
    cfg = write_config(tmp_path / "c.json", loss="logistic", n_test=50_000, bins=60)
    out = tmp_path / "o"
    assert main(["histogram", "--config", str(cfg), "--out", str(out)]) == 0
    hist, dens = read_csv(out / "hist_empirical.csv"), read_csv(out / "density_theory.csv")
    assert len(hist) == len(dens) == 60
    assert [h["center"] for h in hist] == [d["x"] for d in dens]
    meta = json.loads((out / "histogram.json").read_text())
    assert meta["ks_distance"] < 0.05


def test_universality_command(tmp_path):
    model = {"p": 40, "s": [1.2], "noise_laws": {"default": "gaussian", "overrides": {"1": "rademacher"}}}
    cfg = write_config(tmp_path / "c.json", model=model, trials=4)
    out = tmp_path / "o"
    assert main(["universality", "--config", str(cfg), "--out", str(out), "--workers", "1"]) == 0
    res = json.loads((out / "universality.json").read_text())
    assert res["classifier_universal"] and not res["in_distribution_universal"]
    assert {"train_lfmm_test_lfmm", "train_gmm_test_lfmm", "z_score"} <= set(res["cross_test"])


def test_bundled_configs_load():
    from pathlib import Path

    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
    assert paths
    for path in paths:
        cfg = ExperimentConfig.load(path)
        assert cfg.spec.p == 200
