"""Tests for experiment orchestration.

The tests ensure that:
- Every experiment writes its snapshot, records, and tables into its directory.
- `diagnose` reproduces the summary from stored traces.
- Locked directories are refused and failures leave `failure.json` behind.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import json
from pathlib import Path
import numpy as np
import pandas as pd
import pytest
from gp_pseudofermion.experiments import (
    FAILURE,
    LOCK,
    SUMMARY,
    checkpoints,
    log_log_slope,
    run_experiment,
    stored_config,
    verification_dataset,
)
from gp_pseudofermion.settings import ExperimentConfig, load_config


def _config(output: Path, **overrides: str) -> ExperimentConfig:
    base = {"data.n_points": "16", "chains.batch": "2", "chains.steps": "4"}
    base.update(overrides)
    return load_config(overrides=base, output=output)


def test_sample_run(tmp_path: Path) -> None:
    """Tests the artifacts of a small sampling run."""
    config = _config(tmp_path / "run")
    directory = run_experiment(config, "sample")
    assert directory == tmp_path / "run"
    for name in ("config.json", "traces.csv", "burn_in.csv", "timings.csv", "chains.csv", SUMMARY, "transform.json"):
        assert (directory / name).is_file()
    assert not (directory / LOCK).exists()
    assert not (directory / FAILURE).exists()
    summary = json.loads((directory / SUMMARY).read_text(encoding="utf-8"))
    assert summary["chains"] == 2
    assert summary["steps"] == 4
    assert stored_config(directory) == config


def test_diagnose_reproduces_summary(tmp_path: Path) -> None:
    """Tests that the summary recomputed from stored traces equals the original."""
    config = _config(tmp_path / "run", **{"chains.steps": "30"})
    directory = run_experiment(config, "sample")
    original = json.loads((directory / SUMMARY).read_text(encoding="utf-8"))
    (directory / SUMMARY).unlink()
    run_experiment(stored_config(directory), "diagnose")
    assert json.loads((directory / SUMMARY).read_text(encoding="utf-8")) == original


def test_csv_sample_run(tmp_path: Path) -> None:
    """Tests a run on CSV data outside the reference box."""
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 10.0, 20)
    path = tmp_path / "data.csv"
    pd.DataFrame({"x1": x, "y": np.sin(x)}).to_csv(path, index=False)
    config = _config(
        tmp_path / "run",
        **{"data.source": "csv", "data.path": str(path), "data.subsample": "12"},
    )
    directory = run_experiment(config, "sample")
    transform = json.loads((directory / "transform.json").read_text(encoding="utf-8"))
    assert transform["half_width"][0] > 1.0


def test_predict_run(tmp_path: Path) -> None:
    """Tests the prediction table on a coarse grid."""
    config = _config(tmp_path / "run", **{"predict.resolution": "5", "predict.std_clip": "[0.0, 0.01]"})
    directory = run_experiment(config, "predict")
    frame = pd.read_csv(directory / "prediction.csv")
    assert list(frame.columns) == [
        "x1",
        "mean",
        "std",
        "expected_variance",
        "variance_of_means",
        "iat",
        "ci_radius",
        "std_clipped",
    ]
    assert len(frame) == 5
    np.testing.assert_allclose(frame["x1"], np.linspace(-1.0, 1.0, 5))
    assert np.all(frame["std"] >= 0.0)
    assert np.all(frame["std_clipped"] <= 0.01)
    np.testing.assert_allclose(frame["std"] ** 2, frame["expected_variance"] + frame["variance_of_means"], rtol=1e-12)


def test_verify_run(tmp_path: Path) -> None:
    """Tests reference tables and per-sampler error series on a coarse quadrature grid."""
    config = _config(
        tmp_path / "run",
        **{
            "verify.samplers": '["rwm", "hmc-leapfrog"]',
            "verify.resolution": "25",
            "verify.checkpoints": "3",
            "chains.steps": "6",
        },
    )
    directory = run_experiment(config, "verify")
    reference = pd.read_csv(directory / "reference.csv")
    assert list(reference.columns) == ["theta", "marginal_0", "cdf_0", "marginal_1", "cdf_1"]
    assert len(reference) == 25
    for kind in ("rwm", "hmc-leapfrog"):
        errors = pd.read_csv(directory / kind / "errors.csv")
        assert errors["step"].tolist() == [1, 4, 6]
        assert np.all((errors["cdf_error_0"] >= 0.0) & (errors["cdf_error_0"] <= 1.0))
        assert (directory / kind / "traces.csv").is_file()


@pytest.mark.slow
def test_verify_all_samplers(tmp_path: Path) -> None:
    """Tests that every sampler approaches the quadrature means on the ten-point problem."""
    config = load_config(overrides={"chains.batch": "4", "chains.steps": "400"}, output=tmp_path / "run")
    directory = run_experiment(config, "verify")
    for kind in ("rwm", "hmc-leapfrog", "hmc-implicit"):
        errors = pd.read_csv(directory / kind / "errors.csv")
        final = errors.iloc[-1]
        for k in range(2):
            assert abs(final[f"mean_error_{k}"]) < 4.0 * final[f"mean_std_{k}"] + 0.05
            assert final[f"cdf_error_{k}"] < 0.2


def test_scale_run(tmp_path: Path) -> None:
    """Tests the scaling table across dataset sizes."""
    config = _config(
        tmp_path / "run",
        **{"scale.points": "[8, 16]", "scale.reference_points": "16", "chains.batch": "1", "chains.steps": "2"},
    )
    directory = run_experiment(config, "scale")
    frame = pd.read_csv(directory / "scaling.csv")
    assert frame["n_points"].tolist() == [8, 16]
    assert np.all(frame["seconds_per_step"] > 0.0)
    summary = json.loads((directory / "scaling.json").read_text(encoding="utf-8"))
    assert summary["mode"] == "points"
    assert summary["sizes"] == [8, 16]
    assert (directory / "points_16" / "traces.csv").is_file()


def test_locked_directory(tmp_path: Path) -> None:
    """Tests that a second run cannot take a locked directory and leaves the lock alone."""
    (tmp_path / LOCK).write_text("1", encoding="utf-8")
    with pytest.raises(FileExistsError):
        run_experiment(_config(tmp_path), "sample")
    assert (tmp_path / LOCK).exists()


def test_failure_report(tmp_path: Path) -> None:
    """Tests that a failing experiment writes failure.json and releases its lock."""
    config = _config(tmp_path / "run", **{"data.source": "csv", "data.path": str(tmp_path / "missing.csv")})
    with pytest.raises(FileNotFoundError):
        run_experiment(config, "sample")
    report = json.loads((tmp_path / "run" / FAILURE).read_text(encoding="utf-8"))
    assert report["experiment"] == "sample"
    assert report["error"] == "FileNotFoundError"
    assert not (tmp_path / "run" / LOCK).exists()


def test_diagnose_without_traces(tmp_path: Path) -> None:
    """Tests that diagnosing an empty directory fails with a file error."""
    with pytest.raises(FileNotFoundError):
        run_experiment(stored_config(tmp_path), "diagnose")


def test_helpers() -> None:
    """Tests checkpoints, the log-log slope, and the verification data."""
    np.testing.assert_array_equal(checkpoints(10, 3), [1, 6, 10])
    np.testing.assert_array_equal(checkpoints(2, 5), [1, 2])
    assert log_log_slope([1, 2, 4], [1.0, 4.0, 16.0]) == pytest.approx(2.0)
    assert log_log_slope([1], [1.0]) is None
    dataset = verification_dataset(10)
    np.testing.assert_allclose(dataset.points[:, 0], np.linspace(-1.0, 1.0, 10, endpoint=False))
    np.testing.assert_array_equal(dataset.observations, np.ones(10))
