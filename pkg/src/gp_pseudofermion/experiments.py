"""Experiment Orchestration.

This module runs the experiments of the command line and owns their artifact
directories. Every directory holds a `config.json` snapshot that reproduces it, the chain
records of `traces`, and plot-ready tables:

- `verify`: sampler output on a ten-point toy problem checked against the quadrature
  reference (windowed marginal-CDF and mean errors per sampler);
- `sample`: chains on synthetic or CSV data with a diagnostics summary;
- `predict`: `sample` followed by posterior prediction on a grid;
- `scale`: seconds per outer step across dataset sizes or Chebyshev orders;
- `diagnose`: the summary recomputed from stored traces.

A single process owns a directory at a time, guarded by a lock file. A failing
experiment leaves `failure.json` behind before the error propagates.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Literal, Optional
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from gp_pseudofermion.data import AffineTransform, load_csv, normalize, subsample, synth_dataset
from gp_pseudofermion.diagnostics import (
    component_iats,
    ecdf_sup_error,
    estimator_std,
    healthy,
    moving_window_mean,
    stack_thetas,
    summarize_traces,
)
from gp_pseudofermion.errors import DegenerateVarianceError, DomainError, GPSamplerError
from gp_pseudofermion.gp_posterior import PredictionGrid, total_variance_summary
from gp_pseudofermion.kernel_model import Dataset, HyperParams
from gp_pseudofermion.logger import observe
from gp_pseudofermion.matfree_linalg import SolveConfig
from gp_pseudofermion.quadrature import QuadratureReference, quadrature_reference
from gp_pseudofermion.samplers import ChainRun, run_chains
from gp_pseudofermion.settings import (
    SNAPSHOT,
    ExperimentConfig,
    build_sampler,
    build_target,
    build_template,
    load_config,
    snapshot,
)
from gp_pseudofermion.traces import read_run, write_run, write_table
from gp_pseudofermion.utils import write_json


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Experiments the command line can run.
Experiment = Literal["verify", "scale", "sample", "predict", "diagnose"]
LOCK = ".lock"
FAILURE = "failure.json"
SUMMARY = "summary.json"


class FailureReport(BaseModel):
    """What went wrong in an aborted experiment."""

    experiment: str = Field(description="The experiment that failed.")
    error: str = Field(description="The exception type.")
    message: str = Field(description="The exception message.")
    failed_at: float = Field(description="Epoch seconds at failure.")


class ScalingSummary(BaseModel):
    """The log-log fit of seconds per outer step against the varied size."""

    mode: str = Field(description="What was varied: points or cheb.")
    sizes: list[int] = Field(description="The varied sizes.")
    seconds_per_step: list[float] = Field(description="Mean wall time of one outer step per size.")
    slope: Optional[float] = Field(default=None, description="The fitted log-log slope.")


@contextmanager
def locked(directory: Path) -> Iterator[Path]:
    """Holds the lock file of `directory` for the duration of the block.

    Raises:
        FileExistsError: If another process owns the directory.
    """
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK
    try:
        handle = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as error:
        raise FileExistsError(f"{directory} is locked by another run ({lock})") from error
    try:
        os.write(handle, str(os.getpid()).encode())
        os.close(handle)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def identity_transform(dim: int) -> AffineTransform:
    return AffineTransform(center=[0.0] * dim, half_width=[1.0] * dim)


def load_dataset(config: ExperimentConfig) -> tuple[Dataset, AffineTransform]:
    """Loads the configured data in the reference box, with the transform back to data units."""
    data = config.data
    if data.source == "synthetic":
        return synth_dataset(data.dim, data.n_points, data.eta, data.seed), identity_transform(data.dim)
    raw = subsample(load_csv(data.path, strict=data.strict), data.subsample, data.subsample_seed)
    return normalize(raw)


def verification_dataset(n_points: int) -> Dataset:
    """Equispaced points on [-1, 1) with every observation equal to 1."""
    points = np.linspace(-1.0, 1.0, n_points, endpoint=False)[:, None]
    return Dataset(points, np.ones(n_points))


def checkpoints(steps: int, count: int) -> np.ndarray:
    """Up to `count` distinct 1-based steps spread evenly over 1..steps."""
    return np.unique(np.linspace(1, steps, min(count, steps)).round().astype(int))


def _safe_std(pooled: np.ndarray, i: int, tau: float) -> float:
    try:
        return estimator_std(pooled, i, tau)
    except (DegenerateVarianceError, DomainError):
        return math.nan


def error_series(
    samples: np.ndarray, reference: QuadratureReference, count: int, config: ExperimentConfig
) -> pd.DataFrame:
    """Windowed marginal-CDF and mean errors of (T + 1, B, 2) samples at evenly spread steps.

    At 1-based step i the window holds the samples floor(i/2)..i of every chain; the
    initial point is excluded.
    """
    chain = samples[1:]
    taus = component_iats(chain, config.iat)
    rows = []
    for i in checkpoints(chain.shape[0], count):
        window = chain[max(i // 2, 1) - 1 : i]
        row: dict = {"step": int(i)}
        for k in range(chain.shape[-1]):
            row[f"cdf_error_{k}"] = ecdf_sup_error(window[..., k], reference.axis, reference.cdfs[k])
            row[f"mean_error_{k}"] = float(moving_window_mean(chain[:i, :, k])[-1] - reference.means[k])
            row[f"mean_std_{k}"] = _safe_std(chain[..., k], int(i), float(taus[k]))
        rows.append(row)
    return pd.DataFrame(rows)


def reference_frame(reference: QuadratureReference) -> pd.DataFrame:
    columns = {"theta": reference.axis}
    for k in range(reference.cdfs.shape[0]):
        columns[f"marginal_{k}"] = reference.marginals[k]
        columns[f"cdf_{k}"] = reference.cdfs[k]
    return pd.DataFrame(columns)


def sample_chains(config: ExperimentConfig, directory: Path, dataset: Dataset, **overrides) -> ChainRun:
    """Runs the configured chain batch on `dataset` and stores its records in `directory`."""
    template: Optional[HyperParams] = overrides.pop("template", None)
    target = build_target(config, dataset, template)
    spec = build_sampler(config, overrides.pop("kind", None), overrides.pop("dt", None))
    run = run_chains(
        target,
        spec,
        batch=config.chains.batch,
        steps=config.chains.steps,
        seed=config.chains.seed,
        workers=config.chains.workers,
    )
    write_run(directory, run)
    write_json(directory / SUMMARY, summarize_traces(run.traces, config.iat))
    return run


def run_verify(config: ExperimentConfig, directory: Path) -> None:
    verify = config.verify
    dataset = verification_dataset(verify.n_points)
    template = build_template(config, dataset.dim)
    target = build_target(config, dataset, template)
    reference = quadrature_reference(
        dataset, template, verify.lower, verify.upper, verify.resolution, target.prior
    )
    write_table(directory / "reference.csv", reference_frame(reference))
    write_json(directory / "reference.json", {"means": reference.means.tolist()})
    for kind in verify.samplers:
        LOGGER.info(f"verifying {kind}")
        run = sample_chains(
            config, directory / kind, dataset, template=template, kind=kind, dt=verify.dt.get(kind)
        )
        samples = stack_thetas(healthy(run.traces))
        write_table(directory / kind / "errors.csv", error_series(samples, reference, verify.checkpoints, config))


def run_sample(config: ExperimentConfig, directory: Path) -> ChainRun:
    dataset, transform = load_dataset(config)
    write_json(directory / "transform.json", transform)
    return sample_chains(config, directory, dataset)


def run_predict(config: ExperimentConfig, directory: Path) -> None:
    dataset, transform = load_dataset(config)
    write_json(directory / "transform.json", transform)
    run = sample_chains(config, directory, dataset)
    samples = stack_thetas(healthy(run.traces))
    grid = PredictionGrid.regular(config.predict.resolution, dataset.dim)
    summary = total_variance_summary(
        samples,
        build_template(config, dataset.dim),
        dataset,
        grid,
        SolveConfig(tol=config.solver.tol, max_iter=config.solver.max_iter),
        thin=config.predict.thin,
        iat_config=config.iat,
        tile_size=config.target.tile_size,
        precond_rank=config.precond.rank if config.precond.kind == "nystrom" else 0,
        seed=config.chains.seed,
    )
    points = transform.inverse(grid.points)
    columns = {f"x{j + 1}": points[:, j] for j in range(points.shape[1])}
    columns.update(
        {
            "mean": transform.restore(summary.mean),
            "std": summary.total_std,
            "expected_variance": summary.expected_variance,
            "variance_of_means": summary.variance_of_means,
            "iat": summary.iat,
            "ci_radius": summary.ci_radius,
        }
    )
    if config.predict.std_clip is not None:
        low, high = config.predict.std_clip
        columns["std_clipped"] = np.clip(summary.total_std, low, high)
    write_table(directory / "prediction.csv", pd.DataFrame(columns))


def log_log_slope(sizes: list[int], seconds: list[float]) -> Optional[float]:
    """The least-squares slope of log(seconds) against log(size)."""
    if len(sizes) < 2 or not all(s > 0.0 for s in seconds):
        return None
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def run_scale(config: ExperimentConfig, directory: Path) -> ScalingSummary:
    scale, data = config.scale, config.data
    sizes = scale.points if scale.mode == "points" else scale.cheb
    rows = []
    for size in sizes:
        if scale.mode == "points":
            dataset = synth_dataset(data.dim, size, data.eta, data.seed)
            template = HyperParams.from_scales(
                np.zeros((config.kernel.n_cheb,) * data.dim),
                scale.sigma_sq,
                (size / scale.reference_points) ** (-2.0 / data.dim),
                infer_sigma=not config.kernel.freeze_sigma,
                infer_ell=not config.kernel.freeze_ell,
            )
        else:
            dataset = synth_dataset(data.dim, data.n_points, data.eta, data.seed)
            template = build_template(config, data.dim, n_cheb=size)
        LOGGER.info(f"scaling run at {scale.mode} = {size}")
        summary = summarize_traces(
            sample_chains(config, directory / f"{scale.mode}_{size}", dataset, template=template).traces,
            config.iat,
        )
        rows.append(
            {
                "size": size,
                "n_points": dataset.n_points,
                "n_cheb": template.n_cheb,
                "seconds_per_step": summary.seconds_per_step,
                "acceptance_rate": summary.acceptance_rate,
                "acceptance_probability": summary.acceptance_probability,
            }
        )
    frame = pd.DataFrame(rows)
    write_table(directory / "scaling.csv", frame)
    seconds = frame["seconds_per_step"].tolist()
    result = ScalingSummary(
        mode=scale.mode, sizes=list(sizes), seconds_per_step=seconds, slope=log_log_slope(list(sizes), seconds)
    )
    write_json(directory / "scaling.json", result)
    return result


def run_diagnose(config: ExperimentConfig, directory: Path) -> None:
    run = read_run(directory)
    write_json(directory / SUMMARY, summarize_traces(run.traces, config.iat))


def stored_config(directory: Path) -> ExperimentConfig:
    """The snapshot of an existing run, or defaults when it has none."""
    path = directory / SNAPSHOT
    return load_config(path if path.is_file() else None, output=directory)


@observe(by=LOGGER, args=[1])
def run_experiment(config: ExperimentConfig, experiment: Experiment) -> Path:
    """Runs one experiment into `config.output`.

    Args:
        config (ExperimentConfig): The validated configuration.
        experiment (Experiment): Which experiment to run.

    Returns:
        Path: The artifact directory.

    Raises:
        FileExistsError: If another run holds the directory.
        GPSamplerError: If any stage fails; `failure.json` is written first.
        OSError: If files cannot be read or written; `failure.json` is attempted first.
    """
    directory = config.output
    with locked(directory):
        (directory / FAILURE).unlink(missing_ok=True)
        try:
            if experiment != "diagnose":
                (directory / SNAPSHOT).write_text(snapshot(config) + "\n", encoding="utf-8")
            {
                "verify": run_verify,
                "scale": run_scale,
                "sample": run_sample,
                "predict": run_predict,
                "diagnose": run_diagnose,
            }[experiment](config, directory)
        except (GPSamplerError, OSError, ValueError) as error:
            report = FailureReport(
                experiment=experiment,
                error=type(error).__name__,
                message=str(error),
                failed_at=time.time(),
            )
            try:
                write_json(directory / FAILURE, report)
            except OSError:
                LOGGER.error(f"could not write {FAILURE} into {directory}")
            LOGGER.error(f"{experiment} failed: {report.error}: {report.message}")
            raise
    return directory
