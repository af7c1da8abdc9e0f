"""GP Prediction under Hyperparameter Uncertainty.

This module computes, for hyperparameter samples theta, the GP predictive mean
K_theta(x)^T A(theta)^{-1} y and conditional variance K_theta(x, x) - K_theta(x)^T A(theta)^{-1} K_theta(x)
on a grid of query points, and combines them over samples with the law of total variance,

    Var f(x) = E[Var(f(x) | theta)] + Var(E[f(x) | theta]).

Features:
- `PredictionGrid` of query points in the reference box.
- `predictive_mean` (one solve shared by every query point) and `conditional_variance`
  (query points batched as right-hand sides).
- `total_variance_summary` with thinning, per-point IAT and 95% interval radii; with a
  Nystrom rank every sample factorizes its kernel once and all of its solves share it.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Union
import numpy as np
from gp_pseudofermion.diagnostics import IATConfig, batch_averaged_iat
from gp_pseudofermion.errors import DegenerateVarianceError, DomainError
from gp_pseudofermion.kernel_model import (
    DEFAULT_TILE_SIZE,
    Dataset,
    HyperParams,
    KernelOperator,
    _as_points,
)
from gp_pseudofermion.matfree_linalg import (
    NystromPreconditioner,
    SolveConfig,
    batched_shifted_solve,
    cg_solve,
    nystrom_factorize,
)


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Negative variances below this magnitude are round-off; larger ones are warned about.
CLAMP_WARNING = 1e-6
# Query points per batched solve.
QUERY_CHUNK = 256


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """Query points in [-1, 1]^d."""

    points: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _as_points(self.points))

    @classmethod
    def regular(cls, resolution: int, dim: int = 2) -> "PredictionGrid":
        """A regular resolution^dim grid over the reference box, last axis fastest."""
        axis = np.linspace(-1.0, 1.0, resolution)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return cls(np.stack([m.ravel() for m in mesh], axis=1))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def chunks(self, size: int = QUERY_CHUNK) -> Iterator[tuple[int, np.ndarray]]:
        for start in range(0, self.size, size):
            yield start, self.points[start : start + size]


def _as_grid(grid: Union[PredictionGrid, np.ndarray]) -> PredictionGrid:
    return grid if isinstance(grid, PredictionGrid) else PredictionGrid(grid)


def _preconditioned(
    operator: KernelOperator,
    solve_config: Optional[SolveConfig],
    preconditioner: Optional[NystromPreconditioner],
) -> SolveConfig:
    config = solve_config or SolveConfig()
    if preconditioner is None:
        return config
    return config.with_preconditioner(preconditioner.with_noise(operator.sigma_sq))


def predictive_mean(
    hyperparams: HyperParams,
    dataset: Dataset,
    grid: Union[PredictionGrid, np.ndarray],
    solve_config: Optional[SolveConfig] = None,
    tile_size: int = DEFAULT_TILE_SIZE,
    preconditioner: Optional[NystromPreconditioner] = None,
) -> np.ndarray:
    """Computes K_theta(x)^T A(theta)^{-1} y at every grid point from one solve."""
    grid = _as_grid(grid)
    operator = KernelOperator(dataset, hyperparams, tile_size)
    config = _preconditioned(operator, solve_config, preconditioner)
    weights = cg_solve(operator, dataset.observations, config).x
    means = np.empty(grid.size)
    for start, points in grid.chunks():
        means[start : start + points.shape[0]] = operator.cross_kernel(points) @ weights
    return means


def conditional_variance(
    hyperparams: HyperParams,
    dataset: Dataset,
    x: Union[PredictionGrid, np.ndarray],
    solve_config: Optional[SolveConfig] = None,
    tile_size: int = DEFAULT_TILE_SIZE,
    preconditioner: Optional[NystromPreconditioner] = None,
) -> Union[float, np.ndarray]:
    """Computes K_theta(x, x) - K_theta(x)^T A(theta)^{-1} K_theta(x), clamped at zero.

    Args:
        hyperparams (HyperParams): The kernel hyperparameters.
        dataset (Dataset): The training data.
        x (Union[PredictionGrid, np.ndarray]): One point of length d, or a batch / grid.
        solve_config (Optional[SolveConfig]): Tolerance of the batched solves.
        tile_size (int): Rows per streamed kernel block.
        preconditioner (Optional[NystromPreconditioner]): A factorization of K(theta),
            applied as a Woodbury preconditioner to every chunk of query points.

    Returns:
        Union[float, np.ndarray]: The variance, a float for a single point.
    """
    single = isinstance(x, np.ndarray) and x.ndim == 1
    grid = _as_grid(x)
    operator = KernelOperator(dataset, hyperparams, tile_size)
    config = _preconditioned(operator, solve_config, preconditioner)
    variances = np.empty(grid.size)
    for start, points in grid.chunks():
        cross = operator.cross_kernel(points)
        solved = batched_shifted_solve(operator, cross.T, np.zeros(1), config).x[..., 0]
        explained = np.sum(cross * solved.T, axis=1)
        variances[start : start + points.shape[0]] = operator.prior_variance(points) - explained
    lowest = float(variances.min())
    if lowest < -CLAMP_WARNING:
        LOGGER.warning(f"clamped conditional variance {lowest:.3e}; solves may be under-converged")
    variances = np.maximum(variances, 0.0)
    return float(variances[0]) if single else variances


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Per-grid-point posterior statistics over hyperparameter samples.

    Attributes:
        mean (np.ndarray): The mean of the predictive means.
        expected_variance (np.ndarray): E[Var(f(x) | theta)].
        variance_of_means (np.ndarray): Var(E[f(x) | theta]).
        iat (np.ndarray): The IAT of the batch-averaged mean chain; NaN when undefined.
        ci_radius (np.ndarray): The 95% interval radius of `mean`; 0 when the IAT is undefined.
        n_samples (int): The number of thinned samples per chain used.
    """

    mean: np.ndarray
    expected_variance: np.ndarray
    variance_of_means: np.ndarray
    iat: np.ndarray
    ci_radius: np.ndarray
    n_samples: int

    @property
    def total_variance(self) -> np.ndarray:
        return self.expected_variance + self.variance_of_means

    @property
    def total_std(self) -> np.ndarray:
        return np.sqrt(self.total_variance)


def total_variance_summary(
    samples: np.ndarray,
    template: HyperParams,
    dataset: Dataset,
    grid: Union[PredictionGrid, np.ndarray],
    solve_config: Optional[SolveConfig] = None,
    thin: int = 1,
    iat_config: Optional[IATConfig] = None,
    tile_size: int = DEFAULT_TILE_SIZE,
    precond_rank: int = 0,
    seed: int = 0,
) -> PosteriorSummary:
    """Combines per-sample predictions by the law of total variance.

    Args:
        samples (np.ndarray): Hyperparameter samples, (S, n) or (T, B, n) for B chains.
        template (HyperParams): The template whose inferred entries the samples replace.
        dataset (Dataset): The training data.
        grid (Union[PredictionGrid, np.ndarray]): The query points.
        solve_config (Optional[SolveConfig]): Tolerance of every solve.
        thin (int): Keep every `thin`-th sample along the first axis.
        iat_config (Optional[IATConfig]): Configuration of the per-point IAT.
        tile_size (int): Rows per streamed kernel block.
        precond_rank (int): Nystrom rank of the per-sample preconditioner, 0 to disable.
        seed (int): The seed of the Nystrom sketches.

    Returns:
        PosteriorSummary: Both variance terms, their sum, IATs and interval radii.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[:, None, :]
    if thin < 1:
        raise DomainError("thinning stride must be at least 1")
    samples = samples[::thin]
    length, batch = samples.shape[:2]
    if length * batch < 2:
        raise DomainError("total variance needs at least two thinned samples")
    if not 0 <= precond_rank <= dataset.n_points:
        raise DomainError(f"preconditioner rank {precond_rank} outside [0, {dataset.n_points}]")
    grid = _as_grid(grid)
    rng = np.random.default_rng(seed)
    means = np.empty((length, batch, grid.size))
    variances = np.empty((length, batch, grid.size))
    for t in range(length):
        for b in range(batch):
            hyperparams = template.with_vector(samples[t, b])
            preconditioner = None
            if precond_rank:
                kernel = KernelOperator(dataset, hyperparams, tile_size).linear_operator(kernel_only=True)
                preconditioner = nystrom_factorize(kernel, dataset.n_points, precond_rank, rng)
            means[t, b] = predictive_mean(hyperparams, dataset, grid, solve_config, tile_size, preconditioner)
            variances[t, b] = conditional_variance(
                hyperparams, dataset, grid, solve_config, tile_size, preconditioner
            )
    flat_means = means.reshape(-1, grid.size)
    variance_of_means = flat_means.var(axis=0)
    iat = np.full(grid.size, np.nan)
    radius = np.zeros(grid.size)
    for point in range(grid.size):
        try:
            tau = batch_averaged_iat(means[:, :, point], iat_config).tau
        except (DegenerateVarianceError, DomainError):
            continue
        iat[point] = tau
        radius[point] = 2.0 * np.sqrt(variance_of_means[point]) / np.sqrt(length * batch / tau)
    return PosteriorSummary(
        mean=flat_means.mean(axis=0),
        expected_variance=variances.reshape(-1, grid.size).mean(axis=0),
        variance_of_means=variance_of_means,
        iat=iat,
        ci_radius=radius,
        n_samples=length,
    )
