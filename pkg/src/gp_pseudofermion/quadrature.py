"""Quadrature Reference Posterior for Two Hyperparameters.

This module evaluates the exact hyperparameter posterior

    P(theta) ~ exp(-S(theta)) |A(theta)|^{-1/2} exp(-1/2 y^T A(theta)^{-1} y)

on a regular grid over a square box with dense Cholesky factorizations, normalizes it
by the trapezoidal rule and tabulates its marginal CDFs and means. Sampler output is
checked against these tables.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
from dataclasses import dataclass
from typing import Optional
import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from gp_pseudofermion.errors import FactorizationError, UnsupportedDimensionError
from gp_pseudofermion.kernel_model import Dataset, HyperParams, KernelOperator
from gp_pseudofermion.target import FlatPrior, Prior


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QuadratureReference:
    """The normalized posterior density on a grid with its marginals.

    Attributes:
        axis (np.ndarray): The grid coordinates, shared by both hyperparameters.
        density (np.ndarray): Normalized density values, indexed [theta_0, theta_1].
        marginals (np.ndarray): Marginal densities, shape (2, resolution).
        cdfs (np.ndarray): Marginal CDFs at the grid coordinates, from 0 to 1.
        means (np.ndarray): The posterior mean of each hyperparameter.
    """

    axis: np.ndarray
    density: np.ndarray
    marginals: np.ndarray
    cdfs: np.ndarray
    means: np.ndarray

    @property
    def resolution(self) -> int:
        return self.axis.shape[0]

    @property
    def mass(self) -> float:
        """The trapezoidal integral of `density` over the box."""
        return float(trapezoid(trapezoid(self.density, self.axis, axis=1), self.axis))

    def cdf(self, component: int, values: np.ndarray) -> np.ndarray:
        """Interpolates the marginal CDF of one hyperparameter at `values`."""
        return np.interp(values, self.axis, self.cdfs[component], left=0.0, right=1.0)


def log_density_grid(
    dataset: Dataset,
    template: HyperParams,
    axis: np.ndarray,
    prior: Optional[Prior] = None,
) -> np.ndarray:
    """Evaluates -U(theta) = -(1/2 log|A| + 1/2 y^T A^{-1} y + S) at every grid node.

    Returns:
        np.ndarray: Log density values (up to a constant), shape (R, R).
    """
    prior = prior or FlatPrior()
    nodes = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    matrices = np.stack(
        [KernelOperator(dataset, template.with_vector(theta)).dense() for theta in nodes]
    )
    try:
        factors = np.linalg.cholesky(matrices)
    except np.linalg.LinAlgError as error:
        raise FactorizationError(f"dense Cholesky failed on the quadrature grid: {error}", nodes[0]) from error
    y = np.broadcast_to(dataset.observations, (nodes.shape[0], dataset.n_points))[..., None]
    whitened = np.linalg.solve(factors, y)[..., 0]
    half_logdet = np.sum(np.log(np.diagonal(factors, axis1=1, axis2=2)), axis=1)
    actions = np.array([prior.action(theta) for theta in nodes])
    potential = half_logdet + 0.5 * np.sum(whitened**2, axis=1) + actions
    return -potential.reshape(axis.shape[0], axis.shape[0])


def quadrature_reference(
    dataset: Dataset,
    template: HyperParams,
    lower: float = -3.0,
    upper: float = 3.0,
    resolution: int = 100,
    prior: Optional[Prior] = None,
) -> QuadratureReference:
    """Computes the reference posterior of a two-hyperparameter model on a grid.

    Args:
        dataset (Dataset): The normalized data.
        template (HyperParams): A template whose inferred dimension is 2.
        lower (float): Lower bound of the box in each hyperparameter.
        upper (float): Upper bound of the box in each hyperparameter.
        resolution (int): Grid points per axis.
        prior (Optional[Prior]): The prior; flat when None.

    Returns:
        QuadratureReference: Density, marginal CDFs, and means.

    Raises:
        UnsupportedDimensionError: If the template does not infer exactly two entries.
    """
    if template.size != 2:
        raise UnsupportedDimensionError(f"quadrature reference needs n = 2, got {template.size}")
    axis = np.linspace(lower, upper, resolution)
    log_density = log_density_grid(dataset, template, axis, prior)
    density = np.exp(log_density - log_density.max())
    density /= trapezoid(trapezoid(density, axis, axis=1), axis)
    marginals = np.stack([trapezoid(density, axis, axis=1), trapezoid(density, axis, axis=0)])
    cdfs = cumulative_trapezoid(marginals, axis, axis=1, initial=0.0)
    cdfs /= cdfs[:, -1:]
    means = trapezoid(marginals * axis, axis, axis=1)
    LOGGER.debug(f"quadrature reference on {resolution}^2 nodes, means {means}")
    return QuadratureReference(axis=axis, density=density, marginals=marginals, cdfs=cdfs, means=means)
