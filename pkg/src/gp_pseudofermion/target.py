"""Extended-Density Targets for GP Hyperparameter Sampling.

This module defines the sampling targets over the hyperparameter vector theta. The
pseudofermion target replaces the determinant factor of the GP marginal likelihood by an
auxiliary Gaussian field phi, giving the extended potential

    U_phi(theta) = S(theta) + 1/2 y^T A(theta)^{-1} y + 1/2 phi^T A(theta) phi,

whose evaluation and gradient need only linear solves and matrix-vector products. The
determinant target evaluates 1/2 log|A(theta)| + 1/2 y^T A(theta)^{-1} y + S(theta) by dense
Cholesky factorization and serves as a reference.

Features:
- `ExtendedState` with cached solutions invalidated on every change of theta.
- `TargetModel` tying a dataset, kernel template, solver settings, and prior together.
- `potential`, `force`, `gibbs_update_phi`, and `refresh_preconditioner`.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Protocol, runtime_checkable
import numpy as np
import scipy.linalg
from numpy.random import Generator
from gp_pseudofermion.errors import ConfigError, FactorizationError
from gp_pseudofermion.kernel_model import (
    DEFAULT_TILE_SIZE,
    Dataset,
    HyperParams,
    KernelOperator,
    logdet_grad,
    quad_form_grad,
)
from gp_pseudofermion.matfree_linalg import (
    NystromPreconditioner,
    SolveConfig,
    cg_solve,
    nystrom_factorize,
)
from gp_pseudofermion.pole_expansion import (
    BOUND_INFLATION,
    BOUND_ITERATIONS,
    DEFAULT_POLES,
    build_pole_expansion,
    estimate_bounds,
    expansion_solve,
)


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Largest N for which the dense determinant target may be built.
DEFAULT_DENSE_LIMIT = 4096


@runtime_checkable
class Prior(Protocol):
    """The negative log prior S(theta) and its gradient."""

    def action(self, theta: np.ndarray) -> float:
        ...

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class FlatPrior:
    """The flat prior p(theta) = 1, S(theta) = 0."""

    def action(self, theta: np.ndarray) -> float:
        return 0.0

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return np.zeros_like(theta, dtype=float)


@dataclass(frozen=True)
class GaussianPrior:
    """An isotropic Gaussian prior N(0, scale^2 I), S(theta) = |theta|^2 / (2 scale^2)."""

    scale: float = 1.0

    def action(self, theta: np.ndarray) -> float:
        return 0.5 * float(theta @ theta) / self.scale**2

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return theta / self.scale**2


@dataclass(eq=False)
class SolverStats:
    """Running solver counters of one chain."""

    cg_iterations: int = 0
    pole_iterations: int = 0
    anderson_iterations: int = 0
    force_evaluations: int = 0

    @property
    def total_iterations(self) -> int:
        return self.cg_iterations + self.pole_iterations + self.anderson_iterations


@dataclass(eq=False)
class ExtendedState:
    """The pair (theta, phi) with caches of x_theta = A(theta)^{-1} y and U_phi(theta).

    Attributes:
        theta (np.ndarray): The hyperparameter vector.
        phi (Optional[np.ndarray]): The auxiliary field; None for the determinant target.
        preconditioner (Optional[NystromPreconditioner]): The chain's low-rank factorization.
        chain_id (int): The chain index, for logging.
        step (int): The current outer step, for logging.
        stats (SolverStats): Solver counters shared by every state of the chain.
    """

    theta: np.ndarray
    phi: Optional[np.ndarray] = None
    preconditioner: Optional[NystromPreconditioner] = None
    chain_id: int = 0
    step: int = 0
    stats: SolverStats = field(default_factory=SolverStats)
    _solution: Optional[np.ndarray] = field(default=None, repr=False)
    _potential: Optional[float] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.theta = np.array(self.theta, dtype=float).ravel()
        if self.phi is not None:
            self.phi = np.array(self.phi, dtype=float).ravel()

    def moved(self, theta: np.ndarray) -> "ExtendedState":
        """Returns a state at `theta` sharing phi, preconditioner, and counters, caches empty."""
        return ExtendedState(
            theta=theta,
            phi=self.phi,
            preconditioner=self.preconditioner,
            chain_id=self.chain_id,
            step=self.step,
            stats=self.stats,
        )

    def set_phi(self, phi: np.ndarray) -> None:
        self.phi = np.array(phi, dtype=float).ravel()
        self._potential = None

    def invalidate(self) -> None:
        self._solution = None
        self._potential = None


@dataclass(frozen=True, eq=False)
class TargetModel:
    """A posterior over kernel hyperparameters given a dataset.

    Attributes:
        kind (Literal["pseudofermion", "determinant"]): Which extended density is sampled.
        dataset (Dataset): The normalized data.
        template (HyperParams): Kernel shape, frozen scale values, and inference flags;
            its inferred entries are replaced by theta.
        solve_config (SolveConfig): Tolerance and limits of every linear solve.
        prior (Prior): The prior action S(theta).
        n_poles (int): Poles of the A^{-1/2} expansion in the Gibbs update.
        shared_krylov (bool): Solve the pole systems from one shared Krylov space.
        precond_rank (int): Nystrom rank for CG preconditioning, 0 to disable.
        tile_size (int): Rows per streamed kernel block.
        dense_limit (int): Largest N admitted by the determinant target.
    """

    kind: Literal["pseudofermion", "determinant"]
    dataset: Dataset
    template: HyperParams
    solve_config: SolveConfig = field(default_factory=SolveConfig)
    prior: Prior = field(default_factory=FlatPrior)
    n_poles: int = DEFAULT_POLES
    shared_krylov: bool = False
    precond_rank: int = 0
    tile_size: int = DEFAULT_TILE_SIZE
    dense_limit: int = DEFAULT_DENSE_LIMIT
    bound_iterations: int = BOUND_ITERATIONS
    bound_inflation: float = BOUND_INFLATION

    def __post_init__(self) -> None:
        if self.kind not in ("pseudofermion", "determinant"):
            raise ConfigError(f"unknown target kind {self.kind!r}")
        if self.kind == "determinant" and self.dataset.n_points > self.dense_limit:
            raise ConfigError(
                f"determinant target limited to N <= {self.dense_limit}, got {self.dataset.n_points}"
            )
        if self.precond_rank < 0 or self.precond_rank > self.dataset.n_points:
            raise ConfigError(f"preconditioner rank {self.precond_rank} outside [0, N]")
        if self.shared_krylov and self.precond_rank:
            raise ConfigError("shared-Krylov pole solves cannot be preconditioned")

    @property
    def dimension(self) -> int:
        return self.template.size

    @property
    def n_points(self) -> int:
        return self.dataset.n_points

    def hyperparams(self, theta: np.ndarray) -> HyperParams:
        return self.template.with_vector(theta)

    def operator(self, theta: np.ndarray) -> KernelOperator:
        return KernelOperator(self.dataset, self.hyperparams(theta), self.tile_size)

    def initial_state(self, value: float = 0.01, chain_id: int = 0) -> ExtendedState:
        """Returns the state with every hyperparameter equal to `value`."""
        phi = np.zeros(self.n_points) if self.kind == "pseudofermion" else None
        return ExtendedState(np.full(self.dimension, value), phi=phi, chain_id=chain_id)

    def config_for(self, state: ExtendedState, operator: KernelOperator) -> SolveConfig:
        """The solve configuration with the chain's Woodbury preconditioner at sigma^2(theta)."""
        if state.preconditioner is None:
            return self.solve_config
        return self.solve_config.with_preconditioner(state.preconditioner.with_noise(operator.sigma_sq))

    def solution(self, state: ExtendedState) -> np.ndarray:
        """Returns x_theta = A(theta)^{-1} y, solving at most once per theta."""
        if state._solution is None:
            operator = self.operator(state.theta)
            result = cg_solve(operator, self.dataset.observations, self.config_for(state, operator))
            state.stats.cg_iterations += result.iterations
            state._solution = result.x
        return state._solution

    def _factor(self, state: ExtendedState) -> tuple[KernelOperator, tuple]:
        operator = self.operator(state.theta)
        try:
            return operator, scipy.linalg.cho_factor(operator.dense(), lower=True)
        except np.linalg.LinAlgError as error:
            raise FactorizationError(f"dense Cholesky failed: {error}", state.theta) from error

    def potential(self, state: ExtendedState) -> float:
        """Evaluates the potential of this target at `state`, cached per (theta, phi)."""
        if state._potential is not None:
            return state._potential
        y = self.dataset.observations
        value = self.prior.action(state.theta)
        if self.kind == "pseudofermion":
            x = self.solution(state)
            phi = state.phi if state.phi is not None else np.zeros(self.n_points)
            value += 0.5 * float(y @ x) + 0.5 * float(phi @ self.operator(state.theta).apply(phi))
        else:
            _, factor = self._factor(state)
            x = scipy.linalg.cho_solve(factor, y)
            state._solution = x
            value += float(np.sum(np.log(np.diag(factor[0])))) + 0.5 * float(y @ x)
        state._potential = value
        return value

    def force(self, state: ExtendedState) -> np.ndarray:
        """Evaluates the gradient of the potential with respect to theta."""
        state.stats.force_evaluations += 1
        grad = self.prior.gradient(state.theta)
        if self.kind == "pseudofermion":
            x = self.solution(state)
            return grad + self.pseudofermion_force(state, x)
        operator, factor = self._factor(state)
        inverse = scipy.linalg.cho_solve(factor, np.eye(self.n_points))
        x = inverse @ self.dataset.observations
        state._solution = x
        return grad + 0.5 * logdet_grad(operator, inverse) - 0.5 * quad_form_grad(operator, x)

    def pseudofermion_force(self, state: ExtendedState, x: np.ndarray) -> np.ndarray:
        """Computes -1/2 grad[x^T A x] + 1/2 grad[phi^T A phi] with x held fixed, prior excluded."""
        operator = self.operator(state.theta)
        grad = -0.5 * quad_form_grad(operator, x)
        if state.phi is not None:
            grad += 0.5 * quad_form_grad(operator, state.phi)
        return grad


def potential(state: ExtendedState, target: TargetModel) -> float:
    """Computes U_phi(theta) (or the determinant potential) at `state`."""
    return target.potential(state)


def force(state: ExtendedState, target: TargetModel) -> np.ndarray:
    """Computes the force F = grad U at `state`, caching x_theta for reuse."""
    return target.force(state)


def gibbs_update_phi(state: ExtendedState, target: TargetModel, rng: Generator) -> np.ndarray:
    """Draws phi | theta ~ N(0, A(theta)^{-1}) exactly as phi = A(theta)^{-1/2} xi.

    Args:
        state (ExtendedState): The state whose phi is replaced.
        target (TargetModel): A pseudofermion target.
        rng (Generator): The chain's random stream.

    Returns:
        np.ndarray: The new auxiliary field.
    """
    if target.kind != "pseudofermion":
        raise ConfigError("the Gibbs update of phi needs a pseudofermion target")
    xi = rng.standard_normal(target.n_points)
    operator = target.operator(state.theta)
    bounds = estimate_bounds(
        operator, operator.sigma_sq, target.bound_iterations, target.bound_inflation
    )
    expansion = build_pole_expansion(bounds, target.n_poles)
    config = target.config_for(state, operator)
    result = expansion_solve(
        operator,
        xi,
        expansion,
        config.with_preconditioner(None),
        config.preconditioner,
        mode="shared" if target.shared_krylov else "independent",
    )
    state.stats.pole_iterations += result.iterations
    state.set_phi(result.x)
    return state.phi


def refresh_preconditioner(state: ExtendedState, target: TargetModel, rng: Generator) -> None:
    """Rebuilds the chain's Nystrom factorization of K(theta) at the current theta."""
    if not target.precond_rank:
        return
    operator = target.operator(state.theta)
    state.preconditioner = nystrom_factorize(
        operator.linear_operator(kernel_only=True), target.n_points, target.precond_rank, rng
    )
