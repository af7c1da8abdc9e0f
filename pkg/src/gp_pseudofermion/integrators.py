"""Hamiltonian Integrators for Hyperparameter HMC.

This module integrates Hamilton's equations for H(theta, pi) = U(theta) + 1/2 pi^T M^{-1} pi
with two symplectic, time-reversible schemes:

- leapfrog (Stormer-Verlet, position first), fusing adjacent half steps so that N_int
  steps cost N_int force evaluations;
- implicit midpoint, whose nonlinear equations are solved by Anderson acceleration. For the
  pseudofermion target the linear system A(theta_mid) x = y is folded into the same fixed
  point, so no inner CG solve runs per iteration.

Features:
- `MassMatrix` (identity, diagonal, or dense SPD) with sampling and inversion.
- `HMCConfig` for step size, step count, integrator kind, and implicit-map policy.
- `leapfrog_trajectory`, `implicit_midpoint_step`, `implicit_midpoint_trajectory`.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Optional
import numpy as np
import scipy.linalg
from numpy.random import Generator
from scipy.sparse.linalg import LinearOperator
from gp_pseudofermion.anderson import AndersonConfig, anderson_solve
from gp_pseudofermion.errors import ConfigError
from gp_pseudofermion.matfree_linalg import RescalingPreconditioner, power_method
from gp_pseudofermion.target import ExtendedState, TargetModel


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MassMatrix:
    """The HMC mass matrix M.

    Attributes:
        size (int): The dimension n.
        kind (Literal["identity", "diagonal", "dense"]): The structure of M.
        values (Optional[np.ndarray]): The diagonal (length n) or dense (n, n) entries.
    """

    size: int
    kind: Literal["identity", "diagonal", "dense"] = "identity"
    values: Optional[np.ndarray] = None
    _factor: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kind == "identity":
            return
        values = np.asarray(self.values, dtype=float)
        if self.kind == "diagonal":
            if values.shape != (self.size,) or np.any(values <= 0.0):
                raise ConfigError("diagonal mass matrix needs n positive entries")
        elif self.kind == "dense":
            if values.shape != (self.size, self.size) or not np.allclose(values, values.T):
                raise ConfigError("dense mass matrix must be a symmetric (n, n) array")
            try:
                object.__setattr__(self, "_factor", np.linalg.cholesky(values))
            except np.linalg.LinAlgError as error:
                raise ConfigError("dense mass matrix is not positive definite") from error
        else:
            raise ConfigError(f"unknown mass matrix kind {self.kind!r}")
        object.__setattr__(self, "values", values)

    def sample(self, rng: Generator) -> np.ndarray:
        """Draws pi ~ N(0, M)."""
        z = rng.standard_normal(self.size)
        if self.kind == "diagonal":
            return np.sqrt(self.values) * z
        if self.kind == "dense":
            return self._factor @ z
        return z

    def inverse_apply(self, pi: np.ndarray) -> np.ndarray:
        """Computes M^{-1} pi."""
        if self.kind == "diagonal":
            return pi / self.values
        if self.kind == "dense":
            return scipy.linalg.cho_solve((self._factor, True), pi)
        return pi

    def kinetic(self, pi: np.ndarray) -> float:
        return 0.5 * float(pi @ self.inverse_apply(pi))


@dataclass(frozen=True, eq=False)
class HMCConfig:
    """Configuration of one HMC trajectory.

    Attributes:
        dt (float): The step size (0 gives the identity map).
        n_int (int): The number of integration steps per trajectory.
        integrator (Literal["leapfrog", "implicit_midpoint"]): The integration scheme.
        mass (Optional[MassMatrix]): The mass matrix; identity when None.
        preconditioner (Literal["none", "rescale", "nystrom"]): The preconditioner R of
            the linear block of the implicit map.
        rescale (bool): Rescale the Nystrom preconditioner by its power-method radius.
        power_iters (int): Power-method iterations for rescaling constants.
        anderson (AndersonConfig): The fixed-point solver of the implicit map.
    """

    dt: float
    n_int: int = 1
    integrator: Literal["leapfrog", "implicit_midpoint"] = "leapfrog"
    mass: Optional[MassMatrix] = None
    preconditioner: Literal["none", "rescale", "nystrom"] = "rescale"
    rescale: bool = False
    power_iters: int = 10
    anderson: AndersonConfig = field(default_factory=AndersonConfig)

    def __post_init__(self) -> None:
        if self.dt < 0.0:
            raise ConfigError(f"step size must be nonnegative, got {self.dt}")
        if self.n_int < 1:
            raise ConfigError(f"integration count must be at least 1, got {self.n_int}")
        if self.integrator not in ("leapfrog", "implicit_midpoint"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.preconditioner not in ("none", "rescale", "nystrom"):
            raise ConfigError(f"unknown preconditioner policy {self.preconditioner!r}")

    def mass_for(self, size: int) -> MassMatrix:
        mass = self.mass or MassMatrix(size)
        if mass.size != size:
            raise ConfigError(f"mass matrix of size {mass.size} for {size} hyperparameters")
        return mass


def leapfrog_trajectory(
    state: ExtendedState, pi0: np.ndarray, config: HMCConfig, target: Any
) -> tuple[ExtendedState, np.ndarray, int]:
    """Integrates N_int leapfrog steps from (theta, pi0).

    Position half step, then N_int - 1 fused (force, full position) steps, then a final
    force step and position half step: N_int force evaluations and N_int + 1 mass
    inversions.

    Args:
        state (ExtendedState): The starting state; never mutated.
        pi0 (np.ndarray): The starting momentum.
        config (HMCConfig): Step size, step count, mass matrix.
        target (Any): Provides `force(state)`.

    Returns:
        tuple[ExtendedState, np.ndarray, int]: The end state, end momentum, force count.
    """
    mass = config.mass_for(state.theta.shape[0])
    dt = config.dt
    theta = state.theta + 0.5 * dt * mass.inverse_apply(pi0)
    pi = np.array(pi0, dtype=float)
    current = state.moved(theta)
    for step in range(config.n_int):
        pi = pi - dt * target.force(current)
        fraction = 1.0 if step < config.n_int - 1 else 0.5
        current = state.moved(current.theta + fraction * dt * mass.inverse_apply(pi))
    return current, pi, config.n_int


def _linear_preconditioner(
    state: ExtendedState, target: TargetModel, config: HMCConfig
) -> Callable[[np.ndarray], np.ndarray]:
    """Builds R(theta0) for the linear block x <- x + R (y - A x) of the implicit map."""
    operator = target.operator(state.theta)
    if config.preconditioner == "none":
        return lambda r: r
    if config.preconditioner == "nystrom" and state.preconditioner is not None:
        woodbury = state.preconditioner.with_noise(operator.sigma_sq)
        if not config.rescale:
            return woodbury.apply
        composed = LinearOperator(
            shape=operator.shape,
            matvec=lambda v: woodbury.apply(operator.apply(v)),
            dtype=np.float64,
        )
        radius = power_method(composed, config.power_iters)
        return lambda r: woodbury.apply(r) / radius
    if config.preconditioner == "nystrom":
        LOGGER.debug("no Nystrom factorization available yet; rescaling instead")
    return RescalingPreconditioner(power_method(operator, config.power_iters)).apply


def implicit_midpoint_step(
    state: ExtendedState, pi0: np.ndarray, config: HMCConfig, target: Any
) -> tuple[ExtendedState, np.ndarray]:
    """Takes one implicit midpoint step by solving the fixed point of the map Phi.

    With theta_mid = (theta0 + theta1) / 2 the step satisfies

        theta1 = theta0 + dt M^{-1} (pi0 + pi1) / 2
        pi1    = pi0 - dt F(theta_mid)

    For a pseudofermion target the force is f(theta_mid, x) with x appended to the
    unknowns and updated by x <- x + R (y - A(theta_mid) x), R fixed at theta0; at the fixed
    point x = A(theta_mid)^{-1} y. All unknowns are concatenated into one vector. After
    convergence A(theta1) x = y is solved once for the Metropolis test.

    Args:
        state (ExtendedState): The starting state; never mutated.
        pi0 (np.ndarray): The starting momentum.
        config (HMCConfig): Step size, mass matrix, preconditioner policy, Anderson config.
        target (Any): A `TargetModel`, or any object providing `force(state)`.

    Returns:
        tuple[ExtendedState, np.ndarray]: The end state and end momentum.

    Raises:
        AndersonConvergenceError: If the fixed-point iteration does not converge.
    """
    mass = config.mass_for(state.theta.shape[0])
    n, dt = state.theta.shape[0], config.dt
    theta0, pi0 = state.theta, np.asarray(pi0, dtype=float)
    initial_theta = theta0 + dt * mass.inverse_apply(pi0)
    fused = isinstance(target, TargetModel) and target.kind == "pseudofermion"
    if fused:
        y = target.dataset.observations
        precondition = _linear_preconditioner(state, target, config)

        def phi_map(z: np.ndarray) -> np.ndarray:
            theta1, pi1, x = z[:n], z[n : 2 * n], z[2 * n :]
            middle = state.moved(0.5 * (theta0 + theta1))
            state.stats.force_evaluations += 1
            force = target.prior.gradient(middle.theta) + target.pseudofermion_force(middle, x)
            residual = y - target.operator(middle.theta).apply(x)
            return np.concatenate(
                [
                    theta0 + 0.5 * dt * mass.inverse_apply(pi0 + pi1),
                    pi0 - dt * force,
                    x + precondition(residual),
                ]
            )

        start = np.concatenate([initial_theta, pi0, target.solution(state)])
    else:

        def phi_map(z: np.ndarray) -> np.ndarray:
            theta1, pi1 = z[:n], z[n:]
            middle = state.moved(0.5 * (theta0 + theta1))
            return np.concatenate(
                [theta0 + 0.5 * dt * mass.inverse_apply(pi0 + pi1), pi0 - dt * target.force(middle)]
            )

        start = np.concatenate([initial_theta, pi0])
    result = anderson_solve(phi_map, start, config.anderson)
    state.stats.anderson_iterations += result.iterations
    end = state.moved(result.x[:n])
    if fused:
        target.solution(end)
    return end, result.x[n : 2 * n]


def implicit_midpoint_trajectory(
    state: ExtendedState, pi0: np.ndarray, config: HMCConfig, target: Any
) -> tuple[ExtendedState, np.ndarray, int]:
    """Chains N_int implicit midpoint steps; returns end state, end momentum, step count."""
    current, pi = state, np.asarray(pi0, dtype=float)
    for _ in range(config.n_int):
        current, pi = implicit_midpoint_step(current, pi, config, target)
    return current, pi, config.n_int
