"""Anderson-Accelerated Fixed-Point Iteration.

This module solves x = g(x) by Anderson acceleration: each new iterate is the affine
combination of the last k map values whose matching residuals have least norm. The
affine constraint is eliminated by working with residual differences, and the reduced
least-squares problem is solved by a column-pivoted QR factorization that drops
numerically dependent columns.

Features:
- `AndersonConfig` with history depth, iteration limit, tolerance, Tikhonov term.
- `anderson_solve` evaluating the map exactly once per iterate.
- Non-convergence errors carrying the best iterate; divergence on non-finite output.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
from collections import deque
from typing import Callable, NamedTuple, Optional
import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field
from gp_pseudofermion.errors import AndersonConvergenceError, DivergenceError


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)


class AndersonConfig(BaseModel):
    """Configuration of the Anderson fixed-point solver.

    Attributes:
        depth (int): The number k of stored (iterate, residual) pairs.
        max_iter (int): The maximum number of map evaluations.
        tol (float): Convergence when |x - g(x)| <= tol (1 + |x0|).
        regularization (float): Tikhonov weight added to the least-squares problem.
        drop_tol (float): Relative pivot size below which difference columns are dropped.
    """

    model_config = ConfigDict(frozen=True)

    depth: int = Field(
        default=10,
        ge=1,
        description="The number of previous iterates combined at each step.",
    )
    max_iter: int = Field(
        default=200,
        ge=1,
        description="The maximum number of fixed-point map evaluations.",
    )
    tol: float = Field(
        default=1e-10,
        gt=0.0,
        description="The residual tolerance, relative to 1 + |x0|.",
    )
    regularization: float = Field(
        default=0.0,
        ge=0.0,
        description="The Tikhonov regularization of the least-squares problem.",
    )
    drop_tol: float = Field(
        default=1e-12,
        gt=0.0,
        description="The relative pivot threshold for dropping dependent columns.",
    )


class AndersonResult(NamedTuple):
    """The fixed point, the number of map evaluations, and the residual norm per iterate."""

    x: np.ndarray
    iterations: int
    residuals: list[float]


def _least_squares(
    differences: np.ndarray, target: np.ndarray, config: AndersonConfig
) -> np.ndarray:
    """Minimizes |target - differences @ gamma|^2 + regularization |gamma|^2."""
    n_cols = differences.shape[1]
    matrix, rhs = differences, target
    if config.regularization > 0.0:
        matrix = np.vstack([differences, math.sqrt(config.regularization) * np.eye(n_cols)])
        rhs = np.concatenate([target, np.zeros(n_cols)])
    q, r, pivots = scipy.linalg.qr(matrix, mode="economic", pivoting=True)
    pivot_sizes = np.abs(np.diag(r))
    gamma = np.zeros(n_cols)
    if pivot_sizes.size == 0 or pivot_sizes[0] == 0.0:
        return gamma
    rank = int(np.count_nonzero(pivot_sizes > config.drop_tol * pivot_sizes[0]))
    if rank < n_cols:
        LOGGER.debug(f"dropping {n_cols - rank} dependent Anderson columns")
    gamma[pivots[:rank]] = scipy.linalg.solve_triangular(r[:rank, :rank], q[:, :rank].T @ rhs)
    return gamma


def anderson_solve(
    g: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    config: AndersonConfig,
    callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> AndersonResult:
    """Finds a fixed point of `g` by Anderson acceleration.

    Iterate n evaluates g(x_n) once, stores the pair (g(x_n), f_n = g(x_n) - x_n), and
    extrapolates x_{n+1} = g(x_n) - dG gamma where gamma minimizes |f_n - dF gamma| over
    the differences of the stored residuals. With depth 1 this is plain fixed-point
    iteration.

    Args:
        g (Callable[[np.ndarray], np.ndarray]): The fixed-point map.
        x0 (np.ndarray): The initial iterate.
        config (AndersonConfig): Depth, tolerance, and limits.
        callback (Optional[Callable[[int, np.ndarray, float], None]]): Called with the
            iteration number, the iterate, and its residual norm.

    Returns:
        AndersonResult: The converged iterate x with |x - g(x)| <= tol (1 + |x0|).

    Raises:
        AndersonConvergenceError: If `max_iter` evaluations do not converge.
        DivergenceError: If `g` returns non-finite values.
    """
    x = np.array(x0, dtype=float)
    threshold = config.tol * (1.0 + float(np.linalg.norm(x)))
    values: deque = deque(maxlen=config.depth)
    residuals: deque = deque(maxlen=config.depth)
    history: list[float] = []
    best, best_norm = x.copy(), math.inf
    for iteration in range(1, config.max_iter + 1):
        gx = np.asarray(g(x), dtype=float)
        if not np.all(np.isfinite(gx)):
            raise DivergenceError(f"fixed-point map returned non-finite values at iteration {iteration}")
        f = gx - x
        norm = float(np.linalg.norm(f))
        history.append(norm)
        if callback is not None:
            callback(iteration, x, norm)
        if norm < best_norm:
            best, best_norm = x.copy(), norm
        if norm <= threshold:
            return AndersonResult(x, iteration, history)
        values.append(gx)
        residuals.append(f)
        if len(residuals) == 1:
            x = gx.copy()
            continue
        dg = np.diff(np.stack(values, axis=1), axis=1)
        df = np.diff(np.stack(residuals, axis=1), axis=1)
        x = gx - dg @ _least_squares(df, f, config)
    raise AndersonConvergenceError(
        f"Anderson acceleration did not reach {threshold:.3e}",
        config.max_iter,
        best_norm,
        best,
    )
