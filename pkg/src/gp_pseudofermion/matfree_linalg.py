"""Matrix-Free Linear Algebra for Symmetric Positive Definite Operators.

This module provides the Krylov and randomized building blocks used by the sampler: batched
preconditioned conjugate gradients over many right-hand sides and diagonal shifts, a
shared-Krylov multi-shift CG, power-method spectral estimates, and randomized Nystrom
preconditioners applied through the Woodbury identity.

Operators are scipy `LinearOperator`s (or anything exposing `linear_operator()`, or a dense
array); all algorithms work on caller-owned arrays and keep no state between calls.

Features:
- `cg_solve` / `batched_shifted_solve` with per-system residual contracts.
- `power_method` Rayleigh-quotient spectral radius estimates.
- `nystrom_factorize` / `woodbury_apply` low-rank preconditioning shared across shifts.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, NamedTuple, Optional, Protocol, Union, runtime_checkable
import numpy as np
import scipy.linalg
from numpy.random import Generator
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.linalg import LinearOperator, aslinearoperator
from gp_pseudofermion.errors import ConfigError, ConvergenceError, DomainError


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Default Nystrom oversampling beyond the requested rank.
NYSTROM_OVERSAMPLING = 10
# Seed of the fixed power-method start vector.
POWER_METHOD_SEED = 0


@runtime_checkable
class Preconditioner(Protocol):
    """Approximates (A + shift I)^{-1} applied to the columns of a residual block."""

    def apply(self, residual: np.ndarray, shifts: Union[float, np.ndarray] = 0.0) -> np.ndarray:
        ...


class SolveConfig(BaseModel):
    """Configuration of the iterative linear solvers.

    Attributes:
        tol (float): Relative residual tolerance |A x - b| / |b|.
        max_iter (int): Maximum number of (block) CG iterations.
        preconditioner (Optional[Preconditioner]): Applied per shift when present.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tol: float = Field(
        default=1e-6,
        gt=0.0,
        description="The relative residual tolerance of every linear solve.",
    )
    max_iter: int = Field(
        default=1000,
        ge=1,
        description="The maximum number of CG iterations before a convergence failure.",
    )
    preconditioner: Optional[Preconditioner] = Field(
        default=None,
        exclude=True,
        description="An optional preconditioner handle, never serialized.",
    )

    def with_preconditioner(self, preconditioner: Optional[Preconditioner]) -> "SolveConfig":
        return self.model_copy(update={"preconditioner": preconditioner})


class SolveResult(NamedTuple):
    """The solution of one linear system with its iteration count and final residual."""

    x: np.ndarray
    iterations: int
    residual: float


class BatchSolveResult(NamedTuple):
    """Solutions of a batch of systems; the last axis of `x` indexes the shifts."""

    x: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray


def as_operator(operator: Any) -> LinearOperator:
    """Converts a kernel operator, dense array, or linear operator to a `LinearOperator`."""
    if hasattr(operator, "linear_operator"):
        return operator.linear_operator()
    return aslinearoperator(operator)


def shifted_operator(operator: Any, shift: float) -> LinearOperator:
    """Returns the operator A + shift I for a nonnegative diagonal shift."""
    if shift < 0.0:
        raise DomainError(f"diagonal shift must be nonnegative, got {shift}")
    base = as_operator(operator)
    return LinearOperator(
        shape=base.shape,
        matvec=lambda v: base.matvec(v) + shift * v,
        matmat=lambda V: base.matmat(V) + shift * V,
        rmatvec=lambda v: base.matvec(v) + shift * v,
        dtype=np.float64,
    )


def _relative(norms: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return norms / np.where(scale > 0.0, scale, 1.0)


def _block_cg(
    operator: LinearOperator,
    rhs: np.ndarray,
    shifts: np.ndarray,
    config: SolveConfig,
) -> BatchSolveResult:
    """Runs independent preconditioned CG on every column of `rhs` for (A + shift_j I).

    Active columns share one block apply per iteration. On exit the true residual of
    every column is recomputed; columns whose recursive residual drifted are restarted
    from their true residual within the same iteration budget.
    """
    n_rows, n_cols = rhs.shape
    precond = config.preconditioner
    scale = np.linalg.norm(rhs, axis=0)
    x = np.zeros_like(rhs)
    residual = rhs.copy()
    iterations = np.zeros(n_cols, dtype=int)
    total = 0

    def block_apply(p: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return operator.matmat(p) + p * shifts[cols]

    def precondition(r: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return r if precond is None else precond.apply(r, shifts[cols])

    active = _relative(np.linalg.norm(residual, axis=0), scale) > config.tol
    while True:
        cols = np.flatnonzero(active)
        z = precondition(residual[:, cols], cols)
        direction = np.zeros_like(rhs)
        direction[:, cols] = z
        rz = np.zeros(n_cols)
        rz[cols] = np.sum(residual[:, cols] * z, axis=0)
        while active.any() and total < config.max_iter:
            cols = np.flatnonzero(active)
            p = direction[:, cols]
            ap = block_apply(p, cols)
            curvature = np.sum(p * ap, axis=0)
            if np.any(curvature <= 0.0):
                raise ConvergenceError(
                    "CG breakdown: operator is not positive definite",
                    total,
                    float(np.max(_relative(np.linalg.norm(residual, axis=0), scale))),
                )
            alpha = rz[cols] / curvature
            x[:, cols] += alpha * p
            residual[:, cols] -= alpha * ap
            iterations[cols] += 1
            total += 1
            done = np.linalg.norm(residual[:, cols], axis=0) <= config.tol * scale[cols]
            z = precondition(residual[:, cols], cols)
            rz_new = np.sum(residual[:, cols] * z, axis=0)
            direction[:, cols] = z + (rz_new / rz[cols]) * p
            rz[cols] = rz_new
            active[cols[done]] = False
        true_residual = rhs - block_apply(x, np.arange(n_cols))
        relative = _relative(np.linalg.norm(true_residual, axis=0), scale)
        failing = relative > config.tol
        if not failing.any():
            return BatchSolveResult(x, iterations, relative)
        if total >= config.max_iter:
            raise ConvergenceError(
                f"CG did not reach tolerance {config.tol:.1e} on {int(failing.sum())} of {n_cols} systems",
                total,
                float(relative.max()),
                relative,
            )
        LOGGER.debug(f"restarting {int(failing.sum())} CG systems from their true residual")
        residual = true_residual
        active = failing


def _multishift_cg(
    operator: LinearOperator,
    rhs: np.ndarray,
    shifts: np.ndarray,
    config: SolveConfig,
) -> BatchSolveResult:
    """Solves (A + shift_j I) x_j = b for all shifts from one Krylov space.

    The smallest shift is the seed system; every other system's residual is collinear
    with the seed residual, r_j = zeta_j r, and its iterates follow from the seed
    coefficients through the zeta recurrence. Unpreconditioned only.
    """
    seed = float(shifts.min())
    relative_shifts = shifts - seed
    n_shifts = shifts.shape[0]
    scale = float(np.linalg.norm(rhs))
    x = np.zeros((rhs.shape[0], n_shifts))
    if scale == 0.0:
        return BatchSolveResult(x, np.zeros(n_shifts, dtype=int), np.zeros(n_shifts))
    residual = rhs.copy()
    direction = rhs.copy()
    directions = np.repeat(rhs[:, None], n_shifts, axis=1)
    zeta, zeta_prev = np.ones(n_shifts), np.ones(n_shifts)
    alpha_prev, beta_prev = 1.0, 0.0
    rr = float(residual @ residual)
    iterations = np.zeros(n_shifts, dtype=int)
    active = np.ones(n_shifts, dtype=bool)
    for step in range(config.max_iter):
        ap = operator.matvec(direction) + seed * direction
        curvature = float(direction @ ap)
        if curvature <= 0.0:
            raise ConvergenceError("multi-shift CG breakdown", step, math.sqrt(rr) / scale)
        alpha = rr / curvature
        denominator = alpha * beta_prev * (zeta_prev - zeta) + zeta_prev * alpha_prev * (
            1.0 + relative_shifts * alpha
        )
        zeta_next = zeta * zeta_prev * alpha_prev / denominator
        alpha_shift = alpha * zeta_next / zeta
        x[:, active] += alpha_shift[active] * directions[:, active]
        residual = residual - alpha * ap
        rr_next = float(residual @ residual)
        beta = rr_next / rr
        beta_shift = beta * (zeta_next / zeta) ** 2
        directions[:, active] = (
            zeta_next[active] * residual[:, None] + beta_shift[active] * directions[:, active]
        )
        direction = residual + beta * direction
        iterations[active] += 1
        zeta_prev, zeta = zeta, zeta_next
        alpha_prev, beta_prev, rr = alpha, beta, rr_next
        active &= np.abs(zeta) * math.sqrt(rr) > config.tol * scale
        if not active.any():
            break
    true_residual = rhs[:, None] - (operator.matmat(x) + x * shifts)
    relative = np.linalg.norm(true_residual, axis=0) / scale
    if np.any(relative > config.tol):
        raise ConvergenceError(
            f"multi-shift CG did not reach tolerance {config.tol:.1e}",
            int(iterations.max()),
            float(relative.max()),
            relative,
        )
    return BatchSolveResult(x, iterations, relative)


def cg_solve(operator: Any, b: np.ndarray, config: SolveConfig) -> SolveResult:
    """Solves A x = b by (preconditioned) conjugate gradients.

    Args:
        operator (Any): A symmetric positive definite operator.
        b (np.ndarray): The length-N right-hand side.
        config (SolveConfig): Tolerance, iteration limit, and optional preconditioner.

    Returns:
        SolveResult: x with |A x - b| <= tol |b|, the iteration count, the final residual.

    Raises:
        ConvergenceError: If the iteration limit is reached first.
    """
    b = np.asarray(b, dtype=float).ravel()
    result = _block_cg(as_operator(operator), b[:, None], np.zeros(1), config)
    return SolveResult(result.x[:, 0], int(result.iterations[0]), float(result.residuals[0]))


def batched_shifted_solve(
    operator: Any,
    b: np.ndarray,
    shifts: np.ndarray,
    config: SolveConfig,
    mode: Literal["independent", "shared"] = "independent",
) -> BatchSolveResult:
    """Solves (A + shift_p I) x_p = b for every shift.

    Args:
        operator (Any): A symmetric positive definite operator.
        b (np.ndarray): A length-N right-hand side, or an (N, s) block of them.
        shifts (np.ndarray): The nonnegative shifts.
        config (SolveConfig): Per-system tolerance, iteration limit, preconditioner.
        mode (Literal["independent", "shared"]): Independent block-PCG runs, or one shared
            Krylov space (unpreconditioned, single right-hand side per run).

    Returns:
        BatchSolveResult: `x` of shape (N, P) for a vector b, or (N, s, P) for a block.
    """
    shifts = np.asarray(shifts, dtype=float).ravel()
    if np.any(shifts < 0.0):
        raise DomainError("shifts must be nonnegative")
    b = np.asarray(b, dtype=float)
    block = b if b.ndim == 2 else b[:, None]
    operator = as_operator(operator)
    n_rhs, n_shifts = block.shape[1], shifts.shape[0]
    if mode == "shared":
        if config.preconditioner is not None:
            raise ConfigError("shared-Krylov shifted CG cannot be preconditioned")
        results = [_multishift_cg(operator, block[:, j], shifts, config) for j in range(n_rhs)]
        x = np.stack([r.x for r in results], axis=1)
        iterations = np.concatenate([r.iterations for r in results])
        residuals = np.concatenate([r.residuals for r in results])
    else:
        result = _block_cg(
            operator, np.repeat(block, n_shifts, axis=1), np.tile(shifts, n_rhs), config
        )
        x = result.x.reshape(block.shape[0], n_rhs, n_shifts)
        iterations, residuals = result.iterations, result.residuals
    if b.ndim == 1:
        x = x[:, 0, :]
    return BatchSolveResult(x, iterations, residuals)


def power_method(operator: Any, iters: int, seed: int = POWER_METHOD_SEED) -> float:
    """Estimates the spectral radius of a symmetric operator by the power method.

    Starts from a fixed-seed Gaussian vector and returns the Rayleigh quotient of the last
    iterate, which never exceeds the largest eigenvalue beyond round-off.

    Args:
        operator (Any): A symmetric operator.
        iters (int): The number of operator applications, at least 1.
        seed (int): The seed of the start vector.

    Returns:
        float: The Rayleigh-quotient estimate; 0 for the zero operator.
    """
    if iters < 1:
        raise DomainError("power method needs at least one iteration")
    operator = as_operator(operator)
    v = np.random.default_rng(seed).standard_normal(operator.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = operator.matvec(v)
        estimate = float(v @ w) / float(v @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
    return estimate


@dataclass(frozen=True, eq=False)
class NystromPreconditioner:
    """A randomized low-rank factorization K ~ U diag(eigenvalues) U^T.

    Attributes:
        factor (np.ndarray): The (N, r) matrix U with orthonormal columns.
        eigenvalues (np.ndarray): The r nonnegative eigenvalues, sorted descending.
        shift (float): The stabilizing shift nu used while factorizing.
    """

    factor: np.ndarray
    eigenvalues: np.ndarray
    shift: float = 0.0

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[0]

    def approximation(self) -> np.ndarray:
        """Forms U diag(eigenvalues) U^T explicitly, for tests and small problems."""
        return (self.factor * self.eigenvalues) @ self.factor.T

    def with_noise(self, sigma_sq: float) -> "WoodburyPreconditioner":
        return WoodburyPreconditioner(self, sigma_sq)


def nystrom_factorize(
    kernel_matvec: Any, n: int, rank: int, rng: Generator, oversample: int = NYSTROM_OVERSAMPLING
) -> NystromPreconditioner:
    """Builds a randomized Nystrom approximation of the kernel-only operator K(theta).

    Single pass over a Gaussian sketch with `oversample` extra columns, stabilized by the
    shift nu = sqrt(N) eps tr(Omega^T K Omega) before the pseudo-inverse; eigenvalues are
    clipped at zero and truncated to `rank`.

    Args:
        kernel_matvec (Any): The operator K(theta), or a callable applying it to a block.
        n (int): The dimension N.
        rank (int): The retained rank r <= N.
        rng (Generator): The sketch's random stream.
        oversample (int): Extra sketch columns.

    Returns:
        NystromPreconditioner: The factorization.
    """
    if not 1 <= rank <= n:
        raise DomainError(f"Nystrom rank must lie in [1, {n}], got {rank}")
    width = min(rank + oversample, n)
    sketch, _ = scipy.linalg.qr(rng.standard_normal((n, width)), mode="economic")
    if callable(kernel_matvec) and not hasattr(kernel_matvec, "matmat"):
        image = np.asarray(kernel_matvec(sketch), dtype=float)
    else:
        image = as_operator(kernel_matvec).matmat(sketch)
    nu = math.sqrt(n) * np.finfo(float).eps * max(float(np.trace(sketch.T @ image)), 0.0)
    if nu == 0.0:
        return NystromPreconditioner(sketch[:, :rank], np.zeros(rank), 0.0)
    shifted = image + nu * sketch
    core = sketch.T @ shifted
    core = 0.5 * (core + core.T)
    try:
        chol = scipy.linalg.cholesky(core, lower=True)
        half = scipy.linalg.solve_triangular(chol, shifted.T, lower=True).T
    except np.linalg.LinAlgError:
        values, vectors = scipy.linalg.eigh(core)
        keep = values > np.finfo(float).eps * values.max()
        half = (shifted @ vectors[:, keep]) / np.sqrt(values[keep])
    factor, singular, _ = scipy.linalg.svd(half, full_matrices=False)
    eigenvalues = np.maximum(singular**2 - nu, 0.0)
    return NystromPreconditioner(factor[:, :rank], eigenvalues[:rank], nu)


def woodbury_apply(
    precond: NystromPreconditioner,
    sigma_sq: float,
    shift: Union[float, np.ndarray],
    v: np.ndarray,
) -> np.ndarray:
    """Computes (U L U^T + (sigma^2 + shift) I)^{-1} v in O(N r).

    Uses U (L + mu)^{-1} U^T v + (v - U U^T v) / mu with mu = sigma^2 + shift, exact for
    orthonormal U. `shift` may be a scalar or one shift per column of a block `v`.
    """
    mu = sigma_sq + np.asarray(shift, dtype=float)
    if np.any(mu <= 0.0):
        raise DomainError("sigma^2 + shift must be positive")
    u, eigenvalues = precond.factor, precond.eigenvalues
    projected = u.T @ v
    if np.ndim(v) == 2:
        mu = np.broadcast_to(mu, (v.shape[1],))
        return u @ (projected / (eigenvalues[:, None] + mu[None, :])) + (v - u @ projected) / mu[None, :]
    return u @ (projected / (eigenvalues + mu)) + (v - u @ projected) / mu


@dataclass(frozen=True, eq=False)
class WoodburyPreconditioner:
    """Applies the Nystrom/Woodbury inverse for the current noise level, per shift."""

    nystrom: NystromPreconditioner
    sigma_sq: float

    def apply(self, residual: np.ndarray, shifts: Union[float, np.ndarray] = 0.0) -> np.ndarray:
        return woodbury_apply(self.nystrom, self.sigma_sq, shifts, residual)


@dataclass(frozen=True, eq=False)
class RescalingPreconditioner:
    """Applies R = I / (c + shift), with c an estimate of the spectral radius of A."""

    radius: float

    def apply(self, residual: np.ndarray, shifts: Union[float, np.ndarray] = 0.0) -> np.ndarray:
        denominator = self.radius + np.asarray(shifts, dtype=float)
        if np.ndim(residual) == 2 and denominator.ndim == 1:
            denominator = denominator[None, :]
        return residual / denominator
