"""Pseudofermion GP Sampler Exceptions.

This module defines the exception hierarchy raised throughout the package. Library code
raises these; only the sampler loop turns solver failures into rejected proposals, and only
the command-line entry point turns them into exit codes.

Features:
- Domain and overflow errors for kernel evaluation.
- Solver errors carrying iteration counts, residuals, and offending hyperparameters.
- Data, configuration, and diagnostics errors.

License:
MIT License (c) 2025 Shingo OKAWA
"""

from typing import Optional, Sequence
import numpy as np


class GPSamplerError(Exception):
    """Base class of every error raised by this package."""


class DomainError(GPSamplerError, ValueError):
    """A point lies outside the reference box, or an argument outside its domain."""


class NumericalOverflowError(GPSamplerError, FloatingPointError):
    """A kernel apply produced non-finite values (usually extreme Chebyshev coefficients)."""


class SolverError(GPSamplerError):
    """Base class of linear and nonlinear solver failures."""


class ConvergenceError(SolverError):
    """An iterative solver hit its iteration limit before reaching its tolerance.

    Attributes:
        iterations (int): The number of iterations performed.
        residual (float): The worst final relative residual over all systems.
        residuals (Optional[np.ndarray]): Final relative residual per system, if batched.
    """

    def __init__(
        self,
        message: str,
        iterations: int,
        residual: float,
        residuals: Optional[np.ndarray] = None,
    ) -> None:
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual
        self.residuals = residuals


class AndersonConvergenceError(ConvergenceError):
    """Anderson acceleration did not converge; carries the best iterate seen."""

    def __init__(
        self, message: str, iterations: int, residual: float, best: np.ndarray
    ) -> None:
        super().__init__(message, iterations, residual)
        self.best = best


class DivergenceError(SolverError):
    """A fixed-point map returned non-finite values."""


class FactorizationError(SolverError):
    """A dense Cholesky factorization failed for the given hyperparameters."""

    def __init__(self, message: str, theta: Sequence[float]) -> None:
        self.theta = np.asarray(theta, dtype=float)
        super().__init__(f"{message} at theta={np.array2string(self.theta, precision=6)}")


class DegenerateVarianceError(GPSamplerError, ValueError):
    """A statistic needs nonzero variance but the chain is constant."""


class DatasetError(GPSamplerError, ValueError):
    """Input data is malformed (missing columns, non-numeric cells, empty file)."""


class ConfigError(GPSamplerError, ValueError):
    """A configuration is inconsistent beyond what field validation catches."""


class UnsupportedDimensionError(ConfigError):
    """An operation was asked to run on a hyperparameter dimension it does not support."""
