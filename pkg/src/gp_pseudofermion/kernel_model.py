"""Kernel Model for Pseudofermion GP Hyperparameter Sampling.

This module defines the non-stationary squared-exponential kernel family whose vertical
scale is the exponential of a tensor-product Chebyshev expansion, the regularized kernel
matrix A(theta) = sigma^2 I + K(theta) as a matrix-free operator, and analytic gradients of
quadratic forms in A(theta).

Features:
- Dataset and hyperparameter containers with their domain invariants.
- Chebyshev field evaluation by the three-term recurrence.
- Tiled streaming applies of A(theta) and K(theta) using O(N) memory.
- Matrix-free gradients of z^T A(theta) z, and dense gradients of log|A(theta)|.

Hyperparameter vector layout: the Chebyshev tensor flattened in C order, followed by the
log-noise entry (if inferred), followed by the log-length-scale entry (if inferred).

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterator, Union
import numpy as np
from scipy.sparse.linalg import LinearOperator
from gp_pseudofermion.errors import DatasetError, DomainError, NumericalOverflowError


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Keeps sigma and 2*ell^2 strictly positive under the log reparameterization.
POSITIVITY_OFFSET = 1e-3
# Default number of rows per streamed kernel block.
DEFAULT_TILE_SIZE = 1024


def _as_points(points: np.ndarray) -> np.ndarray:
    """Returns `points` as a float (m, d) array, rejecting coordinates outside [-1, 1]."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    if points.ndim != 2:
        raise DomainError(f"points must be a (m, d) array, got shape {points.shape}")
    if not np.all(np.isfinite(points)) or np.any(np.abs(points) > 1.0):
        raise DomainError("every coordinate must lie in the reference box [-1, 1]")
    return points


@dataclass(frozen=True, eq=False)
class Dataset:
    """Scattered points in the reference box with one noisy observation per point.

    Attributes:
        points (np.ndarray): The (N, d) array of coordinates, each in [-1, 1].
        observations (np.ndarray): The length-N observation vector y.
    """

    points: np.ndarray
    observations: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        observations = np.asarray(self.observations, dtype=float).ravel()
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise DatasetError(f"points must be a non-empty (N, d) array, got {points.shape}")
        if observations.shape[0] != points.shape[0]:
            raise DatasetError(
                f"{observations.shape[0]} observations for {points.shape[0]} points"
            )
        if not np.all(np.isfinite(observations)):
            raise DatasetError("observations must be finite")
        object.__setattr__(self, "points", _as_points(points))
        object.__setattr__(self, "observations", observations)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class HyperParams:
    """Kernel hyperparameters: Chebyshev coefficients plus reparameterized noise and scale.

    The derived noise scale is sigma = exp(log_sigma) + 1e-3 and the derived squared
    length scale is 2 ell^2 = exp(log_ell) + 1e-3; both are strictly positive for any real
    input. Frozen entries keep their value but are absent from the hyperparameter vector.

    Attributes:
        cheb (np.ndarray): The d-way coefficient tensor with n_cheb entries per axis.
        log_sigma (float): The reparameterized noise entry.
        log_ell (float): The reparameterized length-scale entry.
        infer_sigma (bool): Whether log_sigma belongs to the sampled vector.
        infer_ell (bool): Whether log_ell belongs to the sampled vector.
    """

    cheb: np.ndarray
    log_sigma: float
    log_ell: float
    infer_sigma: bool = False
    infer_ell: bool = False

    def __post_init__(self) -> None:
        cheb = np.array(self.cheb, dtype=float)
        if cheb.ndim < 1 or cheb.shape[0] < 1 or len(set(cheb.shape)) != 1:
            raise DomainError(f"Chebyshev tensor must be a non-empty hypercube, got {cheb.shape}")
        cheb.setflags(write=False)
        object.__setattr__(self, "cheb", cheb)
        object.__setattr__(self, "log_sigma", float(self.log_sigma))
        object.__setattr__(self, "log_ell", float(self.log_ell))

    @classmethod
    def from_scales(
        cls,
        cheb: np.ndarray,
        sigma_sq: float,
        two_ell_sq: float,
        infer_sigma: bool = False,
        infer_ell: bool = False,
    ) -> "HyperParams":
        """Builds hyperparameters from a noise variance and a squared length scale.

        Args:
            cheb (np.ndarray): The Chebyshev coefficient tensor.
            sigma_sq (float): The noise variance sigma^2; sigma must exceed 1e-3.
            two_ell_sq (float): The value of 2 ell^2; must exceed 1e-3.
            infer_sigma (bool): Whether the noise entry is sampled.
            infer_ell (bool): Whether the length-scale entry is sampled.

        Returns:
            HyperParams: Hyperparameters reproducing the given scales.
        """
        sigma = math.sqrt(sigma_sq)
        if sigma <= POSITIVITY_OFFSET or two_ell_sq <= POSITIVITY_OFFSET:
            raise DomainError("sigma and 2*ell^2 must exceed the positivity offset 1e-3")
        return cls(
            cheb=cheb,
            log_sigma=math.log(sigma - POSITIVITY_OFFSET),
            log_ell=math.log(two_ell_sq - POSITIVITY_OFFSET),
            infer_sigma=infer_sigma,
            infer_ell=infer_ell,
        )

    @property
    def n_cheb(self) -> int:
        return self.cheb.shape[0]

    @property
    def dim(self) -> int:
        return self.cheb.ndim

    @property
    def size(self) -> int:
        """The inferred dimension n = n_cheb^d + number of inferred scale entries."""
        return self.cheb.size + int(self.infer_sigma) + int(self.infer_ell)

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma) + POSITIVITY_OFFSET

    @property
    def sigma_sq(self) -> float:
        return self.sigma**2

    @property
    def two_ell_sq(self) -> float:
        return math.exp(self.log_ell) + POSITIVITY_OFFSET

    def to_vector(self) -> np.ndarray:
        """Flattens the inferred entries into the hyperparameter vector theta."""
        parts = [self.cheb.ravel()]
        if self.infer_sigma:
            parts.append(np.array([self.log_sigma]))
        if self.infer_ell:
            parts.append(np.array([self.log_ell]))
        return np.concatenate(parts)

    def with_vector(self, theta: np.ndarray) -> "HyperParams":
        """Returns a copy whose inferred entries are taken from `theta`."""
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != self.size:
            raise DomainError(f"expected {self.size} hyperparameters, got {theta.shape[0]}")
        offset = self.cheb.size
        changes: dict = {"cheb": theta[:offset].reshape(self.cheb.shape)}
        if self.infer_sigma:
            changes["log_sigma"] = theta[offset]
            offset += 1
        if self.infer_ell:
            changes["log_ell"] = theta[offset]
        return replace(self, **changes)


def chebyshev_basis(points: np.ndarray, n_cheb: int) -> np.ndarray:
    """Evaluates T_0..T_{n_cheb-1} at every coordinate via T_{k+1} = 2x T_k - T_{k-1}.

    Args:
        points (np.ndarray): The (m, d) array of coordinates in [-1, 1].
        n_cheb (int): The number of Chebyshev polynomials per axis.

    Returns:
        np.ndarray: The (m, d, n_cheb) array of polynomial values.
    """
    points = _as_points(points)
    values = np.empty(points.shape + (n_cheb,))
    values[..., 0] = 1.0
    if n_cheb > 1:
        values[..., 1] = points
    for k in range(2, n_cheb):
        values[..., k] = 2.0 * points * values[..., k - 1] - values[..., k - 2]
    return values


def tensor_basis(points: np.ndarray, n_cheb: int) -> np.ndarray:
    """Evaluates every tensor-product basis function T_{i1}(x^1)...T_{id}(x^d).

    Columns follow the C-order flattening of the coefficient tensor, so that
    `tensor_basis(x, n) @ cheb.ravel()` is the Chebyshev field.

    Returns:
        np.ndarray: The (m, n_cheb**d) basis matrix.
    """
    values = chebyshev_basis(points, n_cheb)
    basis = values[:, 0, :]
    for axis in range(1, values.shape[1]):
        basis = (basis[:, :, None] * values[:, axis, None, :]).reshape(values.shape[0], -1)
    return basis


def chebyshev_field(
    hyperparams: HyperParams, x: np.ndarray
) -> Union[float, np.ndarray]:
    """Computes C_theta(x) = sum Theta_I T_I(x) at one point or a batch of points.

    Args:
        hyperparams (HyperParams): The hyperparameters holding the coefficient tensor.
        x (np.ndarray): A single point of length d or an (m, d) batch.

    Returns:
        Union[float, np.ndarray]: A float for a single point, else a length-m array.
    """
    single = np.ndim(x) == 1
    points = _as_points(x)
    if points.shape[1] != hyperparams.dim:
        raise DomainError(f"point dimension {points.shape[1]} != kernel dimension {hyperparams.dim}")
    values = tensor_basis(points, hyperparams.n_cheb) @ hyperparams.cheb.ravel()
    return float(values[0]) if single else values


def kernel_entry(hyperparams: HyperParams, x: np.ndarray, y: np.ndarray) -> float:
    """Computes exp(C(x)) exp(C(y)) exp(-|x - y|^2 / (2 ell^2))."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    r2 = float(np.sum((x - y) ** 2))
    return (
        math.exp(chebyshev_field(hyperparams, x))
        * math.exp(chebyshev_field(hyperparams, y))
        * math.exp(-r2 / hyperparams.two_ell_sq)
    )


@dataclass(frozen=True, eq=False)
class KernelOperator:
    """The matrix-free operator A(theta) = sigma^2 I + K(theta) over a dataset.

    Every apply streams over row blocks of `tile_size` rows in ascending order, so peak
    temporary memory is O(tile_size * N) and results are deterministic.

    Attributes:
        dataset (Dataset): The scattered points and observations.
        hyperparams (HyperParams): The kernel hyperparameters.
        tile_size (int): The number of rows per streamed block.
    """

    dataset: Dataset
    hyperparams: HyperParams
    tile_size: int = DEFAULT_TILE_SIZE

    def __post_init__(self) -> None:
        if self.tile_size < 1:
            raise DomainError("tile_size must be a positive integer")
        if self.hyperparams.dim != self.dataset.dim:
            raise DomainError(
                f"kernel dimension {self.hyperparams.dim} != data dimension {self.dataset.dim}"
            )

    @cached_property
    def basis(self) -> np.ndarray:
        """The (N, n_cheb**d) tensor basis at the data points."""
        return tensor_basis(self.dataset.points, self.hyperparams.n_cheb)

    @cached_property
    def scale(self) -> np.ndarray:
        """exp(C_theta(x_i)) at every data point."""
        with np.errstate(over="ignore"):
            return np.exp(self.basis @ self.hyperparams.cheb.ravel())

    @property
    def n_points(self) -> int:
        return self.dataset.n_points

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_points, self.n_points)

    @property
    def sigma_sq(self) -> float:
        return self.hyperparams.sigma_sq

    def _tiles(self) -> Iterator[tuple[int, int]]:
        for start in range(0, self.n_points, self.tile_size):
            yield start, min(start + self.tile_size, self.n_points)

    def _squared_distances(self, rows: np.ndarray) -> np.ndarray:
        points = self.dataset.points
        r2 = np.zeros((rows.shape[0], points.shape[0]))
        for axis in range(points.shape[1]):
            diff = rows[:, axis, None] - points[None, :, axis]
            r2 += diff * diff
        return r2

    def _block(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns the kernel rows start..stop together with their squared distances."""
        r2 = self._squared_distances(self.dataset.points[start:stop])
        with np.errstate(over="ignore", invalid="ignore"):
            block = np.exp(-r2 / self.hyperparams.two_ell_sq)
            block *= self.scale[start:stop, None]
            block *= self.scale[None, :]
        return block, r2

    def kernel_apply(self, z: np.ndarray) -> np.ndarray:
        """Computes K(theta) z for a length-N vector or an (N, k) block of vectors."""
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        for start, stop in self._tiles():
            block, _ = self._block(start, stop)
            out[start:stop] = block @ z
        if not np.all(np.isfinite(out)):
            raise NumericalOverflowError("non-finite kernel apply; Chebyshev coefficients too large")
        return out

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Computes A(theta) z = sigma^2 z + K(theta) z."""
        z = np.asarray(z, dtype=float)
        return self.kernel_apply(z) + self.sigma_sq * z

    def linear_operator(self, kernel_only: bool = False) -> LinearOperator:
        """Wraps A(theta) (or K(theta)) as a scipy `LinearOperator`."""
        apply = self.kernel_apply if kernel_only else self.apply
        return LinearOperator(
            shape=self.shape,
            matvec=apply,
            rmatvec=apply,
            matmat=apply,
            rmatmat=apply,
            dtype=np.float64,
        )

    def dense_kernel(self) -> np.ndarray:
        """Forms K(theta) explicitly. O(N^2) memory; for small problems and references."""
        return np.vstack([self._block(start, stop)[0] for start, stop in self._tiles()])

    def dense(self) -> np.ndarray:
        """Forms A(theta) explicitly. O(N^2) memory; for small problems and references."""
        matrix = self.dense_kernel()
        matrix[np.diag_indices_from(matrix)] += self.sigma_sq
        if not np.all(np.isfinite(matrix)):
            raise NumericalOverflowError("non-finite kernel matrix; Chebyshev coefficients too large")
        return matrix

    def cross_kernel(self, query: np.ndarray) -> np.ndarray:
        """Computes the (m, N) matrix of K_theta(q, x_j) for query points q."""
        query = _as_points(query)
        hp = self.hyperparams
        query_scale = np.exp(tensor_basis(query, hp.n_cheb) @ hp.cheb.ravel())
        with np.errstate(over="ignore", invalid="ignore"):
            cross = np.exp(-self._squared_distances(query) / hp.two_ell_sq)
            cross *= query_scale[:, None]
            cross *= self.scale[None, :]
        if not np.all(np.isfinite(cross)):
            raise NumericalOverflowError("non-finite cross kernel")
        return cross

    def prior_variance(self, query: np.ndarray) -> np.ndarray:
        """Computes K_theta(q, q) = exp(2 C_theta(q)) for query points q."""
        query = _as_points(query)
        hp = self.hyperparams
        return np.exp(2.0 * (tensor_basis(query, hp.n_cheb) @ hp.cheb.ravel()))


def apply_A(operator: KernelOperator, z: np.ndarray) -> np.ndarray:
    """Computes (sigma^2 I + K(theta)) z by tiled streaming over row blocks."""
    return operator.apply(z)


def quad_form_grad(operator: KernelOperator, z: np.ndarray) -> np.ndarray:
    """Computes the gradient of z^T A(theta) z with respect to theta, matrix-free.

    With z frozen, the Chebyshev block is 2 B^T (z * K z) where B is the tensor basis at
    the data points, the noise entry is 2 sigma exp(log_sigma) |z|^2, and the
    length-scale entry is exp(log_ell) / (2 ell^2)^2 * z^T (K o R2) z with R2 the squared
    distance matrix.

    Args:
        operator (KernelOperator): The operator at the current hyperparameters.
        z (np.ndarray): A length-N vector independent of theta.

    Returns:
        np.ndarray: The length-n gradient, frozen entries omitted.
    """
    hp = operator.hyperparams
    z = np.asarray(z, dtype=float).ravel()
    kz = np.empty_like(z)
    weighted = np.empty_like(z) if hp.infer_ell else None
    for start, stop in operator._tiles():
        block, r2 = operator._block(start, stop)
        kz[start:stop] = block @ z
        if weighted is not None:
            weighted[start:stop] = (block * r2) @ z
    grad = [2.0 * operator.basis.T @ (z * kz)]
    if hp.infer_sigma:
        grad.append(np.array([2.0 * hp.sigma * math.exp(hp.log_sigma) * (z @ z)]))
    if weighted is not None:
        grad.append(np.array([math.exp(hp.log_ell) / hp.two_ell_sq**2 * (z @ weighted)]))
    out = np.concatenate(grad)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("non-finite quadratic-form gradient")
    return out


def logdet_grad(operator: KernelOperator, inverse: np.ndarray) -> np.ndarray:
    """Computes the gradient of log|A(theta)| = tr(A^{-1} dA) from a dense inverse.

    Args:
        operator (KernelOperator): The operator at the current hyperparameters.
        inverse (np.ndarray): The dense (N, N) inverse of A(theta).

    Returns:
        np.ndarray: The length-n gradient, frozen entries omitted.
    """
    hp = operator.hyperparams
    kernel = operator.dense_kernel()
    weighted = inverse * kernel
    grad = [2.0 * operator.basis.T @ weighted.sum(axis=1)]
    if hp.infer_sigma:
        grad.append(np.array([2.0 * hp.sigma * math.exp(hp.log_sigma) * np.trace(inverse)]))
    if hp.infer_ell:
        r2 = operator._squared_distances(operator.dataset.points)
        grad.append(
            np.array([math.exp(hp.log_ell) / hp.two_ell_sq**2 * np.sum(weighted * r2)])
        )
    return np.concatenate(grad)
