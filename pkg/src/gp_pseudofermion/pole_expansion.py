"""Elliptic Pole Expansion of Matrix Square Roots.

This module realizes A^{-1/2} v (and A^{1/2} v) for a symmetric positive definite operator
with spectrum inside [m, M] as a weighted sum of shifted solves,

    A^{-1/2} ~ sum_j w_j (A + lambda_j I)^{-1},

whose nodes come from the Jacobi elliptic functions at purely imaginary arguments. The
imaginary transformation maps those evaluations to real arguments with the complementary
parameter, so weights and shifts are produced by real arithmetic only.

Features:
- `elliptic_K` by the arithmetic-geometric mean.
- `jacobi_elliptic` by the descending Landen transformation.
- `build_pole_expansion`, `apply_inv_sqrt`, `apply_sqrt` over batched shifted CG.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, NamedTuple, Optional
import numpy as np
from gp_pseudofermion.errors import ConfigError, DomainError
from gp_pseudofermion.matfree_linalg import (
    Preconditioner,
    SolveConfig,
    as_operator,
    batched_shifted_solve,
    power_method,
)


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Default number of poles.
DEFAULT_POLES = 15
# Largest admissible k^2 = m / M; keeps the complementary parameter away from zero.
MAX_MODULUS_SQ = 1.0 - 1e-12
# Power-method iterations and inflation of its estimate for the upper spectral bound.
BOUND_ITERATIONS = 10
BOUND_INFLATION = 1.1
# Below this parameter (or complementary parameter) the series expansions are exact
# to double precision.
_SERIES_THRESHOLD = 1e-9
_AGM_TOL = 1e-15
_AGM_MAX_STEPS = 64


def _agm(a: float, b: float) -> float:
    for _ in range(_AGM_MAX_STEPS):
        if abs(a - b) <= _AGM_TOL * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return a


def _complete_integral(complement: float) -> float:
    """K(m) = pi / (2 AGM(1, sqrt(1 - m))), given 1 - m directly."""
    return math.pi / (2.0 * _agm(1.0, math.sqrt(complement)))


def elliptic_K(m: float) -> float:
    """Computes the complete elliptic integral of the first kind K(m).

    Args:
        m (float): The parameter, 0 <= m < 1.

    Returns:
        float: K(m) to full double precision.

    Raises:
        DomainError: If m lies outside [0, 1).
    """
    if not 0.0 <= m < 1.0:
        raise DomainError(f"elliptic parameter must lie in [0, 1), got {m}")
    return _complete_integral(1.0 - m)


def _ellipj(u: float, m: float, mc: float) -> tuple[float, float, float]:
    """Jacobi sn, cn, dn at parameter m with complementary parameter mc = 1 - m."""
    if m < _SERIES_THRESHOLD:
        s, c = math.sin(u), math.cos(u)
        t = 0.25 * m * (u - s * c)
        return s - t * c, c + t * s, 1.0 - 0.5 * m * s * s
    if mc < _SERIES_THRESHOLD:
        t, sech = math.tanh(u), 1.0 / math.cosh(u)
        q = 0.25 * mc * (math.sinh(u) * math.cosh(u) - u)
        r = 0.25 * mc * (math.sinh(u) * math.cosh(u) + u)
        return t + q * sech * sech, sech - q * t * sech, sech + r * t * sech
    a, b, c = [1.0], math.sqrt(mc), [math.sqrt(m)]
    while abs(c[-1]) > _AGM_TOL * a[-1] and len(a) <= _AGM_MAX_STEPS:
        a_prev = a[-1]
        c.append(0.5 * (a_prev - b))
        a.append(0.5 * (a_prev + b))
        b = math.sqrt(a_prev * b)
    phi = (2 ** (len(a) - 1)) * a[-1] * u
    previous = phi
    for n in range(len(a) - 1, 0, -1):
        previous = phi
        phi = 0.5 * (phi + math.asin(c[n] / a[n] * math.sin(phi)))
    return math.sin(phi), math.cos(phi), math.cos(phi) / math.cos(previous - phi)


def jacobi_elliptic(u: float, m: float) -> tuple[float, float, float]:
    """Computes the Jacobi elliptic functions (sn, cn, dn) of real argument.

    Args:
        u (float): The argument.
        m (float): The parameter, 0 <= m <= 1.

    Returns:
        tuple[float, float, float]: sn(u|m), cn(u|m), dn(u|m).
    """
    if not math.isfinite(u):
        raise DomainError("argument of the elliptic functions must be finite")
    if not 0.0 <= m <= 1.0:
        raise DomainError(f"elliptic parameter must lie in [0, 1], got {m}")
    return _ellipj(u, m, 1.0 - m)


@dataclass(frozen=True)
class SpectralBounds:
    """Bounds 0 < lower <= upper enclosing the spectrum of the operator."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not 0.0 < self.lower <= self.upper or not math.isfinite(self.upper):
            raise DomainError(f"invalid spectral bounds [{self.lower}, {self.upper}]")


def estimate_bounds(
    operator: Any,
    sigma_sq: float,
    iters: int = BOUND_ITERATIONS,
    inflation: float = BOUND_INFLATION,
) -> SpectralBounds:
    """Bounds the spectrum of A = sigma^2 I + K by [sigma^2, inflation * power estimate]."""
    estimate = power_method(operator, iters)
    return SpectralBounds(sigma_sq, max(inflation * estimate, sigma_sq))


@dataclass(frozen=True, eq=False)
class PoleExpansion:
    """Weights and shifts realizing A^{-1/2} ~ sum_j w_j (A + lambda_j I)^{-1}.

    Attributes:
        bounds (SpectralBounds): The spectral interval the expansion is built for.
        weights (np.ndarray): The N_p real weights.
        shifts (np.ndarray): The N_p positive shifts, ascending.
        mode (Literal["sqrt", "inv_sqrt"]): Which power the expansion is applied as.
    """

    bounds: SpectralBounds
    weights: np.ndarray
    shifts: np.ndarray
    mode: Literal["sqrt", "inv_sqrt"] = "inv_sqrt"

    @property
    def n_poles(self) -> int:
        return self.weights.shape[0]

    def scalar(self, a: float) -> float:
        """Applies the expansion to the 1x1 operator a."""
        value = 0.0
        for weight, shift in zip(self.weights, self.shifts):
            value += weight / (a + shift)
        return a * value if self.mode == "sqrt" else value

    def error_rate(self) -> float:
        """The asymptotic error factor exp(-2 pi K N_p / K') for these bounds."""
        k2 = min(self.bounds.lower / self.bounds.upper, MAX_MODULUS_SQ)
        ratio = _complete_integral(1.0 - k2) / _complete_integral(k2)
        return math.exp(-2.0 * math.pi * ratio * self.n_poles)


def build_pole_expansion(
    bounds: SpectralBounds,
    n_poles: int = DEFAULT_POLES,
    mode: Literal["sqrt", "inv_sqrt"] = "inv_sqrt",
) -> PoleExpansion:
    """Computes the elliptic-optimal weights and shifts for N_p poles.

    With k^2 = m / M and nodes u_j = (j - 1/2) K' / N_p, the shifts are
    m sc(u_j | k'^2)^2 and the weights (2 K' sqrt(m) / (pi N_p)) dn(u_j | k'^2) / cn(u_j | k'^2)^2.
    Nodes past K'/2 are evaluated through the quarter-period reflection so that cn keeps
    full relative accuracy near K'.

    Args:
        bounds (SpectralBounds): The spectral interval [m, M].
        n_poles (int): The number of poles N_p >= 1.
        mode (Literal["sqrt", "inv_sqrt"]): The power the expansion will be applied as.

    Returns:
        PoleExpansion: Real weights and strictly positive shifts.
    """
    if n_poles < 1:
        raise DomainError("pole expansion needs at least one pole")
    if mode not in ("sqrt", "inv_sqrt"):
        raise ConfigError(f"unknown pole expansion mode {mode!r}")
    lower, upper = bounds.lower, bounds.upper
    k2 = min(lower / upper, MAX_MODULUS_SQ)
    kp2 = max((upper - lower) / upper, 1.0 - MAX_MODULUS_SQ)
    k_prime_period = _complete_integral(k2)
    prefactor = 2.0 * k_prime_period * math.sqrt(lower) / (math.pi * n_poles)
    weights = np.empty(n_poles)
    shifts = np.empty(n_poles)
    for j in range(n_poles):
        u = (j + 0.5) * k_prime_period / n_poles
        if u <= 0.5 * k_prime_period:
            s, c, d = _ellipj(u, kp2, k2)
        else:
            sv, cv, dv = _ellipj(k_prime_period - u, kp2, k2)
            s, c, d = cv / dv, math.sqrt(k2) * sv / dv, math.sqrt(k2) / dv
        shifts[j] = lower * (s / c) ** 2
        weights[j] = prefactor * d / (c * c)
    if not (np.all(shifts > 0.0) and np.all(np.isfinite(weights))):
        raise DomainError(f"degenerate pole expansion for bounds [{lower}, {upper}]")
    LOGGER.debug(f"built {n_poles}-pole expansion on [{lower:.3e}, {upper:.3e}]")
    return PoleExpansion(bounds, weights, shifts, mode)


class PoleSolveResult(NamedTuple):
    """The expansion applied to a vector, with the worst per-shift CG iteration count."""

    x: np.ndarray
    iterations: int


def expansion_solve(
    operator: Any,
    v: np.ndarray,
    expansion: PoleExpansion,
    solve_config: SolveConfig,
    preconditioner: Optional[Preconditioner] = None,
    mode: Literal["independent", "shared"] = "independent",
) -> PoleSolveResult:
    """Computes sum_j w_j (A + lambda_j I)^{-1} v, summing poles in ascending order.

    `v` may be a vector or an (N, s) block; the preconditioner, when supplied, is applied
    per shift (for example a Woodbury inverse sharing one Nystrom factorization). The
    shared mode runs one unpreconditioned multi-shift Krylov solve per right-hand side.
    """
    config = solve_config if preconditioner is None else solve_config.with_preconditioner(preconditioner)
    result = batched_shifted_solve(operator, v, expansion.shifts, config, mode)
    total = np.zeros(result.x.shape[:-1])
    for j in range(expansion.n_poles):
        total += expansion.weights[j] * result.x[..., j]
    return PoleSolveResult(total, int(result.iterations.max()))


def apply_inv_sqrt(
    operator: Any,
    v: np.ndarray,
    expansion: PoleExpansion,
    solve_config: SolveConfig,
    preconditioner: Optional[Preconditioner] = None,
) -> np.ndarray:
    """Approximates A^{-1/2} v by the pole expansion."""
    if expansion.mode != "inv_sqrt":
        raise ConfigError("apply_inv_sqrt needs an inv_sqrt expansion")
    return expansion_solve(operator, v, expansion, solve_config, preconditioner).x


def apply_sqrt(
    operator: Any,
    v: np.ndarray,
    expansion: PoleExpansion,
    solve_config: SolveConfig,
    preconditioner: Optional[Preconditioner] = None,
) -> np.ndarray:
    """Approximates A^{1/2} v = A (A^{-1/2} v), one operator apply past the expansion."""
    if expansion.mode != "sqrt":
        raise ConfigError("apply_sqrt needs a sqrt expansion")
    inner = expansion_solve(operator, v, expansion, solve_config, preconditioner).x
    linear = as_operator(operator)
    return linear.matmat(inner) if inner.ndim == 2 else linear.matvec(inner)
