"""Markov Chain Diagnostics.

This module holds the per-chain trace record and the statistics computed from it:
integrated autocorrelation times with a self-consistent window, moving-window means over
the samples floor(i/2)..i, estimator standard deviations, sup-norm CDF errors against
reference tables, and wall time per independent sample.

Features:
- `ChainTrace` with its record-count invariants.
- `iat_estimate` (direct or FFT autocovariance) and batch-averaged IAT.
- `moving_window_mean`, `estimator_std`, `ecdf_sup_error`.
- `summarize_traces` producing a serializable `TraceSummary`.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Optional, Sequence
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from gp_pseudofermion.errors import DegenerateVarianceError, DomainError


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ChainTrace:
    """The record of one chain: T + 1 hyperparameter samples and T step statistics.

    Attributes:
        chain_id (int): The chain index within its batch.
        seed (int): The seed of the chain's random stream.
        thetas (np.ndarray): The (T + 1, n) samples, the initial point first.
        accepted (np.ndarray): The T accept flags.
        delta_h (np.ndarray): The T energy (or potential) differences of the proposals.
        wall_times (np.ndarray): The T step durations in seconds.
        solver_iterations (np.ndarray): The T total solver iteration counts per step.
        failed (bool): Whether the chain stopped on an unrecoverable error.
        error (Optional[str]): The error message of a failed chain.
    """

    chain_id: int
    seed: int
    thetas: np.ndarray
    accepted: np.ndarray
    delta_h: np.ndarray
    wall_times: np.ndarray
    solver_iterations: np.ndarray
    failed: bool = False
    error: Optional[str] = None

    def __post_init__(self) -> None:
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        steps = thetas.shape[0] - 1
        columns = {
            "accepted": np.asarray(self.accepted, dtype=bool),
            "delta_h": np.asarray(self.delta_h, dtype=float),
            "wall_times": np.asarray(self.wall_times, dtype=float),
            "solver_iterations": np.asarray(self.solver_iterations, dtype=int),
        }
        for name, column in columns.items():
            if column.shape != (steps,):
                raise DomainError(f"{name} holds {column.shape} records for {steps} steps")
            object.__setattr__(self, name, column)
        if np.any(columns["wall_times"] < 0.0):
            raise DomainError("wall times must be nonnegative")
        object.__setattr__(self, "thetas", thetas)

    @property
    def n_steps(self) -> int:
        return self.thetas.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.thetas.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.n_steps else math.nan

    @property
    def acceptance_probability(self) -> float:
        """The mean Metropolis probability min(1, exp(-dH)); rejected failures count as 0."""
        if not self.n_steps:
            return math.nan
        with np.errstate(over="ignore"):
            return float(np.mean(np.minimum(1.0, np.exp(-np.nan_to_num(self.delta_h, nan=np.inf)))))


def healthy(traces: Sequence[ChainTrace]) -> list[ChainTrace]:
    """Filters out failed chains."""
    return [trace for trace in traces if not trace.failed]


def stack_thetas(traces: Sequence[ChainTrace]) -> np.ndarray:
    """Stacks the samples of equally long chains into a (T + 1, B, n) array."""
    if not traces:
        raise DomainError("no chains to stack")
    return np.stack([trace.thetas for trace in traces], axis=1)


class IATConfig(BaseModel):
    """Configuration of the integrated autocorrelation time estimator.

    Attributes:
        c (float): The window constant; the window M is the first with M > c tau(M).
        min_length_factor (float): Estimates are reliable when N >= min_length_factor tau.
        method (Literal["direct", "fft"]): How autocovariances are computed.
    """

    model_config = ConfigDict(frozen=True)

    c: float = Field(
        default=5.0,
        gt=0.0,
        description="The window constant of the self-consistent window rule.",
    )
    min_length_factor: float = Field(
        default=50.0,
        gt=0.0,
        description="The chain-length multiple of tau needed for a reliable estimate.",
    )
    method: Literal["direct", "fft"] = Field(
        default="direct",
        description="Direct lag sums or FFT autocovariances.",
    )


class IATEstimate(NamedTuple):
    """An IAT estimate, the summation window used, and whether the chain was long enough."""

    tau: float
    window: int
    reliable: bool


def _centered(chain: np.ndarray) -> np.ndarray:
    chain = np.asarray(chain, dtype=float).ravel()
    if chain.shape[0] < 2:
        raise DomainError("IAT estimation needs at least two samples")
    if np.ptp(chain) == 0.0:
        raise DegenerateVarianceError("chain is constant; autocorrelation undefined")
    return chain - chain.mean()


def autocovariance(chain: np.ndarray) -> np.ndarray:
    """Computes C(j) = (1/N) sum_t (X_t - mean)(X_{t+j} - mean) for every lag by FFT."""
    x = _centered(chain)
    n = x.shape[0]
    spectrum = np.fft.rfft(x, 2 * n)
    return np.fft.irfft(spectrum * np.conj(spectrum), 2 * n)[:n] / n


def iat_estimate(chain: np.ndarray, config: Optional[IATConfig] = None) -> IATEstimate:
    """Estimates tau = 1 + 2 sum_{j=1}^{M} C(j) / C(0) with a self-consistent window.

    The window grows one lag at a time until M > c tau(M); if no lag satisfies the rule the
    whole chain is summed and the estimate is flagged unreliable.

    Args:
        chain (np.ndarray): The scalar chain X_1..X_N.
        config (Optional[IATConfig]): Window constant, reliability threshold, method.

    Returns:
        IATEstimate: The estimate, its window, and the reliability flag N >= factor * tau.

    Raises:
        DegenerateVarianceError: If the chain is constant.
    """
    config = config or IATConfig()
    x = _centered(chain)
    n = x.shape[0]
    if config.method == "fft":
        acov = autocovariance(chain)
        taus = 1.0 + 2.0 * np.cumsum(acov[1:]) / acov[0]
        lags = np.arange(1, n)
        satisfied = np.flatnonzero(lags > config.c * taus)
        window = int(lags[satisfied[0]]) if satisfied.size else n - 1
        tau = float(taus[window - 1])
        found = bool(satisfied.size)
    else:
        c0 = float(x @ x) / n
        tau, window, found = 1.0, n - 1, False
        for lag in range(1, n):
            tau += 2.0 * (float(x[:-lag] @ x[lag:]) / n) / c0
            if lag > config.c * tau:
                window, found = lag, True
                break
    reliable = found and n >= config.min_length_factor * tau
    return IATEstimate(tau, window, reliable)


def batch_averaged_iat(samples: np.ndarray, config: Optional[IATConfig] = None) -> IATEstimate:
    """Estimates the IAT of the chain averaged over the batch axis of a (T, B) array."""
    samples = np.asarray(samples, dtype=float)
    averaged = samples.mean(axis=1) if samples.ndim == 2 else samples
    return iat_estimate(averaged, config)


def component_iats(samples: np.ndarray, config: Optional[IATConfig] = None) -> np.ndarray:
    """Batch-averaged IAT per component of a (T, B, n) array; NaN where degenerate."""
    samples = np.asarray(samples, dtype=float)
    taus = np.full(samples.shape[-1], np.nan)
    for k in range(samples.shape[-1]):
        try:
            taus[k] = batch_averaged_iat(samples[..., k], config).tau
        except (DegenerateVarianceError, DomainError):
            LOGGER.debug(f"IAT of component {k} undefined")
    return taus


def _window_bounds(length: int) -> tuple[np.ndarray, np.ndarray]:
    """For 1-based i = 1..length, the 0-based start and exclusive stop of floor(i/2)..i."""
    i = np.arange(1, length + 1)
    return np.maximum(i // 2, 1) - 1, i


def moving_window_mean(chain: np.ndarray) -> np.ndarray:
    """Computes T_i = mean of X_{floor(i/2)}..X_i for every 1-based i.

    Extra axes beyond the first (for example the batch axis) are pooled into each window.
    """
    chain = np.asarray(chain, dtype=float)
    if chain.shape[0] == 0:
        raise DomainError("moving-window mean of an empty chain")
    rows = chain.reshape(chain.shape[0], -1)
    sums = np.concatenate([[0.0], np.cumsum(rows.sum(axis=1))])
    start, stop = _window_bounds(rows.shape[0])
    return (sums[stop] - sums[start]) / ((stop - start) * rows.shape[1])


def moving_window_variance(chain: np.ndarray) -> np.ndarray:
    """The sample variance (ddof 1) over each pooled window floor(i/2)..i; NaN for one sample."""
    chain = np.asarray(chain, dtype=float)
    rows = chain.reshape(chain.shape[0], -1)
    centered = rows - rows.mean()
    sums = np.concatenate([[0.0], np.cumsum(centered.sum(axis=1))])
    squares = np.concatenate([[0.0], np.cumsum((centered * centered).sum(axis=1))])
    start, stop = _window_bounds(rows.shape[0])
    count = (stop - start) * rows.shape[1]
    total = sums[stop] - sums[start]
    with np.errstate(divide="ignore", invalid="ignore"):
        variance = (squares[stop] - squares[start] - total * total / count) / (count - 1)
    return np.where(count > 1, np.maximum(variance, 0.0), np.nan)


def std_from_variance(variance: float, batch: int, i: int, tau: float) -> float:
    """Computes sqrt(Var X) / sqrt(B i / (2 tau))."""
    if not tau > 0.0:
        raise DomainError(f"IAT must be positive, got {tau}")
    if not variance > 0.0:
        raise DegenerateVarianceError("window variance is zero")
    return math.sqrt(variance) / math.sqrt(batch * i / (2.0 * tau))


def estimator_std(pooled: np.ndarray, i: int, tau: float) -> float:
    """Approximates the standard deviation of the windowed mean estimator at step i.

    Args:
        pooled (np.ndarray): The (T, B) chain of one component across B chains.
        i (int): The 1-based step whose window floor(i/2)..i is used.
        tau (float): The integrated autocorrelation time.

    Returns:
        float: sqrt(Var X) / sqrt(B i / (2 tau)) with Var X estimated on the window.
    """
    pooled = np.asarray(pooled, dtype=float)
    rows = pooled.reshape(pooled.shape[0], -1)
    if not 1 <= i <= rows.shape[0]:
        raise DomainError(f"step {i} outside 1..{rows.shape[0]}")
    window = rows[max(i // 2, 1) - 1 : i]
    variance = float(np.var(window, ddof=1)) if window.size > 1 else 0.0
    return std_from_variance(variance, rows.shape[1], i, tau)


def ecdf_sup_error(samples: np.ndarray, grid: np.ndarray, reference: np.ndarray) -> float:
    """Computes max over the grid of |ECDF(g) - reference(g)|.

    Args:
        samples (np.ndarray): The samples.
        grid (np.ndarray): The sorted grid points.
        reference (np.ndarray): The reference CDF at the grid points.

    Returns:
        float: The sup-norm CDF discrepancy, in [0, 1].
    """
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    if samples.size == 0:
        raise DomainError("empirical CDF of no samples")
    empirical = np.searchsorted(samples, np.asarray(grid, dtype=float), side="right") / samples.size
    return float(np.max(np.abs(empirical - np.asarray(reference, dtype=float))))


def time_per_independent_sample(wall_time: float, batch: int, length: int, tau: float) -> float:
    """Computes t_wall / (B L / tau)."""
    return wall_time / (batch * length / tau)


def wall_time_per_independent_sample(traces: Sequence[ChainTrace], tau: float) -> float:
    """Seconds per effectively independent sample over the healthy chains.

    The wall time is the sum of every chain's step times, so chains run one after another
    and chains run side by side are charged alike.
    """
    traces = healthy(traces)
    if not traces:
        raise DomainError("no healthy chains")
    total = float(sum(trace.wall_times.sum() for trace in traces))
    return time_per_independent_sample(total, len(traces), traces[0].n_steps, tau)


class TraceSummary(BaseModel):
    """Aggregate statistics of a batch of chains."""

    chains: int = Field(description="The number of chains in the batch.")
    failed_chains: int = Field(description="The number of chains that stopped on an error.")
    steps: int = Field(description="The number of outer steps per chain.")
    acceptance_rate: float = Field(description="The fraction of accepted proposals.")
    acceptance_probability: float = Field(description="The mean of min(1, exp(-dH)).")
    means: list[float] = Field(description="The posterior mean per component.")
    window_means: list[float] = Field(description="The final moving-window mean per component.")
    iat: list[Optional[float]] = Field(description="The batch-averaged IAT per component.")
    mean_iat: Optional[float] = Field(default=None, description="The mean IAT over components.")
    max_iat: Optional[float] = Field(default=None, description="The largest IAT over components.")
    estimator_std: list[Optional[float]] = Field(
        description="The standard deviation of the final windowed mean per component."
    )
    seconds_per_step: float = Field(description="The mean wall time of one outer step.")
    seconds_per_sample: Optional[float] = Field(
        default=None,
        description="Wall time per independent sample at the largest IAT.",
    )


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def summarize_traces(traces: Sequence[ChainTrace], config: Optional[IATConfig] = None) -> TraceSummary:
    """Computes acceptance, means, IATs, estimator errors, and timings of a batch."""
    good = healthy(traces)
    if not good:
        raise DomainError("every chain failed")
    samples = stack_thetas(good)
    steps = good[0].n_steps
    taus = component_iats(samples, config)
    stds: list[Optional[float]] = []
    for k, tau in enumerate(taus):
        try:
            stds.append(estimator_std(samples[..., k], samples.shape[0], float(tau)))
        except (DegenerateVarianceError, DomainError):
            stds.append(None)
    finite = taus[np.isfinite(taus)]
    max_tau = float(finite.max()) if finite.size else math.nan
    seconds = float(np.mean([trace.wall_times.mean() for trace in good])) if steps else 0.0
    return TraceSummary(
        chains=len(traces),
        failed_chains=len(traces) - len(good),
        steps=steps,
        acceptance_rate=float(np.mean([trace.acceptance_rate for trace in good])) if steps else 0.0,
        acceptance_probability=(
            float(np.mean([trace.acceptance_probability for trace in good])) if steps else 0.0
        ),
        means=samples.mean(axis=(0, 1)).tolist(),
        window_means=[float(moving_window_mean(samples[..., k])[-1]) for k in range(samples.shape[-1])],
        iat=[_finite(tau) for tau in taus],
        mean_iat=_finite(float(finite.mean())) if finite.size else None,
        max_iat=_finite(max_tau),
        estimator_std=stds,
        seconds_per_step=seconds,
        seconds_per_sample=(
            _finite(wall_time_per_independent_sample(good, max_tau)) if steps and finite.size else None
        ),
    )
