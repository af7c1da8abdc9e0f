"""Metropolis-Hastings Samplers over GP Hyperparameters.

This module implements the theta updates (random-walk Metropolis and HMC with either
integrator) and the outer loop that alternates them with exact Gibbs updates of the
auxiliary field phi across a batch of independent chains.

Solver failures inside an update never abort a chain: the proposal is rejected as if
dH = +inf, the state is left untouched, and a solver event is logged.

Features:
- `hmc_update` and `rwm_update` with Metropolis correction.
- `SamplerSpec` and `BurnIn` describing what a chain runs.
- `run_chains` with per-chain seeds base_seed + c, optional process parallelism.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Literal, NamedTuple, Optional
import numpy as np
from numpy.random import Generator
from gp_pseudofermion.diagnostics import ChainTrace
from gp_pseudofermion.errors import (
    ConfigError,
    ConvergenceError,
    GPSamplerError,
    NumericalOverflowError,
    SolverError,
)
from gp_pseudofermion.integrators import (
    HMCConfig,
    implicit_midpoint_trajectory,
    leapfrog_trajectory,
)
from gp_pseudofermion.logger import SolverEvent, report
from gp_pseudofermion.target import (
    ExtendedState,
    TargetModel,
    gibbs_update_phi,
    refresh_preconditioner,
)


# The logger instance for this module.
LOGGER = logging.getLogger(__name__)
# Errors converted into rejections.
RECOVERABLE = (SolverError, NumericalOverflowError)


class UpdateResult(NamedTuple):
    """The state after an update, whether the proposal was accepted, and its dH."""

    state: ExtendedState
    accepted: bool
    delta_h: float


def _event(state: ExtendedState, stage: str, error: Exception) -> SolverEvent:
    iterations, residual = None, None
    if isinstance(error, ConvergenceError):
        iterations, residual = error.iterations, float(error.residual)
    return SolverEvent(
        chain=state.chain_id,
        step=state.step,
        stage=stage,
        error=f"{type(error).__name__}: {error}",
        iterations=iterations,
        residual=residual,
        theta=state.theta.tolist(),
    )


def _metropolis(delta: float, rng: Generator) -> bool:
    """Accepts with probability min(1, exp(-delta)); always consumes one uniform."""
    u = rng.uniform()
    return math.isfinite(delta) and u < math.exp(min(0.0, -delta))


def hmc_update(state: ExtendedState, config: HMCConfig, target: Any, rng: Generator) -> UpdateResult:
    """Performs one HMC update of theta: momentum refresh, trajectory, Metropolis test.

    Args:
        state (ExtendedState): The current state; returned unchanged on rejection.
        config (HMCConfig): Step size, step count, integrator, mass matrix.
        target (Any): Provides `potential(state)` and `force(state)`.
        rng (Generator): The chain's random stream.

    Returns:
        UpdateResult: The new (or unchanged) state, the accept flag, and dH.
    """
    mass = config.mass_for(state.theta.shape[0])
    pi0 = mass.sample(rng)
    stage = config.integrator
    try:
        h0 = target.potential(state) + mass.kinetic(pi0)
        if config.integrator == "leapfrog":
            proposal, pi1, _ = leapfrog_trajectory(state, pi0, config, target)
        else:
            proposal, pi1, _ = implicit_midpoint_trajectory(state, pi0, config, target)
        delta = target.potential(proposal) + mass.kinetic(pi1) - h0
    except RECOVERABLE as error:
        report(LOGGER, _event(state, stage, error))
        rng.uniform()
        return UpdateResult(state, False, math.inf)
    if _metropolis(delta, rng):
        return UpdateResult(proposal, True, delta)
    return UpdateResult(state, False, delta)


def rwm_update(state: ExtendedState, dt: float, target: Any, rng: Generator) -> UpdateResult:
    """Performs one random-walk Metropolis update with proposal N(theta, dt^2 I).

    Returns:
        UpdateResult: The new (or unchanged) state, the accept flag, and dU.
    """
    step = dt * rng.standard_normal(state.theta.shape[0])
    proposal = state.moved(state.theta + step)
    try:
        delta = target.potential(proposal) - target.potential(state)
    except RECOVERABLE as error:
        report(LOGGER, _event(state, "rwm", error))
        rng.uniform()
        return UpdateResult(state, False, math.inf)
    if _metropolis(delta, rng):
        return UpdateResult(proposal, True, delta)
    return UpdateResult(state, False, delta)


@dataclass(frozen=True)
class BurnIn:
    """A warmup phase of `steps` outer steps at step size `dt`, recorded separately."""

    steps: int = 0
    dt: Optional[float] = None


@dataclass(frozen=True, eq=False)
class SamplerSpec:
    """What every chain runs.

    Attributes:
        kind (Literal["rwm", "hmc-leapfrog", "hmc-implicit"]): The theta update.
        hmc (HMCConfig): Step size (shared with RWM), step count, integrator settings.
        refresh (int): Outer steps between Nystrom refreshes.
        initial_value (float): The value of every hyperparameter at the start.
    """

    kind: Literal["rwm", "hmc-leapfrog", "hmc-implicit"]
    hmc: HMCConfig
    refresh: int = 2
    initial_value: float = 0.01
    burn_in: BurnIn = field(default_factory=BurnIn)

    def __post_init__(self) -> None:
        if self.kind not in ("rwm", "hmc-leapfrog", "hmc-implicit"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.refresh < 1:
            raise ConfigError("preconditioner refresh period must be at least 1")
        integrator = {"hmc-leapfrog": "leapfrog", "hmc-implicit": "implicit_midpoint"}.get(self.kind)
        if integrator is not None and integrator != self.hmc.integrator:
            raise ConfigError(f"sampler {self.kind} needs the {integrator} integrator")

    def with_dt(self, dt: float) -> HMCConfig:
        return replace(self.hmc, dt=dt)


class ChainRun(NamedTuple):
    """The main traces and the burn-in traces of a batch, ordered by chain index."""

    traces: list[ChainTrace]
    burn_in: list[ChainTrace]


class _Recorder:
    """Accumulates the per-step records of one chain phase."""

    def __init__(self, state: ExtendedState) -> None:
        self.thetas = [state.theta.copy()]
        self.accepted: list[bool] = []
        self.delta_h: list[float] = []
        self.wall_times: list[float] = []
        self.iterations: list[int] = []

    def record(self, state: ExtendedState, update: UpdateResult, seconds: float, iterations: int) -> None:
        self.thetas.append(state.theta.copy())
        self.accepted.append(update.accepted)
        self.delta_h.append(update.delta_h)
        self.wall_times.append(seconds)
        self.iterations.append(iterations)

    def trace(self, chain_id: int, seed: int, error: Optional[str] = None) -> ChainTrace:
        return ChainTrace(
            chain_id=chain_id,
            seed=seed,
            thetas=np.array(self.thetas),
            accepted=np.array(self.accepted, dtype=bool),
            delta_h=np.array(self.delta_h, dtype=float),
            wall_times=np.array(self.wall_times, dtype=float),
            solver_iterations=np.array(self.iterations, dtype=int),
            failed=error is not None,
            error=error,
        )


def outer_step(
    state: ExtendedState,
    target: TargetModel,
    spec: SamplerSpec,
    config: HMCConfig,
    rng: Generator,
) -> UpdateResult:
    """Runs one outer step: preconditioner refresh on schedule, Gibbs update of phi, theta update."""
    if target.precond_rank and state.step % spec.refresh == 0:
        refresh_preconditioner(state, target, rng)
    if target.kind == "pseudofermion":
        try:
            gibbs_update_phi(state, target, rng)
        except RECOVERABLE as error:
            report(LOGGER, _event(state, "gibbs", error))
            return UpdateResult(state, False, math.nan)
    if spec.kind == "rwm":
        return rwm_update(state, config.dt, target, rng)
    return hmc_update(state, config, target, rng)


def _run_phase(
    state: ExtendedState,
    target: TargetModel,
    spec: SamplerSpec,
    config: HMCConfig,
    steps: int,
    rng: Generator,
    offset: int,
) -> tuple[ExtendedState, _Recorder, Optional[str]]:
    recorder = _Recorder(state)
    for step in range(steps):
        state.step = offset + step
        before = state.stats.total_iterations
        started = time.perf_counter()
        try:
            update = outer_step(state, target, spec, config, rng)
        except GPSamplerError as error:
            LOGGER.error(f"chain {state.chain_id} failed at step {state.step}: {error}")
            return state, recorder, f"{type(error).__name__}: {error}"
        elapsed = time.perf_counter() - started
        new_state = update.state
        new_state.step = state.step
        recorder.record(new_state, update, elapsed, new_state.stats.total_iterations - before)
        state = new_state
    return state, recorder, None


def run_chain(
    target: TargetModel, spec: SamplerSpec, steps: int, seed: int, chain_id: int
) -> tuple[ChainTrace, ChainTrace]:
    """Runs the burn-in and main phases of one chain; returns (main, burn-in) traces."""
    rng = np.random.default_rng(seed)
    state = target.initial_state(spec.initial_value, chain_id)
    warm = spec.with_dt(spec.burn_in.dt if spec.burn_in.dt is not None else spec.hmc.dt)
    state, warm_record, error = _run_phase(state, target, spec, warm, spec.burn_in.steps, rng, 0)
    burn_in = warm_record.trace(chain_id, seed, error)
    if error is not None:
        return _Recorder(state).trace(chain_id, seed, error), burn_in
    state, record, error = _run_phase(state, target, spec, spec.hmc, steps, rng, spec.burn_in.steps)
    return record.trace(chain_id, seed, error), burn_in


def _run_chain_task(arguments: tuple) -> tuple[ChainTrace, ChainTrace]:
    return run_chain(*arguments)


def run_chains(
    target: TargetModel,
    spec: SamplerSpec,
    batch: int,
    steps: int,
    seed: int,
    workers: int = 1,
) -> ChainRun:
    """Runs `batch` independent chains of `steps` outer steps each.

    Chain c draws from its own stream seeded with seed + c, so results do not depend on
    `workers`. Chains that fail are marked in their trace and keep the records made so far.

    Args:
        target (TargetModel): The posterior to sample.
        spec (SamplerSpec): The update kind, integrator settings, and burn-in.
        batch (int): The number of chains B.
        steps (int): The number of outer steps T after burn-in.
        seed (int): The base seed.
        workers (int): Worker processes; 1 runs the chains in this process.

    Returns:
        ChainRun: Per-chain traces with T + 1 theta records each, and burn-in traces.
    """
    if batch < 1 or steps < 0:
        raise ConfigError(f"invalid batch {batch} or step count {steps}")
    tasks = [(target, spec, steps, seed + chain, chain) for chain in range(batch)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain_task, tasks))
    else:
        results = [_run_chain_task(task) for task in tasks]
    failed = sum(trace.failed for trace, _ in results)
    if failed:
        LOGGER.warning(f"{failed} of {batch} chains failed")
    return ChainRun([trace for trace, _ in results], [warm for _, warm in results])

