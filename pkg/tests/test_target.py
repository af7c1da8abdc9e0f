"""Tests for the sampling targets.

The tests ensure that:
- Potentials match their dense definitions.
- Forces match finite differences of the potential for both targets.
- The Gibbs update draws phi = A^{-1/2} xi, so 1/2 phi^T A phi averages N / 2.
- Invalid target configurations are rejected.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import math
import numpy as np
import pytest
import scipy.linalg
from gp_pseudofermion.errors import ConfigError, FactorizationError
from gp_pseudofermion.kernel_model import Dataset, HyperParams, KernelOperator
from gp_pseudofermion.matfree_linalg import SolveConfig
from gp_pseudofermion.target import (
    ExtendedState,
    FlatPrior,
    GaussianPrior,
    TargetModel,
    force,
    gibbs_update_phi,
    potential,
    refresh_preconditioner,
)


TIGHT = SolveConfig(tol=1e-12)


def _dense(dataset: Dataset, template: HyperParams, theta: np.ndarray) -> np.ndarray:
    return KernelOperator(dataset, template.with_vector(theta)).dense()


def _finite_difference(target: TargetModel, state: ExtendedState, step: float = 1e-4) -> np.ndarray:
    grad = np.empty_like(state.theta)
    for k in range(state.theta.shape[0]):
        e = np.zeros_like(state.theta)
        e[k] = step
        plus = potential(state.moved(state.theta + e), target)
        minus = potential(state.moved(state.theta - e), target)
        grad[k] = (plus - minus) / (2.0 * step)
    return grad


def test_pseudofermion_potential_matches_dense(small_dataset: Dataset, full_template: HyperParams) -> None:
    """Tests U_phi = 1/2 y^T A^{-1} y + 1/2 phi^T A phi under a flat prior."""
    target = TargetModel("pseudofermion", small_dataset, full_template, TIGHT)
    theta = np.array([0.1, -0.2, math.log(0.3), math.log(0.9)])
    phi = np.random.default_rng(2).standard_normal(8)
    matrix = _dense(small_dataset, full_template, theta)
    y = small_dataset.observations
    expected = 0.5 * y @ np.linalg.solve(matrix, y) + 0.5 * phi @ matrix @ phi
    assert potential(ExtendedState(theta, phi=phi), target) == pytest.approx(expected, rel=1e-9)


def test_determinant_potential_matches_dense(small_dataset: Dataset, full_template: HyperParams) -> None:
    """Tests U = 1/2 log|A| + 1/2 y^T A^{-1} y + S with a Gaussian prior."""
    target = TargetModel("determinant", small_dataset, full_template, prior=GaussianPrior(2.0))
    theta = np.array([0.3, 0.1, math.log(0.2), math.log(1.1)])
    matrix = _dense(small_dataset, full_template, theta)
    y = small_dataset.observations
    expected = (
        0.5 * np.linalg.slogdet(matrix)[1]
        + 0.5 * y @ np.linalg.solve(matrix, y)
        + 0.5 * theta @ theta / 4.0
    )
    assert potential(ExtendedState(theta), target) == pytest.approx(expected, rel=1e-10)


def test_pseudofermion_force_matches_finite_differences(
    small_dataset: Dataset, full_template: HyperParams
) -> None:
    """Tests the pseudofermion force including both scale entries and a Gaussian prior."""
    target = TargetModel("pseudofermion", small_dataset, full_template, TIGHT, prior=GaussianPrior(1.5))
    phi = np.random.default_rng(3).standard_normal(8)
    state = ExtendedState(np.array([0.2, -0.1, math.log(0.4), math.log(0.7)]), phi=phi)
    np.testing.assert_allclose(force(state, target), _finite_difference(target, state), rtol=1e-5, atol=1e-6)


def test_determinant_force_matches_finite_differences(small_dataset: Dataset, full_template: HyperParams) -> None:
    """Tests the dense determinant force."""
    target = TargetModel("determinant", small_dataset, full_template)
    state = ExtendedState(np.array([-0.2, 0.3, math.log(0.25), math.log(1.3)]))
    np.testing.assert_allclose(force(state, target), _finite_difference(target, state), rtol=1e-5, atol=1e-6)


def test_solution_is_cached(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that x_theta is solved once per theta and dropped on a move."""
    target = TargetModel("pseudofermion", small_dataset, two_param_template, TIGHT)
    state = target.initial_state(0.05)
    first = target.solution(state)
    iterations = state.stats.cg_iterations
    assert target.solution(state) is first
    assert state.stats.cg_iterations == iterations
    moved = state.moved(state.theta + 0.1)
    assert moved.stats is state.stats
    target.solution(moved)
    assert state.stats.cg_iterations > iterations


def test_initial_state(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that the initial state fills theta and zeroes phi."""
    state = TargetModel("pseudofermion", small_dataset, two_param_template).initial_state(0.01, chain_id=3)
    np.testing.assert_array_equal(state.theta, [0.01, 0.01])
    np.testing.assert_array_equal(state.phi, np.zeros(8))
    assert state.chain_id == 3
    assert TargetModel("determinant", small_dataset, two_param_template).initial_state().phi is None


def test_gibbs_update_is_inverse_square_root(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests phi = A^{-1/2} xi for the standard normal xi drawn from the chain's stream."""
    target = TargetModel("pseudofermion", small_dataset, two_param_template, TIGHT, bound_iterations=100)
    state = target.initial_state(0.2)
    phi = gibbs_update_phi(state, target, np.random.default_rng(5))
    xi = np.random.default_rng(5).standard_normal(8)
    values, vectors = np.linalg.eigh(_dense(small_dataset, two_param_template, state.theta))
    expected = vectors @ ((vectors.T @ xi) / np.sqrt(values))
    np.testing.assert_allclose(phi, expected, rtol=1e-5, atol=1e-6)
    assert state.stats.pole_iterations > 0


def test_gibbs_moment_is_half_n() -> None:
    """Tests E[1/2 phi^T A phi] = N / 2 over repeated draws on a six-point problem."""
    points = np.linspace(-0.8, 0.7, 6)[:, None]
    dataset = Dataset(points, np.sin(3.0 * points[:, 0]))
    template = HyperParams.from_scales(np.zeros(2), 0.1, 1.0)
    target = TargetModel("pseudofermion", dataset, template, TIGHT, bound_iterations=100)
    state = target.initial_state(0.2)
    matrix = _dense(dataset, template, state.theta)
    rng = np.random.default_rng(11)
    draws = 1000
    actions = np.empty(draws)
    for i in range(draws):
        phi = gibbs_update_phi(state, target, rng)
        actions[i] = 0.5 * phi @ matrix @ phi
    standard_error = actions.std(ddof=1) / np.sqrt(draws)
    assert abs(actions.mean() - 3.0) < 5.0 * standard_error


def test_gibbs_update_shared_krylov(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that the shared-Krylov Gibbs update agrees with independent solves."""
    independent = TargetModel("pseudofermion", small_dataset, two_param_template, TIGHT)
    shared = TargetModel("pseudofermion", small_dataset, two_param_template, TIGHT, shared_krylov=True)
    a = gibbs_update_phi(independent.initial_state(), independent, np.random.default_rng(8))
    b = gibbs_update_phi(shared.initial_state(), shared, np.random.default_rng(8))
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)


def test_gibbs_update_invalidates_potential(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that a new phi changes the cached potential."""
    target = TargetModel("pseudofermion", small_dataset, two_param_template, TIGHT)
    state = target.initial_state()
    before = potential(state, target)
    gibbs_update_phi(state, target, np.random.default_rng(0))
    assert potential(state, target) > before


def test_preconditioned_solution(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that a refreshed Nystrom preconditioner leaves x_theta unchanged."""
    target = TargetModel("pseudofermion", small_dataset, two_param_template, TIGHT, precond_rank=4)
    state = target.initial_state(0.1)
    refresh_preconditioner(state, target, np.random.default_rng(0))
    assert state.preconditioner is not None
    expected = np.linalg.solve(_dense(small_dataset, two_param_template, state.theta), small_dataset.observations)
    np.testing.assert_allclose(target.solution(state), expected, rtol=1e-8, atol=1e-10)


def test_refresh_without_rank_is_noop(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that rank 0 keeps the state unpreconditioned."""
    target = TargetModel("pseudofermion", small_dataset, two_param_template)
    state = target.initial_state()
    refresh_preconditioner(state, target, np.random.default_rng(0))
    assert state.preconditioner is None


def test_factorization_error(
    small_dataset: Dataset, two_param_template: HyperParams, monkeypatch: pytest.MonkeyPatch
) -> None:
    """Tests that a failed dense Cholesky is reported with the offending theta."""

    def fail(*args, **kwargs):
        raise np.linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(scipy.linalg, "cho_factor", fail)
    target = TargetModel("determinant", small_dataset, two_param_template)
    with pytest.raises(FactorizationError) as exc_info:
        potential(target.initial_state(0.5), target)
    np.testing.assert_array_equal(exc_info.value.theta, [0.5, 0.5])


def test_invalid_targets(small_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests the configuration checks of a target."""
    with pytest.raises(ConfigError):
        TargetModel("unknown", small_dataset, two_param_template)  # type: ignore[arg-type]
    with pytest.raises(ConfigError):
        TargetModel("determinant", small_dataset, two_param_template, dense_limit=4)
    with pytest.raises(ConfigError):
        TargetModel("pseudofermion", small_dataset, two_param_template, precond_rank=9)
    with pytest.raises(ConfigError):
        TargetModel("pseudofermion", small_dataset, two_param_template, shared_krylov=True, precond_rank=2)
    determinant = TargetModel("determinant", small_dataset, two_param_template)
    with pytest.raises(ConfigError):
        gibbs_update_phi(determinant.initial_state(), determinant, np.random.default_rng(0))


def test_flat_prior() -> None:
    """Tests that the flat prior contributes nothing."""
    prior = FlatPrior()
    theta = np.array([1.0, -2.0])
    assert prior.action(theta) == 0.0
    np.testing.assert_array_equal(prior.gradient(theta), np.zeros(2))
