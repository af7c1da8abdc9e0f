"""Tests for the kernel model.

The tests ensure that:
- Hyperparameters keep sigma and 2 ell^2 positive and round-trip through their vector.
- The Chebyshev field matches numpy's Chebyshev evaluation.
- Tiled applies agree with the dense matrix for every tile size.
- Analytic gradients match finite differences.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import math
import numpy as np
import pytest
from numpy.polynomial import chebyshev
from gp_pseudofermion.errors import DatasetError, DomainError, NumericalOverflowError
from gp_pseudofermion.kernel_model import (
    POSITIVITY_OFFSET,
    Dataset,
    HyperParams,
    KernelOperator,
    apply_A,
    chebyshev_field,
    kernel_entry,
    logdet_grad,
    quad_form_grad,
)


def test_from_scales_roundtrip() -> None:
    """Tests that `from_scales` reproduces the requested sigma^2 and 2 ell^2."""
    hp = HyperParams.from_scales(np.zeros(3), 0.1, 1.0)
    assert hp.sigma_sq == pytest.approx(0.1, rel=1e-12)
    assert hp.two_ell_sq == pytest.approx(1.0, rel=1e-12)
    assert hp.size == 3


def test_scales_stay_positive() -> None:
    """Tests that extreme log entries still give scales above the offset."""
    hp = HyperParams(np.zeros(2), log_sigma=-50.0, log_ell=-50.0)
    assert hp.sigma > POSITIVITY_OFFSET
    assert hp.two_ell_sq > POSITIVITY_OFFSET


def test_from_scales_rejects_tiny_scales() -> None:
    """Tests that scales below the positivity offset are rejected."""
    with pytest.raises(DomainError):
        HyperParams.from_scales(np.zeros(2), 1e-8, 1.0)


def test_vector_layout(full_template: HyperParams) -> None:
    """Tests that theta lists the coefficients, then log sigma, then log ell."""
    theta = np.array([0.3, -0.2, 0.5, -1.5])
    hp = full_template.with_vector(theta)
    np.testing.assert_array_equal(hp.cheb, [0.3, -0.2])
    assert hp.log_sigma == 0.5
    assert hp.log_ell == -1.5
    np.testing.assert_array_equal(hp.to_vector(), theta)


def test_with_vector_rejects_wrong_length(two_param_template: HyperParams) -> None:
    """Tests that a vector of the wrong length is a domain error."""
    with pytest.raises(DomainError):
        two_param_template.with_vector(np.zeros(3))


def test_tensor_layout_is_c_order() -> None:
    """Tests that a 2-d coefficient tensor flattens in C order into theta."""
    cheb = np.arange(9.0).reshape(3, 3)
    hp = HyperParams(cheb, 0.0, 0.0)
    np.testing.assert_array_equal(hp.to_vector(), np.arange(9.0))
    np.testing.assert_array_equal(hp.with_vector(np.arange(9.0)).cheb, cheb)


def test_chebyshev_field_matches_numpy() -> None:
    """Tests the three-term recurrence against numpy's Chebyshev series in 1-d and 2-d."""
    coefficients = np.array([0.2, -0.4, 0.7, 0.1])
    hp = HyperParams(coefficients, 0.0, 0.0)
    x = np.linspace(-1.0, 1.0, 7)
    np.testing.assert_allclose(chebyshev_field(hp, x[:, None]), chebyshev.chebval(x, coefficients), atol=1e-14)
    tensor = np.array([[0.1, 0.2, -0.3], [0.4, -0.5, 0.6], [0.0, 0.3, -0.1]])
    hp2 = HyperParams(tensor, 0.0, 0.0)
    point = np.array([0.3, -0.7])
    assert chebyshev_field(hp2, point) == pytest.approx(chebyshev.chebval2d(0.3, -0.7, tensor), abs=1e-14)


def test_chebyshev_field_rejects_outside_box() -> None:
    """Tests that a point outside [-1, 1]^d is a domain error."""
    hp = HyperParams(np.zeros(2), 0.0, 0.0)
    with pytest.raises(DomainError):
        chebyshev_field(hp, np.array([1.5]))


def test_zero_coefficients_give_unit_field() -> None:
    """Tests that zero coefficients give C = 0 and K(x, x) = 1."""
    hp = HyperParams.from_scales(np.zeros(2), 0.1, 1.0)
    x = np.array([0.25])
    assert chebyshev_field(hp, x) == 0.0
    assert kernel_entry(hp, x, x) == 1.0


def test_dataset_validation() -> None:
    """Tests that mismatched or out-of-box data is rejected."""
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(DomainError):
        Dataset(np.array([[2.0]]), np.zeros(1))


@pytest.mark.parametrize("tile_size", [1, 3, 8, 1024])
def test_apply_matches_dense(planar_dataset: Dataset, tile_size: int) -> None:
    """Tests that tiled applies equal the dense matrix product for any tile size."""
    hp = HyperParams(np.array([[0.1, -0.2], [0.3, 0.05]]), math.log(0.3), math.log(0.5))
    operator = KernelOperator(planar_dataset, hp, tile_size)
    dense = KernelOperator(planar_dataset, hp).dense()
    z = np.random.default_rng(0).standard_normal((12, 3))
    np.testing.assert_allclose(apply_A(operator, z), dense @ z, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(dense, dense.T, atol=1e-15)


def test_dense_entries(small_dataset: Dataset) -> None:
    """Tests dense entries against `kernel_entry` plus sigma^2 on the diagonal."""
    hp = HyperParams(np.array([0.2, -0.3]), math.log(0.2), math.log(0.7))
    matrix = KernelOperator(small_dataset, hp).dense()
    points = small_dataset.points
    for i, j in [(0, 0), (1, 5), (7, 2)]:
        expected = kernel_entry(hp, points[i], points[j]) + (hp.sigma_sq if i == j else 0.0)
        assert matrix[i, j] == pytest.approx(expected, rel=1e-13)


def test_apply_is_spd(small_dataset: Dataset) -> None:
    """Tests that A(theta) is positive definite with smallest eigenvalue at least sigma^2."""
    hp = HyperParams(np.array([0.4, 0.6]), math.log(0.1), math.log(2.0))
    eigenvalues = np.linalg.eigvalsh(KernelOperator(small_dataset, hp).dense())
    assert eigenvalues.min() >= hp.sigma_sq * (1.0 - 1e-10)


def test_overflow_is_reported(small_dataset: Dataset) -> None:
    """Tests that huge coefficients raise a numerical overflow error."""
    hp = HyperParams(np.array([800.0, 0.0]), 0.0, 0.0)
    with pytest.raises(NumericalOverflowError):
        KernelOperator(small_dataset, hp).apply(np.ones(8))


def _finite_difference(func, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(theta)
    for k in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[k] = step
        grad[k] = (func(theta + e) - func(theta - e)) / (2.0 * step)
    return grad


def test_quad_form_grad_matches_finite_differences(small_dataset: Dataset, full_template: HyperParams) -> None:
    """Tests the matrix-free gradient of z^T A z including both scale entries."""
    rng = np.random.default_rng(3)
    z = rng.standard_normal(8)
    theta = np.array([0.2, -0.1, math.log(0.3), math.log(0.8)])

    def quadratic(t: np.ndarray) -> float:
        return float(z @ KernelOperator(small_dataset, full_template.with_vector(t)).apply(z))

    analytic = quad_form_grad(KernelOperator(small_dataset, full_template.with_vector(theta), 3), z)
    np.testing.assert_allclose(analytic, _finite_difference(quadratic, theta), rtol=1e-6, atol=1e-8)


def test_logdet_grad_matches_finite_differences(small_dataset: Dataset, full_template: HyperParams) -> None:
    """Tests the dense log-determinant gradient."""
    theta = np.array([-0.3, 0.25, math.log(0.4), math.log(1.2)])

    def logdet(t: np.ndarray) -> float:
        return float(np.linalg.slogdet(KernelOperator(small_dataset, full_template.with_vector(t)).dense())[1])

    operator = KernelOperator(small_dataset, full_template.with_vector(theta))
    analytic = logdet_grad(operator, np.linalg.inv(operator.dense()))
    np.testing.assert_allclose(analytic, _finite_difference(logdet, theta), rtol=1e-6, atol=1e-8)


def test_cross_kernel_and_prior_variance(small_dataset: Dataset) -> None:
    """Tests the cross kernel at the data points and the prior variance exp(2 C)."""
    hp = HyperParams(np.array([0.3, -0.2]), math.log(0.2), math.log(0.5))
    operator = KernelOperator(small_dataset, hp)
    np.testing.assert_allclose(operator.cross_kernel(small_dataset.points), operator.dense_kernel(), rtol=1e-13)
    np.testing.assert_allclose(
        operator.prior_variance(small_dataset.points), np.diag(operator.dense_kernel()), rtol=1e-13
    )
