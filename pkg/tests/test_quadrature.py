"""Tests for the quadrature reference posterior.

The tests ensure that:
- Grid log densities equal the negated determinant potential.
- The normalized density has unit mass and monotone marginal CDFs from 0 to 1.
- Only two-hyperparameter models are accepted.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid
from gp_pseudofermion.errors import UnsupportedDimensionError
from gp_pseudofermion.kernel_model import Dataset, HyperParams
from gp_pseudofermion.quadrature import log_density_grid, quadrature_reference
from gp_pseudofermion.target import ExtendedState, GaussianPrior, TargetModel


def test_log_density_matches_determinant_potential(
    verification_dataset: Dataset, two_param_template: HyperParams
) -> None:
    """Tests every node against the determinant target with a Gaussian prior."""
    axis = np.linspace(-1.0, 1.0, 4)
    prior = GaussianPrior(2.0)
    grid = log_density_grid(verification_dataset, two_param_template, axis, prior)
    target = TargetModel("determinant", verification_dataset, two_param_template, prior=prior)
    for i, a in enumerate(axis):
        for j, b in enumerate(axis):
            expected = -target.potential(ExtendedState(np.array([a, b])))
            assert grid[i, j] == pytest.approx(expected, rel=1e-10)


def test_reference_is_normalized(verification_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests unit mass, CDF end points, monotonicity, and means inside the box."""
    reference = quadrature_reference(verification_dataset, two_param_template, resolution=40)
    assert reference.resolution == 40
    assert reference.mass == pytest.approx(1.0, abs=1e-10)
    assert reference.density.shape == (40, 40)
    assert np.all(reference.density >= 0.0)
    np.testing.assert_allclose(reference.cdfs[:, 0], 0.0)
    np.testing.assert_allclose(reference.cdfs[:, -1], 1.0)
    assert np.all(np.diff(reference.cdfs, axis=1) >= 0.0)
    assert np.all(np.abs(reference.means) < 3.0)
    for component in range(2):
        assert trapezoid(reference.marginals[component], reference.axis) == pytest.approx(1.0, abs=1e-10)


def test_cdf_interpolation(verification_dataset: Dataset, two_param_template: HyperParams) -> None:
    """Tests that the interpolated CDF clamps outside the box and hits the grid values."""
    reference = quadrature_reference(verification_dataset, two_param_template, resolution=20)
    values = reference.cdf(0, np.array([-10.0, reference.axis[7], 10.0]))
    assert values[0] == 0.0
    assert values[1] == pytest.approx(reference.cdfs[0, 7])
    assert values[2] == 1.0


def test_other_dimensions_are_unsupported(verification_dataset: Dataset, full_template: HyperParams) -> None:
    """Tests that a four-hyperparameter template is rejected."""
    with pytest.raises(UnsupportedDimensionError):
        quadrature_reference(verification_dataset, full_template)
