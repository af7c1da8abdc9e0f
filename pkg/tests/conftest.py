"""Pytest configuration and fixtures for the project.

This module contains fixtures shared across test files: small datasets, the ten-point
verification problem, random SPD matrices, and a reset of the cached command line.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import numpy as np
import pytest
from gp_pseudofermion.cli import Cli, get_settings
from gp_pseudofermion.kernel_model import Dataset, HyperParams


def random_spd(size: int, condition: float, seed: int = 0) -> np.ndarray:
    """Returns a random SPD matrix with eigenvalues spread log-uniformly over [1, condition].

    Args:
        size (int): The matrix dimension.
        condition (float): The condition number.
        seed (int): The seed of the random rotation.

    Returns:
        np.ndarray: A symmetric positive definite matrix.
    """
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((size, size)))
    eigenvalues = np.geomspace(1.0, condition, size)
    return (q * eigenvalues) @ q.T


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixture providing a seeded random generator.

    Returns:
        np.random.Generator: A generator seeded with 1234.
    """
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset() -> Dataset:
    """Fixture providing eight one-dimensional points with smooth observations.

    Returns:
        Dataset: N = 8, d = 1.
    """
    points = np.linspace(-0.9, 0.8, 8)[:, None]
    return Dataset(points, np.cos(2.0 * points[:, 0]) - 0.3)


@pytest.fixture
def planar_dataset() -> Dataset:
    """Fixture providing twelve two-dimensional points.

    Returns:
        Dataset: N = 12, d = 2.
    """
    rng = np.random.default_rng(7)
    points = rng.uniform(-1.0, 1.0, size=(12, 2))
    return Dataset(points, np.prod(np.cos(points), axis=1) + 0.1 * rng.standard_normal(12))


@pytest.fixture
def verification_dataset() -> Dataset:
    """Fixture providing ten equispaced points on [-1, 1) with y = 1.

    Returns:
        Dataset: N = 10, d = 1.
    """
    return Dataset(np.linspace(-1.0, 1.0, 10, endpoint=False)[:, None], np.ones(10))


@pytest.fixture
def two_param_template() -> HyperParams:
    """Fixture providing the two-coefficient template with sigma^2 = 0.1 and 2 ell^2 = 1.

    Returns:
        HyperParams: N_cheb = 2, d = 1, scales frozen.
    """
    return HyperParams.from_scales(np.zeros(2), 0.1, 1.0)


@pytest.fixture
def full_template() -> HyperParams:
    """Fixture providing a template that also samples both scales.

    Returns:
        HyperParams: N_cheb = 2, d = 1, sigma and ell inferred.
    """
    return HyperParams.from_scales(np.zeros(2), 0.1, 1.0, infer_sigma=True, infer_ell=True)


@pytest.fixture
def spd_matrix() -> np.ndarray:
    """Fixture providing a 30 x 30 SPD matrix with condition number 1e3.

    Returns:
        np.ndarray: The matrix.
    """
    return random_spd(30, 1e3)


@pytest.fixture(autouse=True)
def setup_function():
    """Automatically clears the settings cache before each test.

    This fixture ensures that `get_settings()` does not retain cached values between
    tests, preventing state leakage and ensuring each test runs with fresh settings.

    Returns:
        None
    """
    Cli.model_config["env_file"] = ""
    get_settings.cache_clear()
