"""Tests for the elliptic pole expansion.

The tests ensure that:
- K(m) and the Jacobi elliptic functions agree with scipy.special.
- The expansion applies A^{-1/2} to 1e-6 on a condition-1e3 matrix with 15 poles.
- The error decays geometrically in the number of poles.

License:
MIT License (c) 2025 Shingo OKAWA
"""

import math
import numpy as np
import pytest
import scipy.special
from gp_pseudofermion.errors import ConfigError, DomainError
from gp_pseudofermion.matfree_linalg import SolveConfig
from gp_pseudofermion.pole_expansion import (
    SpectralBounds,
    apply_inv_sqrt,
    apply_sqrt,
    build_pole_expansion,
    elliptic_K,
    estimate_bounds,
    jacobi_elliptic,
)


def _eigen(matrix: np.ndarray, power: float, v: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    return vectors @ (values**power * (vectors.T @ v))


@pytest.mark.parametrize("m", [0.0, 1e-12, 0.1, 0.5, 0.9, 0.999999, 1.0 - 1e-12])
def test_elliptic_K_matches_scipy(m: float) -> None:
    """Tests K(m) against scipy.special.ellipk across the whole parameter range."""
    assert elliptic_K(m) == pytest.approx(scipy.special.ellipk(m), rel=1e-13)


def test_elliptic_K_domain() -> None:
    """Tests that m = 1 and negative m are rejected."""
    with pytest.raises(DomainError):
        elliptic_K(1.0)
    with pytest.raises(DomainError):
        elliptic_K(-0.1)


@pytest.mark.parametrize("m", [0.0, 1e-11, 0.3, 0.75, 0.99, 1.0 - 1e-11, 1.0])
@pytest.mark.parametrize("u", [0.0, 0.4, 1.3, 2.5])
def test_jacobi_elliptic_matches_scipy(u: float, m: float) -> None:
    """Tests sn, cn, dn against scipy.special.ellipj."""
    sn, cn, dn, _ = scipy.special.ellipj(u, m)
    np.testing.assert_allclose(jacobi_elliptic(u, m), (sn, cn, dn), rtol=1e-10, atol=1e-12)


def test_jacobi_elliptic_identities() -> None:
    """Tests sn^2 + cn^2 = 1 and dn^2 + m sn^2 = 1."""
    for u, m in [(0.7, 0.2), (1.9, 0.95), (3.0, 0.5)]:
        sn, cn, dn = jacobi_elliptic(u, m)
        assert sn * sn + cn * cn == pytest.approx(1.0, abs=1e-14)
        assert dn * dn + m * sn * sn == pytest.approx(1.0, abs=1e-14)


def test_spectral_bounds_validation() -> None:
    """Tests that empty or non-positive intervals are rejected."""
    with pytest.raises(DomainError):
        SpectralBounds(0.0, 1.0)
    with pytest.raises(DomainError):
        SpectralBounds(2.0, 1.0)


def test_expansion_shape() -> None:
    """Tests that shifts are positive and ascending and weights positive."""
    expansion = build_pole_expansion(SpectralBounds(1.0, 1e3), 15)
    assert expansion.n_poles == 15
    assert np.all(expansion.shifts > 0.0)
    assert np.all(np.diff(expansion.shifts) > 0.0)
    assert np.all(expansion.weights > 0.0)


def test_degenerate_interval_is_exact() -> None:
    """Tests that a single-point spectrum is inverted exactly."""
    expansion = build_pole_expansion(SpectralBounds(4.0, 4.0), 3)
    assert expansion.scalar(4.0) == pytest.approx(0.5, rel=1e-10)


def test_inv_sqrt_accuracy(spd_matrix: np.ndarray) -> None:
    """Tests A^{-1/2} v to 1e-6 relative with 15 poles on a condition-1e3 matrix."""
    v = np.random.default_rng(11).standard_normal(30)
    expansion = build_pole_expansion(SpectralBounds(1.0, 1e3), 15)
    result = apply_inv_sqrt(spd_matrix, v, expansion, SolveConfig(tol=1e-12))
    expected = _eigen(spd_matrix, -0.5, v)
    assert np.linalg.norm(result - expected) / np.linalg.norm(expected) <= 1e-6


def test_sqrt_accuracy(spd_matrix: np.ndarray) -> None:
    """Tests A^{1/2} v through the extra operator apply."""
    v = np.random.default_rng(12).standard_normal(30)
    expansion = build_pole_expansion(SpectralBounds(1.0, 1e3), 15, mode="sqrt")
    result = apply_sqrt(spd_matrix, v, expansion, SolveConfig(tol=1e-12))
    expected = _eigen(spd_matrix, 0.5, v)
    assert np.linalg.norm(result - expected) / np.linalg.norm(expected) <= 1e-6


def test_shared_krylov_matches_independent(spd_matrix: np.ndarray) -> None:
    """Tests that both solve modes give the same expansion."""
    from gp_pseudofermion.pole_expansion import expansion_solve

    v = np.random.default_rng(13).standard_normal(30)
    expansion = build_pole_expansion(SpectralBounds(1.0, 1e3), 10)
    independent = expansion_solve(spd_matrix, v, expansion, SolveConfig(tol=1e-11)).x
    shared = expansion_solve(spd_matrix, v, expansion, SolveConfig(tol=1e-11), mode="shared").x
    np.testing.assert_allclose(shared, independent, rtol=1e-8, atol=1e-10)


def test_mode_mismatch_rejected(spd_matrix: np.ndarray) -> None:
    """Tests that a sqrt expansion cannot be applied as an inverse square root."""
    expansion = build_pole_expansion(SpectralBounds(1.0, 1e3), 5, mode="sqrt")
    with pytest.raises(ConfigError):
        apply_inv_sqrt(spd_matrix, np.ones(30), expansion, SolveConfig())


def test_geometric_decay() -> None:
    """Tests that the worst error over the spectrum shrinks monotonically with N_p."""
    lambdas = np.geomspace(1.0, 1e3, 200)
    errors = []
    for n_poles in (3, 6, 9, 12, 15):
        expansion = build_pole_expansion(SpectralBounds(1.0, 1e3), n_poles)
        approx = np.array([expansion.scalar(a) for a in lambdas])
        errors.append(float(np.max(np.abs(approx * np.sqrt(lambdas) - 1.0))))
    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
    log_errors = np.log(errors)
    assert np.all(np.diff(log_errors) < -1.0)
    assert errors[-1] <= 1e-7


def test_error_rate_tracks_poles() -> None:
    """Tests that the predicted error factor falls with more poles."""
    small = build_pole_expansion(SpectralBounds(1.0, 1e3), 5).error_rate()
    large = build_pole_expansion(SpectralBounds(1.0, 1e3), 10).error_rate()
    assert large == pytest.approx(small**2, rel=1e-12)


def test_estimate_bounds_encloses_spectrum(spd_matrix: np.ndarray) -> None:
    """Tests that the inflated power estimate bounds the top eigenvalue after convergence."""
    bounds = estimate_bounds(spd_matrix, 1.0, iters=100, inflation=1.1)
    assert bounds.lower == 1.0
    assert bounds.upper >= np.linalg.eigvalsh(spd_matrix).max()
    assert math.isfinite(bounds.upper)
