import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_saddle
from quasipot import numkit
from quasipot.errors import ComplexUnstableEigenvalue, NotExitSaddle
from quasipot.exitproblem import associated_jacobian, exit_direction, spectra_match
from quasipot.localqp import analyze_ep, analyze_linearization
from quasipot.model import EquilibriumPoint, refine_equilibrium


def kramers_analysis(kramers, gamma, u2, allow_marginal=False):
    m = kramers(gamma, u2).system
    return analyze_ep(m, refine_equilibrium(m, [0.0, 0.0]), allow_marginal=allow_marginal)


def linearization(M, D):
    n = len(M)
    return analyze_linearization(EquilibriumPoint.from_jacobian(np.zeros(n), M), D)


def test_kramers_barrier(kramers):
    ea = kramers_analysis(kramers, 1.0, -2.0)
    ex = exit_direction(ea)
    assert_allclose(ex.Mtilde, [[0.0, -1.0], [-2.0, -1.0]], atol=1e-12)
    assert ex.lambda_plus == pytest.approx(1.0)
    assert_allclose(ex.start_dir, np.array([1.0, -1.0]) / np.sqrt(2.0), atol=1e-8)
    assert_allclose(ex.f, np.array([2.0, 1.0]) / np.sqrt(5.0), atol=1e-12)
    assert ex.spectrum_match
    assert ex.eigen_residual <= 1e-12
    assert ex.similarity_residual <= 1e-12


def test_kramers_barrier_second_case(kramers):
    ex = exit_direction(kramers_analysis(kramers, 2.0, -3.0))
    assert ex.lambda_plus == pytest.approx(1.0)
    assert_allclose(ex.start_dir, np.array([1.0, -1.0]) / np.sqrt(2.0), atol=1e-8)


def test_orientation_away_from_attractor(kramers):
    ea = kramers_analysis(kramers, 1.0, -2.0)
    ex = exit_direction(ea, away_from=[-1.0, 0.5])
    assert_allclose(ex.start_dir, np.array([-1.0, 1.0]) / np.sqrt(2.0), atol=1e-8)


def test_symmetric_drift_has_unchanged_jacobian():
    M = np.array([[1.0, 0.5], [0.5, -2.0]])
    ea = linearization(M, np.eye(2))
    assert_allclose(associated_jacobian(ea), M, atol=1e-14)


def test_flat_barrier_trace_and_determinant(kramers):
    ea = kramers_analysis(kramers, 1.5, 0.0, allow_marginal=True)
    mt = associated_jacobian(ea)
    M = ea.ep.M
    assert np.trace(mt) == pytest.approx(np.trace(M), abs=1e-10)
    assert np.linalg.det(mt) == pytest.approx(np.linalg.det(M), abs=1e-10)
    with pytest.raises(NotExitSaddle):
        exit_direction(ea)


def test_attractor_is_not_exit_saddle(kramers):
    with pytest.raises(NotExitSaddle):
        exit_direction(kramers_analysis(kramers, 3.0, 2.0))


def test_two_unstable_directions():
    ea = linearization(np.diag([1.0, 2.0, -5.0]), np.eye(3))
    with pytest.raises(NotExitSaddle):
        exit_direction(ea)


def test_complex_unstable_pair():
    M = np.array([[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, -5.0]])
    ea = linearization(M, np.eye(3))
    with pytest.raises(ComplexUnstableEigenvalue) as info:
        exit_direction(ea)
    assert info.value.exit_code == 4


def test_random_saddles(rng):
    for trial in range(40):
        n = 2 + trial % 4
        M, D = random_saddle(rng, n)
        ea = linearization(M, D)
        ex = exit_direction(ea)
        assert ex.spectrum_match
        assert spectra_match(numkit.eig(ex.Mtilde).eigenvalues, ea.ep.spectrum.eigenvalues)
        spectrum = numkit.eig(ex.Mtilde)
        k = int(np.argmin(np.abs(spectrum.eigenvalues - ex.lambda_plus)))
        unstable = numkit.real_eigenvector(spectrum.vector(k))
        assert abs(float(unstable @ ex.start_dir)) >= 1.0 - 1e-8


def test_spectra_match_pairs_optimally():
    assert spectra_match([1.0, 2.0 + 1j, 2.0 - 1j], [2.0 - 1j, 1.0, 2.0 + 1j])
    assert not spectra_match([1.0, 2.0], [1.0, 2.1])
    assert not spectra_match([1.0], [1.0, 2.0])


def test_exit_data_invariants(rng):
    for trial in range(100):
        n = 2 + trial % 4
        M, D = random_saddle(rng, n)
        ea = linearization(M, D)
        assert np.trace(ea.A @ ea.S) == pytest.approx(0.0, abs=1e-9 * numkit.norm(ea.S))
        ex = exit_direction(ea)
        drift_side = -(ea.D + ea.A) @ ex.f
        metric_side = numkit.solve_linear(ea.S, ex.f)
        cos = abs(float(drift_side @ metric_side)) / (
            numkit.norm(drift_side) * numkit.norm(metric_side)
        )
        assert cos >= 1.0 - 1e-8
