import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_psd, random_stable
from quasipot import localqp, numkit
from quasipot.errors import ComplexBeta, MarginalEquilibrium, NotAttractor
from quasipot.model import (
    EquilibriumPoint,
    custom_model,
    gradient_model,
    refine_equilibrium,
)

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def kramers_analysis(kramers, gamma, u2, allow_marginal=False):
    m = kramers(gamma, u2).system
    ep = refine_equilibrium(m, [0.0, 0.0])
    return m, localqp.analyze_ep(m, ep, allow_marginal=allow_marginal)


def test_kramers_bottom(kramers):
    m, ea = kramers_analysis(kramers, 3.0, 2.0)
    assert_allclose(ea.A, ROT, atol=1e-12)
    assert ea.chi == pytest.approx(1.0)
    assert_allclose(ea.S, np.diag([2.0, 1.0]), atol=1e-12)
    assert ea.rank_S == 2
    assert_allclose(ea.Sinv, np.diag([0.5, 1.0]), atol=1e-12)
    d = ea.diagnostics
    assert d.riccati <= 1e-12
    assert d.symmetry <= 1e-12
    assert d.lyapunov <= 1e-10
    assert d.r_at_ep == pytest.approx(0.0, abs=1e-12)
    # quadratic potential: the local gradient field is exact
    assert d.freidlin <= 1e-14


def test_kramers_flat_bottom_needs_opt_in(kramers):
    with pytest.raises(MarginalEquilibrium):
        kramers_analysis(kramers, 2.0, 0.0)
    _, ea = kramers_analysis(kramers, 2.0, 0.0, allow_marginal=True)
    assert_allclose(ea.A, ROT, atol=1e-12)
    assert_allclose(ea.S, np.diag([0.0, 1.0]), atol=1e-12)
    assert ea.rank_S == 1 == ea.rank_M
    assert ea.Sinv is None
    assert_allclose(numkit.inverse(ea.K), [[-2.0, -1.0], [1.0, 0.0]], atol=1e-12)


def test_ou(ou_model):
    ep = refine_equilibrium(ou_model, [0.3, 0.3])
    ea = localqp.analyze_ep(ou_model, ep)
    assert_allclose(ea.S, [[0.5, -0.5], [-0.5, 1.5]], atol=1e-12)
    assert_allclose(ea.Sinv, [[3.0, 1.0], [1.0, 1.0]], atol=1e-12)
    assert_allclose(numkit.inverse(ea.S), ea.Sinv, atol=1e-10)


def test_gradient_field(kramers, ou_model):
    m, ea = kramers_analysis(kramers, 3.0, 2.0)
    assert_allclose(localqp.qp_gradient_field(ea, m, [0.0, 0.0]), [0.0, 0.0])
    assert_allclose(localqp.qp_gradient_field(ea, m, [0.1, -0.2]), [0.2, -0.2], atol=1e-12)

    g = gradient_model("x1^4/4 - x1^2/2 + x2^2/2", 2)
    ep = refine_equilibrium(g, [0.9, 0.1])
    ea = localqp.analyze_ep(g, ep)
    assert_allclose(ea.A, np.zeros((2, 2)), atol=1e-14)
    x = np.array([1.3, -0.4])
    assert_allclose(localqp.qp_gradient_field(ea, g, x), [x[0] ** 3 - x[0], x[1]], atol=1e-12)


def test_freidlin_residual(double_well, rng):
    km = double_well(1.5)
    m = km.system
    assert localqp.freidlin_residual(m, [0.0, 0.0], [0.4, 0.9]) == 0.0
    for x, v in rng.normal(size=(5, 2)):
        g = [km.dU(x), v]
        assert localqp.freidlin_residual(m, g, [x, v]) == pytest.approx(0.0, abs=1e-12)
    assert abs(localqp.freidlin_residual(m, [1.0, 2.0], [0.3, -0.5])) > 1e-3


def test_compute_r(kramers):
    m = kramers(3.0, 2.0).system
    x = [0.0, 0.0]
    assert localqp.compute_r(m, np.diag([2.0, 1.0]), x) == pytest.approx(0.0)
    plus = localqp.kramers_phi_pm(2.0, 3.0, 1)
    assert localqp.compute_r(m, plus.S_pm, x) == pytest.approx(1.0)
    assert localqp.compute_r(m, np.zeros((2, 2)), x) == pytest.approx(3.0)


def test_compute_r_state_dependent_diffusion():
    # D = 1 + x1^2: div(D g) = D' g + D g'
    m = custom_model(1, ["-x1"], [["1 + x1^2"]])
    r = localqp.compute_r(m, [[2.0]], [1.0], grad_phi=[0.5])
    assert r == pytest.approx(1.0 - 2.0 * 0.5 - 2.0 * 2.0)


def test_gaussian_density(ou_model, kramers):
    ea = localqp.analyze_ep(ou_model, refine_equilibrium(ou_model, [0.0, 0.0]))
    gauss = localqp.gaussian_density(ea, 0.1)
    assert_allclose(gauss.covariance, 0.1 * np.array([[3.0, 1.0], [1.0, 1.0]]), atol=1e-12)
    assert gauss.pdf([0.0, 0.0]) == pytest.approx(gauss.normalizer)

    _, ea = kramers_analysis(kramers, 3.0, 2.0)
    assert_allclose(localqp.gaussian_density(ea, 0.2).covariance, np.diag([0.1, 0.2]), atol=1e-12)

    scalar = custom_model(1, ["-x1"], [["1"]])
    ea = localqp.analyze_ep(scalar, refine_equilibrium(scalar, [0.5]))
    assert_allclose(localqp.gaussian_density(ea, 0.3).covariance, [[0.3]])


def test_gaussian_density_rejects_saddles_and_bad_eps(kramers):
    _, ea = kramers_analysis(kramers, 1.0, -2.0)
    with pytest.raises(NotAttractor):
        localqp.gaussian_density(ea, 0.1)
    _, ea = kramers_analysis(kramers, 3.0, 2.0)
    with pytest.raises(ValueError):
        localqp.gaussian_density(ea, 0.0)


def test_fpe_residual_vanishes_for_linear_models(ou_model, rng):
    ea = localqp.analyze_ep(ou_model, refine_equilibrium(ou_model, [0.0, 0.0]))
    gauss = localqp.gaussian_density(ea, 0.05)
    for x in rng.normal(size=(5, 2)):
        assert localqp.fpe_residual(ou_model, gauss, x) == pytest.approx(0.0, abs=1e-9)


def test_fpe_residual_nonzero_for_anharmonic_potential(double_well):
    m = double_well(1.0).system
    ea = localqp.analyze_ep(m, refine_equilibrium(m, [1.0, 0.0]))
    gauss = localqp.gaussian_density(ea, 0.1)
    assert abs(localqp.fpe_residual(m, gauss, [1.5, 0.2])) > 1e-3


def test_associated_and_conservative_drift(ou_model):
    ea = localqp.analyze_ep(ou_model, refine_equilibrium(ou_model, [0.0, 0.0]))
    x = np.array([0.3, -0.7])
    g = localqp.qp_gradient_field(ea, ou_model, x)
    assert_allclose(localqp.conservative_drift(ea, ou_model, x) @ g, 0.0, atol=1e-14)
    assert_allclose(localqp.conservative_drift(ea, ou_model, x), ea.A @ g, atol=1e-14)
    assert_allclose(localqp.associated_drift(ea, ou_model, [0.0, 0.0]), [0.0, 0.0])
    mtilde = ea.ep.M - 2.0 * ea.A @ ea.S
    assert_allclose(localqp.associated_drift(ea, ou_model, x), mtilde @ x, atol=1e-12)


def test_consistency_triangle_random(rng):
    for n in range(2, 7):
        for _ in range(5):
            m = random_stable(rng, n)
            d = random_psd(rng, n)
            ea = localqp.analyze_linearization(EquilibriumPoint.from_jacobian(np.zeros(n), m), d)
            assert ea.diagnostics.symmetry <= 1e-9
            s = numkit.norm(ea.S)
            scale = max(1.0, s * numkit.norm(m) + s * s * numkit.norm(d))
            assert ea.diagnostics.riccati <= 1e-9 * scale
            assert_allclose(numkit.inverse(ea.S), ea.Sinv, rtol=1e-7, atol=1e-9)
            assert ea.rank_S == ea.rank_M == n


def test_kramers_degenerate():
    plus = localqp.kramers_phi_pm(2.0, 3.0, 1)
    minus = localqp.kramers_phi_pm(2.0, 3.0, -1)
    assert plus.beta == pytest.approx(2.0 / 3.0)
    assert minus.beta == pytest.approx(1.0 / 3.0)
    assert plus.r_value == pytest.approx(1.0)
    assert minus.r_value == pytest.approx(2.0)
    assert numkit.rank(plus.S_pm) == 1
    assert numkit.rank(minus.S_pm) == 1


def test_kramers_degenerate_flat_and_complex():
    plus = localqp.kramers_phi_pm(0.0, 1.7, 1)
    assert plus.beta == 1.0
    assert plus.r_value == 0.0
    minus = localqp.kramers_phi_pm(0.0, 1.7, -1)
    assert minus.beta == 0.0
    assert minus.r_value == pytest.approx(1.7)
    with pytest.raises(ComplexBeta):
        localqp.kramers_phi_pm(1.0, 1.0, 1)
    with pytest.raises(ValueError):
        localqp.kramers_phi_pm(1.0, 3.0, 0)


def test_degenerate_squared_form():
    deg = localqp.kramers_phi_pm(2.0, 3.0, 1)
    x, v = 0.4, -0.3
    squared = (2.0 / 3.0 * x + deg.beta * v) ** 2 / (2.0 * deg.beta)
    assert deg.phi(x, v) == pytest.approx(squared)
    slope = deg.null_line_slope()
    assert deg.phi(0.5, slope * 0.5) == pytest.approx(0.0, abs=1e-15)


def test_minimum_principle_probe():
    rows = localqp.minimum_principle_probe(2.0, 3.0, localqp.probe_grid(1.0, 5))
    assert len(rows) == 25
    origin = next(r for r in rows if r.x == 0.0 and r.v == 0.0)
    assert origin.phi_eq == origin.phi_plus == origin.phi_minus == 0.0
    assert origin.minimum == "eq"
    assert any(r.phi_plus < r.phi_eq for r in rows)
    assert any(0.0 < r.phi_eq for r in rows)
    assert len({r.minimum for r in rows}) > 1
    assert {r.side_plus for r in rows} >= {-1, 1}


def test_null_line_point_beats_phi_eq():
    deg = localqp.kramers_phi_pm(2.0, 3.0, 1)
    x = 0.5
    (row,) = localqp.minimum_principle_probe(2.0, 3.0, [(x, deg.null_line_slope() * x)])
    assert row.phi_plus == pytest.approx(0.0, abs=1e-15)
    assert row.phi_plus < row.phi_eq
