import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from cellsim.electrostatics import (
    CompatibilityError,
    NewtonDivergence,
    PoissonProblem,
    boundary_mean_gauge,
    donnan_potential,
    solve_equilibrium_pb,
    solve_poisson,
)
from cellsim.mesh import CellMesh, ScalarField, integrate
from cellsim.params import DimensionlessParameters
from cellsim.transport import ConcentrationPair, boltzmann_residual

from oracles import linear_pb, radial_poisson


def test_zero_source_gives_zero_potential():
    m = CellMesh(0.5, 32, 16)
    res = solve_poisson(PoissonProblem(1.0, np.zeros(m.shape)), m)
    assert np.all(res.phi.values == 0.0)


def test_two_region_radial_potential_matches_ode_integration():
    m = CellMesh(0.5, 128, 64)
    # rho = 1 in the core, -1/7 in the shell: zero net charge for gamma = 1/2
    res = solve_poisson(PoissonProblem(1.0, np.full(m.shape, -1.0 / 7.0), sigma=-8.0 / 7.0), m)
    ref = radial_poisson(0.5, 1.0, 1.0, -1.0 / 7.0, m.r)
    phi = res.phi.values
    assert np.max(np.abs(phi - phi[:, :1])) < 1e-10  # radial
    assert np.max(np.abs(phi[:, 0] - ref)) <= 1e-3 * np.max(np.abs(ref))
    assert res.gauss_defect < 1e-12


def test_uncompensated_core_charge_is_incompatible():
    m = CellMesh(0.5, 16, 8)
    with pytest.raises(CompatibilityError, match="compatibility violated"):
        solve_poisson(PoissonProblem(1.0, np.zeros(m.shape), sigma=1.0), m)


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(0.05, 10.0), a=st.floats(-2, 2), b=st.floats(-2, 2), gamma=st.floats(0.2, 0.8))
def test_gauss_balance_and_gauge_for_balanced_charge(delta, a, b, gamma):
    m = CellMesh(gamma, 24, 12)
    rho = a * np.cos(m.TH) + b * (m.R**2 - 1.0)
    rho = rho - integrate(m, rho) / m.weights.sum()  # volume balanced
    res = solve_poisson(PoissonProblem(delta, rho), m)
    scale = np.sqrt(integrate(m, rho**2))
    assert res.gauss_defect <= 1e-6 * (1 + scale)
    assert abs(boundary_mean_gauge(m, res.phi.values)) <= 1e-12 * (1 + np.abs(res.phi.values).max())


def test_dirichlet_outer_condition():
    m = CellMesh(0.5, 32, 16)
    res = solve_poisson(PoissonProblem(1.0, np.zeros(m.shape), sigma=1.0, outer_bc="dirichlet"), m)
    assert np.all(res.phi.values[-1] == 0.0)
    assert np.all(res.phi.values[0] < 0)
    assert res.gauss_defect < 1e-8


def test_initial_guess_changes_nothing_but_iterations():
    m = CellMesh(0.5, 32, 16)
    rho = np.cos(m.TH)
    one = solve_poisson(PoissonProblem(0.7, rho), m).phi.values
    two = solve_poisson(PoissonProblem(0.7, rho), m, x0=np.full(m.shape, 3.0)).phi.values
    assert np.allclose(one, two, atol=1e-8 * np.abs(one).max())


# --- equilibrium ------------------------------------------------------------------------

def test_uncharged_equilibrium_is_trivial():
    e = solve_equilibrium_pb(DimensionlessParameters(gamma=0.5, delta=1.0, sigma=0.0), CellMesh(0.5, 32, 16))
    assert e.converged
    assert np.all(e.phi == 0.0) and np.all(e.c_plus == 1.0) and np.all(e.c_minus == 1.0)


def test_donnan_plateau_at_thin_double_layer():
    expected = brentq(lambda x: 2 * np.sinh(-x) - 1.0, -5, 5, xtol=1e-15)
    assert expected == pytest.approx(-np.arcsinh(0.5), rel=1e-14)
    p = DimensionlessParameters(gamma=0.5, delta=0.01, sigma=1.0)
    e = solve_equilibrium_pb(p, CellMesh(0.5, 64, 32))
    assert e.phi[0] == pytest.approx(expected, rel=1e-6)
    assert donnan_potential(p) == pytest.approx(expected, rel=1e-13)


def test_linear_response_matches_bessel_solution():
    p = DimensionlessParameters(gamma=0.5, delta=0.3, sigma=0.01)
    m = CellMesh(0.5, 128, 64)
    e = solve_equilibrium_pb(p, m)
    ref = linear_pb(0.5, 0.3, 0.01, m.r)
    assert np.max(np.abs(e.phi - ref)) <= 0.01 * np.max(np.abs(ref))


@pytest.mark.parametrize("sigma,delta,gamma", [(1.0, 0.3, 0.5), (5.0, 0.1, 0.3), (0.5, 2.0, 0.8)])
def test_equilibrium_is_zero_flux_and_positive(sigma, delta, gamma):
    p = DimensionlessParameters(gamma=gamma, delta=delta, sigma=sigma)
    m = CellMesh(gamma, 48, 24)
    e = solve_equilibrium_pb(p, m)
    phi, cp, cm = e.fields(m)
    conc = ConcentrationPair(cp, cm, (1.0, 1.0))
    assert boltzmann_residual(m, conc, phi.values, p) <= 1e-8
    assert e.c_plus.min() > 0 and e.c_minus.min() > 0


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0, 2.0, 10.0])
@pytest.mark.parametrize("sigma", [0.5, 2.0])
def test_screening_is_monotone_in_the_shell(gamma, delta, sigma):
    m = CellMesh(gamma, 64, 32)
    e = solve_equilibrium_pb(DimensionlessParameters(gamma=gamma, delta=delta, sigma=sigma), m)
    shell = np.abs(e.phi[m.k_if:])
    assert np.all(np.diff(shell) <= 1e-14 * shell.max())


@pytest.mark.parametrize("sigma,delta", [(1.0, 0.3), (5.0, 0.1), (2.0, 1.0), (10.0, 0.05)])
def test_newton_tail_is_quadratic(sigma, delta):
    e = solve_equilibrium_pb(DimensionlessParameters(gamma=0.5, delta=delta, sigma=sigma), CellMesh(0.5, 64, 32))
    res = e.residuals
    pairs = [(a, b) for a, b in zip(res[:-1], res[1:]) if a < 1e-3 and b > 1e-12]
    assert all(b <= 10.0 * a * a for a, b in pairs)


def test_newton_failure_is_reported():
    p = DimensionlessParameters(gamma=0.5, delta=0.1, sigma=5.0)
    e = solve_equilibrium_pb(p, CellMesh(0.5, 32, 16), max_iter=1)
    assert not e.converged and e.message
    with pytest.raises(NewtonDivergence):
        solve_equilibrium_pb(p, CellMesh(0.5, 32, 16), max_iter=1, raise_on_failure=True)
    with pytest.raises(ValueError):
        solve_equilibrium_pb(p, CellMesh(0.5, 32, 16), c_inf=(0.0, 1.0))
