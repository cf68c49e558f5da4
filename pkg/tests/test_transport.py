import math
from dataclasses import replace

import numpy as np
import pytest

from cellsim.coupled import species_means
from cellsim.electrostatics import solve_equilibrium_pb
from cellsim.hydro import FlowProblem, solve_stokes_brinkman
from cellsim.mesh import CellMesh, ScalarField, VectorField
from cellsim.mms import mms_run
from cellsim.params import DimensionlessParameters
from cellsim.transport import (
    ConcentrationPair,
    TransportError,
    TransportProblem,
    cell_peclet,
    compute_ion_fluxes,
    flux_norms,
    solve_nernst_planck,
)


def params(**kw):
    base = dict(gamma=0.5, delta=0.5, sigma=1.0, Pe=1.0)
    base.update(kw)
    return DimensionlessParameters(**base)


def test_no_driving_terms_keep_uniform_concentration():
    m = CellMesh(0.5, 32, 16)
    c = solve_nernst_planck(TransportProblem(params(), np.zeros(m.shape)), m)
    assert np.max(np.abs(c.plus.values - 1.0)) < 1e-12
    assert np.max(np.abs(c.minus.values - 1.0)) < 1e-12


@pytest.mark.parametrize("sigma,delta", [(1.0, 0.3), (2.0, 1.0), (0.5, 0.1)])
def test_equilibrium_potential_reproduces_boltzmann(sigma, delta):
    p = params(sigma=sigma, delta=delta)
    m = CellMesh(0.5, 48, 24)
    means, eq = species_means(p, m)
    phi, cp, cm = eq.fields(m)
    c = solve_nernst_planck(TransportProblem(p, phi.values, means=means), m)
    assert np.max(np.abs(c.plus.values - cp.values)) <= 1e-6
    assert np.max(np.abs(c.minus.values - cm.values)) <= 1e-6


def test_manufactured_concentration_order():
    table = mms_run("nernst-planck")
    assert table.min_order("c_plus") >= 1.9
    assert table.min_order("c_minus") >= 1.9


def test_uniform_fields_carry_flux_with_the_flow():
    m = CellMesh(0.5, 32, 16)
    U = 0.7
    v = VectorField(m, U * np.cos(m.TH), -U * np.sin(m.TH))
    one = ScalarField(m, np.ones(m.shape))
    j = compute_ion_fluxes(ConcentrationPair(one, one, (1.0, 1.0)), v, np.zeros(m.shape), params())
    for f in (j.plus, j.minus):
        assert np.array_equal(f.vr, v.vr) and np.array_equal(f.vt, v.vt)


def test_equilibrium_fluxes_vanish(solve):
    state = solve(gamma=0.5, delta=0.5, sigma=1.0, U=0.0)
    for value in flux_norms(state.fluxes).values():
        assert value <= 1e-6


def _manufactured(m):
    R, T = m.R, m.TH
    C = 1.0 + 0.1 * R**2 * np.cos(T)
    phi = 0.1 * R * np.cos(T) + 0.05 * R**2
    return C, phi


def test_fluxes_match_independent_evaluation():
    m = CellMesh(0.5, 64, 32)
    p = params(Pe=2.0, nu_plus=1.5, nu_m_plus=3.0)
    C, phi = _manufactured(m)
    v = VectorField(m, 0.3 * np.cos(m.TH), -0.3 * np.sin(m.TH))
    j = compute_ion_fluxes(ConcentrationPair(ScalarField(m, C), ScalarField(m, C), (1.0, 1.0)), v, phi, p)
    # exponentially fitted gradient evaluated with numpy's non-uniform central differences
    u = C * np.exp(phi - phi.mean())
    du_r = np.gradient(u, m.r, axis=0)
    du_t = np.gradient(u, m.theta, axis=1) / m.R
    g_r, g_t = np.exp(-(phi - phi.mean())) * du_r, np.exp(-(phi - phi.mean())) * du_t
    D = np.where(m.R < 1.0, 1.0 / (3.0 * 2.0), 1.0 / (1.5 * 2.0))
    jr = v.vr * C - D * g_r
    jt = v.vt * C - D * g_t
    inner = (slice(1, -1), slice(1, -1))
    assert np.max(np.abs(j.plus.vr[inner] - jr[inner])) < 1e-10
    assert np.max(np.abs(j.plus.vt[inner] - jt[inner])) < 1e-10


def test_fluxes_converge_to_the_exact_formula():
    errs = []
    for n in (32, 64, 128):
        m = CellMesh(0.5, n, n // 2)
        p = params(Pe=1.0)
        C, phi = _manufactured(m)
        R, T = m.R, m.TH
        # analytic grad C + C grad phi for the + species
        dCr, dCt = 0.2 * R * np.cos(T), -0.1 * R * np.sin(T)
        dpr, dpt = 0.1 * np.cos(T) + 0.1 * R, -0.1 * np.sin(T)
        exact_r = -(dCr + C * dpr)
        exact_t = -(dCt + C * dpt)
        j = compute_ion_fluxes(ConcentrationPair(ScalarField(m, C), ScalarField(m, C), (1.0, 1.0)), None, phi, p)
        err = np.sqrt(np.sum(m.weights * ((j.plus.vr - exact_r) ** 2 + (j.plus.vt - exact_t) ** 2)))
        errs.append(err)
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


def test_converged_states_balance_fluxes(solve):
    for kw in (dict(sigma=0.5, delta=0.5), dict(sigma=2.0, delta=0.1), dict(sigma=0.0, delta=1.0)):
        state = solve(gamma=0.5, **kw)
        norms = flux_norms(state.fluxes)
        for name, bal in state.fluxes.balances.items():
            assert bal["inner"] <= 1e-6 * (1 + norms[name])
            assert bal["outer"] <= 1e-6 * (1 + norms[name])


def test_potential_shift_changes_nothing(solve):
    state = solve(gamma=0.5, delta=0.5, sigma=0.5)
    p, m = state.params, state.mesh
    phi = state.phi.values
    prob = TransportProblem.from_flow(p, phi, state.flow, means=state.conc.means)
    shifted = TransportProblem.from_flow(p, phi + 3.0, state.flow, means=state.conc.means)
    a, b = solve_nernst_planck(prob, m), solve_nernst_planck(shifted, m)
    assert np.max(np.abs(a.plus.values - b.plus.values)) < 1e-12
    ja = compute_ion_fluxes(a, state.v, phi, p)
    jb = compute_ion_fluxes(a, state.v, phi + 3.0, p)
    assert np.max(np.abs(ja.plus.vr - jb.plus.vr)) < 1e-13
    assert np.max(np.abs(ja.minus.vt - jb.minus.vt)) < 1e-13


def test_doubling_peclet_halves_the_fluxes(solve):
    state = solve(gamma=0.5, delta=0.5, sigma=0.5)
    p = state.params
    one = compute_ion_fluxes(state.conc, None, state.phi.values, p)
    two = compute_ion_fluxes(state.conc, None, state.phi.values, replace(p, Pe=2 * p.Pe))
    for name, value in flux_norms(one).items():
        assert flux_norms(two)[name] == 0.5 * value
    assert np.array_equal(two.plus.vr, 0.5 * one.plus.vr)


def test_advection_dominated_problem_is_rejected():
    p = params(Pe=1e4)
    m = CellMesh(0.5, 8, 4)
    fl = solve_stokes_brinkman(FlowProblem(p, 1.0), m)
    prob = TransportProblem.from_flow(p, np.zeros(m.shape), fl)
    assert cell_peclet(m, prob) > 20
    with pytest.raises(TransportError, match="refine"):
        solve_nernst_planck(prob, m)
    assert cell_peclet(m, TransportProblem(p, np.zeros(m.shape))) == 0.0


def test_problem_validation():
    m = CellMesh(0.5, 8, 4)
    with pytest.raises(ValueError):
        TransportProblem(params(), np.zeros(m.shape), means=(0.0, 1.0))
