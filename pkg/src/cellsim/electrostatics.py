"""Poisson solve for given concentrations and the radial Poisson-Boltzmann equilibrium."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .kernels import LinearSolverError, pcg
from .mesh import CellMesh, ScalarField, face_coefficients, surface_measure
from .params import DimensionlessParameters

log = logging.getLogger(__name__)


class CompatibilityError(ValueError):
    """Net charge is nonzero under all-Neumann boundary conditions."""


_LAPL_CACHE: dict[int, tuple] = {}


def stiffness_matrix(mesh: CellMesh) -> sp.csr_matrix:
    """Symmetric positive semidefinite box-scheme matrix K = -Laplacian (flux form)."""
    hit = _LAPL_CACHE.get(id(mesh))
    if hit is not None and hit[0] is mesh:
        return hit[1]
    tr, tt_in, tt_out = face_coefficients(mesh)
    tt = tt_in + tt_out
    nr, nt = mesh.shape
    idx = np.arange(nr * nt).reshape(nr, nt)
    rows, cols, vals = [], [], []
    for a, b_, t in ((idx[:-1, :], idx[1:, :], tr), (idx[:, :-1], idx[:, 1:], tt)):
        a, b_, t = a.ravel(), b_.ravel(), t.ravel()
        rows += [a, b_, a, b_]
        cols += [b_, a, a, b_]
        vals += [-t, -t, t, t]
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nr * nt, nr * nt))
    K.sum_duplicates()
    _LAPL_CACHE[id(mesh)] = (mesh, K)
    return K


def charge_integrals(mesh: CellMesh, mobile: np.ndarray, sigma: float) -> np.ndarray:
    """Control-volume integrals of Z+C+ - Z-C- - sigma*1_inner."""
    return mobile * mesh.weights - sigma * mesh.w_in


def charge_density_fields(mesh: CellMesh, mobile: np.ndarray, sigma: float):
    """(inner, outer) nodal charge density; they differ only through sigma."""
    return mobile - sigma, mobile


def boundary_mean_gauge(mesh: CellMesh, phi: np.ndarray) -> float:
    """Area-weighted mean of phi over the shell boundary (r = 1 and r = 1/gamma)."""
    s_in = surface_measure(mesh, "inner")
    s_out = surface_measure(mesh, "outer")
    total = np.sum(s_in) + np.sum(s_out)
    return float((np.sum(phi[mesh.k_if] * s_in) + np.sum(phi[-1] * s_out)) / total)


@dataclass
class PoissonProblem:
    delta: float
    mobile: np.ndarray
    sigma: float = 0.0
    outer_bc: str = "neumann"
    extra_source: np.ndarray | None = None
    compat_tol: float = 1e-8

    def source(self, mesh: CellMesh) -> np.ndarray:
        q = charge_integrals(mesh, np.asarray(self.mobile, dtype=float), self.sigma)
        if self.extra_source is not None:
            q = q + self.extra_source
        return q


@dataclass
class PoissonResult:
    phi: ScalarField
    iterations: int
    residual: float
    gauss_defect: float


def solve_poisson(problem: PoissonProblem, mesh: CellMesh, x0: np.ndarray | None = None,
                  rtol: float = 1e-10) -> PoissonResult:
    """Solve delta^2 Lap(phi) = -rho for nodal phi.

    With the default Neumann outer condition the discrete charge must vanish;
    a residual imbalance below ``compat_tol`` (relative) is removed before the
    solve and phi is gauged to zero mean on the shell boundary.
    """
    K = stiffness_matrix(mesh)
    q = problem.source(mesh).ravel()
    d2 = problem.delta**2
    n = q.size
    if problem.outer_bc == "neumann":
        net = q.sum()
        scale = np.abs(q).sum()
        if abs(net) > problem.compat_tol * max(scale, 1e-300) and abs(net) > 1e-300:
            raise CompatibilityError(
                f"compatibility violated: net charge {net:.3e} (relative {net / scale:.3e}) "
                "with Neumann conditions on the whole boundary")
        w = mesh.weights.ravel()
        q = q - net * w / w.sum()
        try:
            phi, it, res = pcg(K, q / d2, x0=None if x0 is None else x0.ravel(), rtol=rtol,
                               nullspace=np.ones(n))
        except LinearSolverError:
            raise
        phi = phi.reshape(mesh.shape)
        phi -= boundary_mean_gauge(mesh, phi)
    elif problem.outer_bc == "dirichlet":
        nt = mesh.ntheta + 1
        bnd = np.arange(n - nt, n)
        keep = np.setdiff1d(np.arange(n), bnd)
        Kr = K[keep][:, keep]
        phi_full = np.zeros(n)
        sol, it, res = pcg(Kr, q[keep] / d2, rtol=rtol)
        phi_full[keep] = sol
        phi = phi_full.reshape(mesh.shape)
    else:
        raise ValueError(f"unknown outer_bc {problem.outer_bc!r}")
    gauss = gauss_balance(mesh, phi, problem)
    return PoissonResult(ScalarField(mesh, phi), it, res, gauss)


def gauss_balance(mesh: CellMesh, phi: np.ndarray, problem: PoissonProblem) -> float:
    """|delta^2 * (outward flux of grad phi) + int rho| over the solved control volumes.

    With Neumann conditions the outward flux is zero and this is the net
    charge seen by the equations; with a Dirichlet outer row the flux through
    the last interior face is used.
    """
    q = problem.source(mesh)
    d2 = problem.delta**2
    if problem.outer_bc == "neumann":
        return abs(float(np.sum(q)))
    tr, _, _ = face_coefficients(mesh)
    flux_out = float(np.sum(tr[-1] * (phi[-1] - phi[-2])))
    return abs(d2 * flux_out + float(np.sum(q[:-1])))


# --- equilibrium -------------------------------------------------------------

@dataclass
class EquilibriumState:
    r: np.ndarray
    phi: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray
    c_inf: tuple[float, float]
    params: DimensionlessParameters
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def fields(self, mesh: CellMesh) -> tuple[ScalarField, ScalarField, ScalarField]:
        bc = lambda a: ScalarField(mesh, np.repeat(a[:, None], mesh.ntheta + 1, axis=1))
        return bc(self.phi), bc(self.c_plus), bc(self.c_minus)

    def mobile_charge(self) -> np.ndarray:
        return self.params.Z_plus * self.c_plus - self.params.Z_minus * self.c_minus


class NewtonDivergence(RuntimeError):
    def __init__(self, state: EquilibriumState):
        super().__init__(state.message)
        self.state = state


def radial_operator(mesh: CellMesh) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """1-D radial stiffness with 4*pi measure, plus inner/outer control volumes."""
    e = mesh.r_edges[1:-1]
    t = 4.0 * np.pi * e**2 / np.diff(mesh.r)
    n = mesh.nr
    main = np.zeros(n)
    main[:-1] += t
    main[1:] += t
    K = sp.diags([main, -t, -t], [0, 1, -1], format="csr")
    return K, 4.0 * np.pi * mesh.r3_in, 4.0 * np.pi * mesh.r3_out


def donnan_potential(params: DimensionlessParameters, c_inf=(1.0, 1.0), fixed: float | None = None) -> float:
    """Potential that makes Z+c+ e^{-Z+ phi} - Z- c- e^{Z- phi} equal the fixed charge."""
    zp, zm = params.Z_plus, params.Z_minus
    cp, cm = c_inf
    sig = params.sigma if fixed is None else fixed
    f = lambda x: zp * cp * np.exp(-zp * x) - zm * cm * np.exp(zm * x) - sig
    lo, hi = -1.0, 1.0
    while f(lo) < 0:
        lo *= 2
    while f(hi) > 0:
        hi *= 2
    return brentq(f, lo, hi, xtol=1e-15, rtol=1e-15)


def solve_equilibrium_pb(params: DimensionlessParameters, mesh: CellMesh,
                         c_inf: tuple[float, float] | None = None, newton_tol: float = 1e-10,
                         max_iter: int = 100, raise_on_failure: bool = False) -> EquilibriumState:
    """Zero-flow, zero-flux equilibrium by damped Newton on the radial PB equation."""
    if c_inf is None:
        c_inf = (params.c_inf_plus, params.c_inf_minus)
    cp, cm = c_inf
    if cp <= 0 or cm <= 0:
        raise ValueError("reservoir concentrations must be positive")
    zp, zm = params.Z_plus, params.Z_minus
    d2 = params.delta**2
    K, v_in, v_out = radial_operator(mesh)
    vol = v_in + v_out

    phi = np.where(mesh.r < 1.0, donnan_potential(params, c_inf), donnan_potential(params, c_inf, 0.0))
    phi[mesh.k_if] = 0.5 * (phi[mesh.k_if - 1] + phi[mesh.k_if + 1])

    def residual(x):
        mob = zp * cp * np.exp(-zp * x) - zm * cm * np.exp(zm * x)
        return d2 * (K @ x) - (mob * vol - params.sigma * v_in)

    def scaled(res):
        return float(np.max(np.abs(res / vol)))

    F = residual(phi)
    hist = [scaled(F)]
    state = EquilibriumState(mesh.r, phi, None, None, c_inf, params)
    it = 0
    while hist[-1] > newton_tol and it < max_iter:
        dmob = zp * zp * cp * np.exp(-zp * phi) + zm * zm * cm * np.exp(zm * phi)
        J = d2 * K + sp.diags(dmob * vol)
        try:
            dphi, _, _ = pcg(J, -F, rtol=1e-13, maxiter=50 * mesh.nr)
        except LinearSolverError:
            dphi = sp.linalg.spsolve(J.tocsc(), -F)
        step = 1.0
        for _ in range(30):
            trial = phi + step * dphi
            Ft = residual(trial)
            if scaled(Ft) < hist[-1] or scaled(Ft) <= newton_tol:
                break
            step *= 0.5
        else:
            state.message = "Newton line search failed; increase damping or refine the mesh"
            break
        phi, F = trial, Ft
        hist.append(scaled(F))
        it += 1
        log.debug("PB Newton %d: residual %.3e (step %.3g)", it, hist[-1], step)

    state.phi = phi
    state.c_plus = cp * np.exp(-zp * phi)
    state.c_minus = cm * np.exp(zm * phi)
    state.iterations = it
    state.residuals = hist
    state.converged = hist[-1] <= newton_tol
    if not state.converged:
        state.message = state.message or f"Newton did not converge in {max_iter} iterations"
        if raise_on_failure:
            raise NewtonDivergence(state)
    return state


def solve_poisson_predicted(params: DimensionlessParameters, mesh: CellMesh, c_plus: np.ndarray,
                            c_minus: np.ndarray, phi_ref: np.ndarray, newton_tol: float = 1e-12,
                            max_iter: int = 50) -> tuple[np.ndarray, int]:
    """Poisson solve with concentrations predicted from the potential change.

    Solves ``delta^2 K phi = w * (Z+ C+ e^{-Z+ dphi} - Z- C- e^{Z- dphi}) - sigma w_in``
    with ``dphi = phi - phi_ref``. At a fixed point ``dphi = 0`` and this is the
    plain Poisson equation for the given concentrations; away from it the
    prediction damps the stiff 1/delta^2 feedback of the outer iteration. The
    Jacobian is symmetric positive definite, so no gauge is needed; the result
    is returned in the shell-boundary gauge together with the Newton count.
    """
    zp, zm = params.Z_plus, params.Z_minus
    d2 = params.delta**2
    K = stiffness_matrix(mesh)
    w = mesh.weights.ravel()
    w_in = mesh.w_in.ravel()
    cp, cm = c_plus.ravel(), c_minus.ravel()
    ref = phi_ref.ravel()
    phi = ref.copy()

    Kabs = abs(K)

    def residual(x):
        d = x - ref
        mob = zp * cp * np.exp(-zp * d) - zm * cm * np.exp(zm * d)
        F = d2 * (K @ x) - (mob * w - params.sigma * w_in)
        # size of the individual terms, to judge the residual against round-off
        size = d2 * (Kabs @ np.abs(x)) + np.abs(mob) * w + params.sigma * w_in
        return F, d, float(np.max(np.abs(F) / np.maximum(size, 1e-300)))

    F, d, norm = residual(phi)
    it = 0
    while norm > newton_tol and it < max_iter:
        dmob = zp * zp * cp * np.exp(-zp * d) + zm * zm * cm * np.exp(zm * d)
        J = d2 * K + sp.diags(dmob * w)
        step_vec, _, _ = pcg(J, -F, rtol=1e-13)
        step = 1.0
        for _ in range(30):
            Ft, dt, nt = residual(phi + step * step_vec)
            if nt < norm or nt <= newton_tol:
                break
            step *= 0.5
        else:
            if norm < 1e3 * newton_tol:
                break  # stagnation at round-off level
            raise NewtonDivergence(EquilibriumState(mesh.r, phi, None, None, (1.0, 1.0), params,
                                                    it, [norm], False, "predicted Poisson line search failed"))
        phi, F, d, norm = phi + step * step_vec, Ft, dt, nt
        it += 1
    phi = phi.reshape(mesh.shape)
    return phi - boundary_mean_gauge(mesh, phi), it
