"""Stationary Nernst-Planck transport of the two ion species for frozen (v, phi).

Finite volumes on the box mesh with Scharfetter-Gummel (exponentially fitted)
face fluxes. The advective part uses the exact volumetric face fluxes of the
stream function, so discrete mass conservation of the carrier flow is exact.
Every control volume balance conserves the species; the outer boundary is
mirror-coupled across the equator and the level of each species is fixed by
its cell mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hydro import FlowState, nodal_gradient
from .kernels import bernoulli
from .mesh import CellMesh, ScalarField, VectorField, face_coefficients, volume_norm_l2
from .params import DimensionlessParameters

log = logging.getLogger(__name__)

SPECIES = (("plus", +1), ("minus", -1))


class TransportError(RuntimeError):
    """Nernst-Planck solve rejected (negative concentration or unresolved advection)."""


@dataclass
class TransportProblem:
    """Inputs of one Nernst-Planck solve.

    ``face_flows`` are the volumetric face fluxes ``(q_r, q_t_in, q_t_out,
    q_b)`` of the carrier flow (see :meth:`FlowState.face_fluxes`); ``None``
    means fluid at rest. ``sources`` optionally maps species name to the
    control-volume integrals of div j; ``boundary_outflow`` and
    ``boundary_jump`` carry boundary data (see :func:`solve_nernst_planck`).
    """

    params: DimensionlessParameters
    phi: np.ndarray
    face_flows: tuple | None = None
    means: tuple[float, float] = (1.0, 1.0)
    sources: dict = field(default_factory=dict)
    boundary_outflow: dict = field(default_factory=dict)
    boundary_jump: dict = field(default_factory=dict)
    max_cell_peclet: float = 20.0
    negative_tol: float = 1e-8

    def __post_init__(self):
        if not self.params.Pe > 0:
            raise ValueError("Pe must be > 0")
        if min(self.means) <= 0:
            raise ValueError("prescribed mean concentrations must be positive")

    @classmethod
    def from_flow(cls, params, phi, flow: FlowState | None, **kw) -> "TransportProblem":
        return cls(params, np.asarray(phi, dtype=float),
                   None if flow is None else flow.face_fluxes(), **kw)

    def diffusivity(self, species: int, inner: bool) -> float:
        return 1.0 / (self.params.nu(species, inner) * self.params.Pe)


@dataclass(eq=False)
class ConcentrationPair:
    plus: ScalarField
    minus: ScalarField
    means: tuple[float, float]
    residuals: dict = field(default_factory=dict)
    min_values: dict = field(default_factory=dict)

    def species(self, sign: int) -> ScalarField:
        return self.plus if sign > 0 else self.minus

    def mobile_charge(self, params: DimensionlessParameters) -> np.ndarray:
        return params.Z_plus * self.plus.values - params.Z_minus * self.minus.values


@dataclass
class _Faces:
    """Sparse face list: node pairs, transmissibility T, diffusivity D, flow q."""

    i1: np.ndarray
    i2: np.ndarray
    T: np.ndarray
    D: np.ndarray
    q: np.ndarray
    h: np.ndarray


def _face_list(mesh: CellMesh, problem: TransportProblem, sign: int) -> _Faces:
    tr, tt_in, tt_out = face_coefficients(mesh)
    nr, nt = mesh.shape
    k = mesh.k_if
    idx = np.arange(nr * nt).reshape(nr, nt)
    if problem.face_flows is None:
        q_r = np.zeros_like(tr)
        q_ti = q_to = np.zeros_like(tt_in)
    else:
        q_r, q_ti, q_to, _ = problem.face_flows
    D_in = problem.diffusivity(sign, True)
    D_out = problem.diffusivity(sign, False)
    D_r = np.where(np.arange(nr - 1) < k, D_in, D_out)[:, None] * np.ones_like(tr)
    dr = np.diff(mesh.r)[:, None] * np.ones_like(tr)
    dt = (mesh.r[:, None] * mesh.dtheta) * np.ones_like(tt_in)
    parts = [(idx[:-1], idx[1:], tr, D_r, q_r, dr)]
    for tt, D, q in ((tt_in, D_in, q_ti), (tt_out, D_out, q_to)):
        parts.append((idx[:, :-1], idx[:, 1:], tt, np.full_like(tt, D), q, dt))
    cat = [np.concatenate([p[c].ravel() for p in parts]) for c in range(6)]
    keep = cat[2] > 0
    return _Faces(*(a[keep] for a in cat))


def _sg_coefficients(faces: _Faces, phi_flat: np.ndarray, z: float, backend=None):
    """Flux from node 1 to node 2 is ``a*C1 - c*C2`` (integrated over the face)."""
    P = faces.q / (faces.D * faces.T) - z * (phi_flat[faces.i2] - phi_flat[faces.i1])
    g = faces.D * faces.T
    return g * bernoulli(-P, backend), g * bernoulli(P, backend), P


def _assemble(mesh, faces, a, c):
    n = mesh.nr * (mesh.ntheta + 1)
    i1, i2 = faces.i1, faces.i2
    rows = np.concatenate([i1, i1, i2, i2])
    cols = np.concatenate([i1, i2, i1, i2])
    vals = np.concatenate([a, -c, -a, c])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def cell_peclet(mesh: CellMesh, problem: TransportProblem) -> float:
    """Largest advective face Peclet number |q| h / (D T) over both species."""
    if problem.face_flows is None:
        return 0.0
    worst = 0.0
    for _, sign in SPECIES:
        f = _face_list(mesh, problem, sign)
        worst = max(worst, float(np.max(np.abs(f.q) / (f.D * f.T))))
    return worst


def _mirror_pairs(mesh: CellMesh) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of the outer-boundary node pairs (theta, pi - theta), theta < pi/2."""
    nt = mesh.ntheta + 1
    base = (mesh.nr - 1) * nt
    j = np.arange(mesh.ntheta // 2)
    return base + j, base + mesh.ntheta - j


def solve_nernst_planck(problem: TransportProblem, mesh: CellMesh, backend: str | None = None) -> ConcentrationPair:
    """Solve div j = source for both species with fixed cell means.

    On r = 1/gamma each node is tied to its mirror image across the equator:
    equal concentrations and opposite normal fluxes, so what leaves the cell
    downstream re-enters upstream. The pair's two balances are summed and the
    freed row carries the equality. The resulting operator has a
    one-dimensional kernel, removed by bordering with the mean constraint; the
    system is factorised directly since it is not symmetric.

    ``problem.boundary_outflow[name]`` (per outer node, outward total flux) and
    ``problem.boundary_jump[name]`` (C(theta) - C(pi - theta) per pair) supply
    inhomogeneous boundary data for manufactured solutions.
    """
    prm = problem.params
    pe_cell = cell_peclet(mesh, problem)
    if pe_cell > problem.max_cell_peclet:
        raise TransportError(
            f"advection-dominated transport: cell Peclet number {pe_cell:.3g} exceeds "
            f"{problem.max_cell_peclet:g}; refine the mesh or lower Pe")
    w = mesh.weights.ravel()
    V = w.sum()
    phi = np.asarray(problem.phi, dtype=float).ravel()
    n = w.size
    lo, hi = _mirror_pairs(mesh)
    # row operator: pair balances summed into the lower node, upper row freed
    keep = np.ones(n, bool)
    keep[hi] = False
    fold = sp.identity(n, format="lil")
    fold[lo, hi] = 1.0
    fold = fold.tocsr()[keep]
    jump_rows = sp.csr_matrix((np.concatenate([np.ones(lo.size), -np.ones(lo.size)]),
                               (np.tile(np.arange(lo.size), 2), np.concatenate([lo, hi]))),
                              shape=(lo.size, n))
    out, res, mins = {}, {}, {}
    for (name, sign), mean in zip(SPECIES, problem.means):
        z = sign * (prm.Z_plus if sign > 0 else prm.Z_minus)
        faces = _face_list(mesh, problem, sign)
        a, c, _ = _sg_coefficients(faces, phi, z, backend)
        A = _assemble(mesh, faces, a, c)
        src = np.zeros(n)
        if name in problem.sources:
            src += np.asarray(problem.sources[name], dtype=float).ravel()
        if name in problem.boundary_outflow:
            src[n - mesh.ntheta - 1:] -= np.asarray(problem.boundary_outflow[name], dtype=float)
        jump = np.zeros(lo.size)
        if name in problem.boundary_jump:
            jump += np.asarray(problem.boundary_jump[name], dtype=float)
        scale = float(np.max(A.diagonal()))
        B = sp.vstack([fold @ A, scale * jump_rows]).tocsr()
        border = (fold @ w) * (scale / V)
        M = sp.bmat([[B, sp.csr_matrix(np.append(border, np.zeros(lo.size))[:, None])],
                     [sp.csr_matrix(w[None, :] * (scale / V)), None]], format="csc")
        rhs = np.concatenate([fold @ src, scale * jump, [mean * scale]])
        x = spla.splu(M).solve(rhs)
        C = x[:n]
        r = M @ x - rhs
        ref = abs(B) @ np.abs(C) + np.abs(rhs[:-1])
        res[name] = float(np.max(np.abs(r[:-1]) / np.maximum(ref, 1e-300)))
        mins[name] = float(C.min())
        if C.min() < -problem.negative_tol * max(1.0, abs(mean)):
            raise TransportError(f"negative concentration {C.min():.3e} for species {name}; refine the mesh")
        out[name] = C.reshape(mesh.shape)
    return ConcentrationPair(ScalarField(mesh, out["plus"]), ScalarField(mesh, out["minus"]),
                             tuple(problem.means), res, mins)


# --- fluxes -------------------------------------------------------------------

@dataclass(eq=False)
class FluxField:
    """Nodal ion flux densities plus the conservative face-flux diagnostics.

    ``plus``/``minus`` use the outer diffusivity on the interface row;
    ``plus_inner``/``minus_inner`` hold that row evaluated with the inner one.
    """

    plus: VectorField
    minus: VectorField
    plus_inner: np.ndarray
    minus_inner: np.ndarray
    balances: dict = field(default_factory=dict)

    def species(self, sign: int) -> VectorField:
        return self.plus if sign > 0 else self.minus

    def region_norm_sq(self, sign: int, region: str) -> float:
        v = self.species(sign)
        mesh = v.mesh
        sq = v.vr**2 + v.vt**2
        if region in ("inner", "both"):
            sq_in = sq.copy()
            tr = self.plus_inner if sign > 0 else self.minus_inner
            sq_in[mesh.k_if] = tr[0] ** 2 + tr[1] ** 2
            inner = float(np.sum(mesh.w_in * sq_in))
            if region == "inner":
                return inner
            return inner + float(np.sum(mesh.w_out * sq))
        return float(np.sum(mesh.w_out * sq))


def drift_diffusion_gradient(mesh: CellMesh, C: np.ndarray, phi: np.ndarray, z: float):
    """Nodal ``grad C + z C grad phi`` in the Slotboom form ``e^{-z phi} grad(C e^{z phi})``.

    Second order like the plain form, but zero to round-off on Boltzmann
    profiles, matching the exponentially fitted face fluxes of the solver.
    """
    shift = z * (phi - phi.mean())
    gr, gt = nodal_gradient(mesh, C * np.exp(shift))
    damp = np.exp(-shift)
    return damp * gr, damp * gt


def _pointwise_flux(C, grad, vr, vt, D):
    return (vr * C - D * grad[0], vt * C - D * grad[1])


def compute_ion_fluxes(conc: ConcentrationPair, v: VectorField | None, phi: np.ndarray,
                       params: DimensionlessParameters,
                       face_flows: tuple | None = None) -> FluxField:
    """j = v C - (grad C + z C grad phi) / (nu Pe) with the region's nu.

    When ``face_flows`` are given the conservative Scharfetter-Gummel face
    fluxes are also evaluated and the flux balances through r = 1 and r = 1/gamma
    are attached to ``balances``.
    """
    mesh = conc.plus.mesh
    phi = np.asarray(phi, dtype=float)
    k = mesh.k_if
    vr = np.zeros(mesh.shape) if v is None else v.vr
    vt = np.zeros(mesh.shape) if v is None else v.vt
    inner_rows = (np.arange(mesh.nr) < k)[:, None]
    res, traces, bal = {}, {}, {}
    problem = TransportProblem(params, phi, face_flows)
    for name, sign in SPECIES:
        z = sign * (params.Z_plus if sign > 0 else params.Z_minus)
        C = conc.species(sign).values
        grad = drift_diffusion_gradient(mesh, C, phi, z)
        D_in = problem.diffusivity(sign, True)
        D_out = problem.diffusivity(sign, False)
        D = np.where(inner_rows, D_in, D_out)
        jr, jt = _pointwise_flux(C, grad, vr, vt, D)
        res[name] = VectorField(mesh, jr, jt)
        tr_r, tr_t = _pointwise_flux(C[k], (grad[0][k], grad[1][k]), vr[k], vt[k], D_in)
        traces[name] = np.array([tr_r, tr_t])
        bal[name] = face_flux_balances(mesh, problem, sign, C)
    return FluxField(res["plus"], res["minus"], traces["plus"], traces["minus"], bal)


def face_flux_balances(mesh: CellMesh, problem: TransportProblem, sign: int, C: np.ndarray) -> dict:
    """Net conservative flux through the sphere just inside r = 1 and through r = 1/gamma.

    Returned magnitudes are normalised by the total absolute flux crossing that
    surface (plus a floor of 1), so a balanced state gives values near round-off.
    """
    prm = problem.params
    z = sign * (prm.Z_plus if sign > 0 else prm.Z_minus)
    faces = _face_list(mesh, problem, sign)
    a, c, _ = _sg_coefficients(faces, np.asarray(problem.phi).ravel(), z)
    Cf = C.ravel()
    F = a * Cf[faces.i1] - c * Cf[faces.i2]
    nt = mesh.ntheta + 1
    k = mesh.k_if
    radial = faces.i2 - faces.i1 == nt
    row1 = faces.i1 // nt
    at_if = radial & (row1 == k - 1)
    Fi = F[at_if]
    out = {"inner": float(abs(Fi.sum()) / (1.0 + np.abs(Fi).sum()))}
    # outer boundary: what each boundary control volume does not pass inward leaves through r = b
    net = np.zeros(Cf.size)
    np.add.at(net, faces.i1, F)
    np.add.at(net, faces.i2, -F)
    g = -net[-nt:]
    out["outer"] = float(abs(g.sum()) / (1.0 + np.abs(g).sum()))
    out["outer_flux"] = g
    return out


def boltzmann_residual(mesh: CellMesh, conc: ConcentrationPair, phi: np.ndarray,
                       params: DimensionlessParameters) -> float:
    """Max over faces of |grad C + z C grad phi| in the exponentially fitted form.

    The face value is the Scharfetter-Gummel flux of a pure drift-diffusion
    problem divided by its diffusivity; it vanishes exactly for Boltzmann
    profiles and is what the discrete equations drive to zero.
    """
    problem = TransportProblem(params, np.asarray(phi, dtype=float), None)
    worst = 0.0
    for _, sign in SPECIES:
        z = sign * (params.Z_plus if sign > 0 else params.Z_minus)
        faces = _face_list(mesh, problem, sign)
        a, c, _ = _sg_coefficients(faces, problem.phi.ravel(), z)
        Cf = conc.species(sign).values.ravel()
        flux = (a * Cf[faces.i1] - c * Cf[faces.i2]) / (faces.D * faces.T * faces.h)
        worst = max(worst, float(np.max(np.abs(flux))))
    return worst


def flux_norms(fluxes: FluxField) -> dict:
    return {name: float(np.sqrt(fluxes.region_norm_sq(sign, "both"))) for name, sign in SPECIES}
