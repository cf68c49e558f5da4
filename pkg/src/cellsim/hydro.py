"""Stokes (shell) / Brinkman (core) flow by a stream-function mode expansion.

The stream function is expanded as ``psi = sum_n f_n(r) Q_n(theta)`` with
``Q_n`` the Gegenbauer functions C_n^{-1/2}(cos theta). Each radial amplitude
obeys a fourth-order equation, written as the first-order system

    f' = f1,  f1' = g + N f / r^2,  g' = (P + mu_k f1 + r b) / mu,
    P' = N (mu g - mu_k f) / r^2 + N a,

where ``N = n(n-1)``, ``g`` is the E^2 amplitude, ``P = N * (pressure mode)``
and ``a``/``b`` are the body-force amplitudes. The system is discretised with
the trapezoidal rule on a refined radial grid; velocity, tangential stress and
normal stress are matched at r = 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import eval_legendre, lpmv

from .mesh import CellMesh, ScalarField, VectorField, surface_measure
from .params import DimensionlessParameters

log = logging.getLogger(__name__)


class FlowSolverError(RuntimeError):
    pass


class DegeneratePermeability(ValueError):
    pass


# --- angular basis ------------------------------------------------------------

class ThetaBasis:
    """Gegenbauer/Legendre angular functions on a set of polar angles."""

    def __init__(self, theta: np.ndarray, n_max: int):
        self.theta = np.asarray(theta, dtype=float)
        self.n_max = n_max
        x = np.cos(self.theta)
        self.modes = np.arange(2, n_max + 1)
        self.P = np.array([eval_legendre(n - 1, x) for n in range(1, n_max + 1)])  # P_{n-1}, n = 1..
        # Q_n = (P_{n-2} - P_n) / (2n - 1);  Q_n / sin = -P^1_{n-1} / N
        self.Q = np.array([(eval_legendre(n - 2, x) - eval_legendre(n, x)) / (2 * n - 1)
                           for n in self.modes])
        self.Qs = np.array([-lpmv(1, n - 1, x) / (n * (n - 1)) for n in self.modes])
        self.Qs[:, np.isclose(np.sin(self.theta), 0.0, atol=1e-15)] = 0.0

    def mode_index(self, n: int) -> int:
        return n - 2


def _weighted_pinv(basis: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Rows of the returned matrix map samples to weighted least-squares coefficients."""
    w = np.sqrt(weights)
    Bw = basis.T * w[:, None]
    pinv = np.linalg.pinv(Bw, rcond=1e-13)
    return pinv * w[None, :]


# --- problem / state ------------------------------------------------------------

@dataclass
class FlowProblem:
    """Body force on each side of the interface plus the Cunningham speed ``U``.

    ``force_inner``/``force_outer`` are ``(F_r, F_theta)`` nodal arrays (only
    the rows of the respective region are read). ``force_fn`` (optional) is a
    callable ``(region, r, theta) -> (F_r, F_theta)`` evaluated on the refined
    radial grid instead.
    """

    params: DimensionlessParameters
    U: float | None = None
    force_inner: tuple[np.ndarray, np.ndarray] | None = None
    force_outer: tuple[np.ndarray, np.ndarray] | None = None
    force_fn: object | None = None

    def __post_init__(self):
        if self.U is None:
            self.U = self.params.U
        if self.U < 0:
            raise ValueError("U must be >= 0")
        for f in (self.force_inner, self.force_outer):
            if f is not None and not (np.all(np.isfinite(f[0])) and np.all(np.isfinite(f[1]))):
                raise ValueError("body force must be finite")

    @property
    def has_force(self) -> bool:
        if self.force_fn is not None:
            return True
        return any(f is not None and (np.any(f[0]) or np.any(f[1]))
                   for f in (self.force_inner, self.force_outer))


@dataclass
class RadialGrid:
    r_in: np.ndarray
    r_out: np.ndarray
    node_in: np.ndarray   # sub-grid index of mesh rows 0..k_if
    node_out: np.ndarray  # sub-grid index of mesh rows k_if..nr-1
    edge_in: np.ndarray   # sub-grid index of mesh r_edges 1..k_if
    edge_out: np.ndarray  # sub-grid index of mesh r_edges k_if+1..nr


def radial_grid(mesh: CellMesh, refine: int) -> RadialGrid:
    if refine < 2 or refine % 2:
        raise ValueError("refine must be an even integer >= 2")
    k = mesh.k_if
    rin_nodes = mesh.r[: k + 1]
    rout_nodes = mesh.r[k:]

    def sub(nodes):
        t = np.linspace(0.0, 1.0, refine + 1)[:-1]
        pts = (nodes[:-1, None] + np.diff(nodes)[:, None] * t[None, :]).ravel()
        return np.append(pts, nodes[-1])

    r_in, r_out = sub(rin_nodes), sub(rout_nodes)
    r_in[-1] = 1.0
    r_out[0] = 1.0
    node_in = np.arange(k + 1) * refine
    node_out = np.arange(mesh.nr - k) * refine
    edge_in = node_in[:-1] + refine // 2          # edges 1..k
    edge_out = node_out[:-1] + refine // 2        # edges k+1..nr-1
    edge_out = np.append(edge_out, len(r_out) - 1)  # edge nr = b
    return RadialGrid(r_in, r_out, node_in, node_out, edge_in, edge_out)


@dataclass
class ModeSolution:
    """Radial amplitudes (f, f', g, P) for every mode on each side of r = 1."""

    modes: np.ndarray
    Y_in: np.ndarray    # (n_modes, 4, len(r_in))
    Y_out: np.ndarray   # (n_modes, 4, len(r_out))
    pi1_in: np.ndarray  # spherically symmetric pressure part
    pi1_out: np.ndarray


@dataclass(eq=False)
class FlowState:
    mesh: CellMesh
    params: DimensionlessParameters
    U: float
    grid: RadialGrid
    basis: ThetaBasis
    sol: ModeSolution
    psi: ScalarField
    omega: ScalarField
    v: VectorField
    p: ScalarField
    psi_corners: np.ndarray  # psi at (r_edges, theta_edges)
    psi_if_edges: np.ndarray  # psi at (r = 1, theta_edges)
    converged: bool = True
    residual: float = 0.0
    info: dict = field(default_factory=dict)

    def face_fluxes(self):
        """Volumetric fluxes through control-volume faces, exact in psi.

        Returns ``(q_r, q_t_in, q_t_out, q_b)``: ``q_r[k, j]`` is the flux from
        node (k, j) to (k+1, j); ``q_t_*[k, j]`` from (k, j) to (k, j+1) split by
        region; ``q_b[j]`` the outward flux through r = 1/gamma.
        """
        m = self.mesh
        pc = self.psi_corners
        two_pi = 2.0 * np.pi
        q_r = two_pi * (pc[1:-1, 1:] - pc[1:-1, :-1])
        q_b = two_pi * (pc[-1, 1:] - pc[-1, :-1])
        th = pc[:, 1:-1]  # psi at interior theta edges
        q_t = -two_pi * (th[1:] - th[:-1])
        k = m.k_if
        q_t_in = np.zeros_like(q_t)
        q_t_out = np.zeros_like(q_t)
        q_t_in[:k] = q_t[:k]
        q_t_out[k + 1:] = q_t[k + 1:]
        psi1 = self.psi_if_edges[1:-1]
        q_t_in[k] = -two_pi * (psi1 - th[k])
        q_t_out[k] = -two_pi * (th[k + 1] - psi1)
        return q_r, q_t_in, q_t_out, q_b

    def divergence(self) -> np.ndarray:
        """Net outflow of each control volume divided by its volume."""
        m = self.mesh
        q_r, q_t_in, q_t_out, q_b = self.face_fluxes()
        q_t = q_t_in + q_t_out
        net = np.zeros(m.shape)
        net[:-1] += q_r
        net[1:] -= q_r
        net[-1] += q_b
        net[:, :-1] += q_t
        net[:, 1:] -= q_t
        return net / m.weights


# --- the solver -----------------------------------------------------------------

def _regular_start(n: int, r0: float, s: float, mu: float, mu_k: float):
    """Normalised state vectors of the two solutions regular at r = 0."""
    N = n * (n - 1)
    ya = np.array([1.0, n / r0, 0.0, -mu_k * n / r0])
    if s > 0:
        ratio = _bessel_ratio(n - 0.5, s * r0)
        d = n / r0 + s * ratio
        yb = np.array([1.0, d, s * s, (mu * s * s - mu_k) * d])
    else:
        yb = np.array([1.0, (n + 2) / r0, (4 * n + 2) / r0**2, mu * n * (4 * n + 2) / r0**3])
    del N
    return ya, yb


def _bessel_ratio(nu: float, x: float, depth: int = 400) -> float:
    """I_{nu+1}(x) / I_nu(x) by backward continued fraction."""
    ratio = 0.0
    for k in range(depth, -1, -1):
        ratio = x / (2.0 * (nu + k + 1) + x * ratio)
    return ratio


def _system_matrices(n: int, r: np.ndarray, mu: float, mu_k: float):
    N = n * (n - 1)
    A = np.zeros((r.size, 4, 4))
    A[:, 0, 1] = 1.0
    A[:, 1, 0] = N / r**2
    A[:, 1, 2] = 1.0
    A[:, 2, 1] = mu_k / mu
    A[:, 2, 3] = 1.0 / mu
    A[:, 3, 0] = -N * mu_k / r**2
    A[:, 3, 2] = N * mu / r**2
    return A


def _trapezoid_blocks(r, A, c, row0, col0):
    """COO triplets and rhs for the trapezoid equations of one region."""
    h = np.diff(r)
    I = np.eye(4)
    left = -(I[None] + 0.5 * h[:, None, None] * A[:-1])
    right = I[None] - 0.5 * h[:, None, None] * A[1:]
    m = h.size
    ii = row0 + 4 * np.arange(m)[:, None, None] + np.arange(4)[None, :, None]
    jl = col0 + 4 * np.arange(m)[:, None, None] + np.arange(4)[None, None, :]
    ii = np.broadcast_to(ii, (m, 4, 4))
    jl = np.broadcast_to(jl, (m, 4, 4))
    jr = jl + 4
    rows = np.concatenate([ii.ravel(), ii.ravel()])
    cols = np.concatenate([jl.ravel(), jr.ravel()])
    vals = np.concatenate([left.ravel(), right.ravel()])
    rhs = (0.5 * h[:, None] * (c[:-1] + c[1:])).ravel()
    return rows, cols, vals, rhs


def solve_mode(n: int, grid: RadialGrid, mu_in: float, mu_k_in: float, s_in: float,
               a_in, b_in, a_out, b_out, f_b: float, df_b: float):
    """Solve the radial system of one mode; returns (Y_in, Y_out, residual)."""
    N = n * (n - 1)
    ri, ro = grid.r_in, grid.r_out
    ni, no = ri.size, ro.size
    A_in = _system_matrices(n, ri, mu_in, mu_k_in)
    A_out = _system_matrices(n, ro, 1.0, 0.0)
    c_in = np.zeros((ni, 4))
    c_in[:, 2] = ri * b_in / mu_in
    c_in[:, 3] = N * a_in
    c_out = np.zeros((no, 4))
    c_out[:, 2] = ro * b_out
    c_out[:, 3] = N * a_out

    n_unk = 4 * ni + 4 * no + 2
    col_out = 4 * ni
    col_ab = n_unk - 2
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_unk)

    ya, yb = _regular_start(n, ri[0], s_in, mu_in, mu_k_in)
    for q in range(4):
        rows += [q, q, q]
        cols += [q, col_ab, col_ab + 1]
        vals += [1.0, -ya[q], -yb[q]]
    row = 4
    r_, c_, v_, b_ = _trapezoid_blocks(ri, A_in, c_in, row, 0)
    rows.append(r_); cols.append(c_); vals.append(v_); rhs[row:row + b_.size] = b_
    row += b_.size
    # interface: f, f', tangential stress, normal stress
    iI = 4 * (ni - 1)
    iO = col_out
    mu_o = 1.0
    coupling = [
        ({iO: 1.0}, {iI: 1.0}),
        ({iO + 1: 1.0}, {iI + 1: 1.0}),
        ({iO + 2: mu_o, iO: 2 * N * mu_o, iO + 1: -2 * mu_o},
         {iI + 2: mu_in, iI: 2 * N * mu_in, iI + 1: -2 * mu_in}),
        ({iO + 3: -1.0 / N, iO + 1: 2 * mu_o, iO: -4 * mu_o},
         {iI + 3: -1.0 / N, iI + 1: 2 * mu_in, iI: -4 * mu_in}),
    ]
    for outer, inner in coupling:
        for col, val in outer.items():
            rows.append(row); cols.append(col); vals.append(val)
        for col, val in inner.items():
            rows.append(row); cols.append(col); vals.append(-val)
        row += 1
    r_, c_, v_, b_ = _trapezoid_blocks(ro, A_out, c_out, row, col_out)
    rows.append(r_); cols.append(c_); vals.append(v_); rhs[row:row + b_.size] = b_
    row += b_.size
    last = col_out + 4 * (no - 1)
    rows += [row, row + 1]
    cols += [last, last + 1]
    vals += [1.0, 1.0]
    rhs[row] = f_b
    rhs[row + 1] = df_b
    row += 2
    assert row == n_unk

    flat = lambda seq: np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in seq])
    M = sp.csc_matrix((flat(vals), (flat(rows).astype(int), flat(cols).astype(int))), shape=(n_unk, n_unk))
    lu = spla.splu(M)
    x = lu.solve(rhs)
    res = float(np.linalg.norm(M @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    Y_in = x[: 4 * ni].reshape(ni, 4).T
    Y_out = x[col_out: col_out + 4 * no].reshape(no, 4).T
    return Y_in, Y_out, res


def _interp_rows(mesh_r: np.ndarray, values: np.ndarray, r_sub: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``values`` (rows x modes) onto ``r_sub``."""
    out = np.empty((r_sub.size, values.shape[1]))
    for q in range(values.shape[1]):
        out[:, q] = np.interp(r_sub, mesh_r, values[:, q])
    return out


def default_modes(mesh: CellMesh) -> int:
    return mesh.ntheta // 2 + 1


def solve_stokes_brinkman(problem: FlowProblem, mesh: CellMesh, refine: int = 4,
                          n_max: int | None = None) -> FlowState:
    """Solve the Stokes/Brinkman system; see the module docstring for the formulation."""
    prm = problem.params
    U = float(problem.U)
    n_max = default_modes(mesh) if n_max is None else n_max
    grid = radial_grid(mesh, refine)
    basis = ThetaBasis(mesh.theta, n_max)
    k = mesh.k_if
    modes = basis.modes
    nm = modes.size

    # project body forces on the angular basis
    P_pinv = _weighted_pinv(basis.P, mesh.S)   # coefficients a_1..a_nmax
    Q_pinv = _weighted_pinv(basis.Qs, mesh.S)  # coefficients b_2..b_nmax

    def project(side: str):
        r_sub = grid.r_in if side == "inner" else grid.r_out
        if problem.force_fn is not None:
            Fr, Ft = problem.force_fn(side, r_sub[:, None], mesh.theta[None, :])
            Fr = np.broadcast_to(Fr, (r_sub.size, mesh.theta.size))
            Ft = np.broadcast_to(Ft, (r_sub.size, mesh.theta.size))
            return Fr @ P_pinv.T, Ft @ Q_pinv.T
        force = problem.force_inner if side == "inner" else problem.force_outer
        rows = mesh.inner_rows() if side == "inner" else mesh.outer_rows()
        if force is None:
            return np.zeros((r_sub.size, n_max)), np.zeros((r_sub.size, nm))
        a_nodes = np.asarray(force[0])[rows] @ P_pinv.T
        b_nodes = np.asarray(force[1])[rows] @ Q_pinv.T
        r_nodes = mesh.r[rows]
        return _interp_rows(r_nodes, a_nodes, r_sub), _interp_rows(r_nodes, b_nodes, r_sub)

    a_in, b_in = project("inner")
    a_out, b_out = project("outer")
    # body force as represented by the mode expansion, at the mesh nodes
    projected = {}
    for side, a_sub, b_sub, r_sub in (("inner", a_in, b_in, grid.r_in), ("outer", a_out, b_out, grid.r_out)):
        rows = mesh.inner_rows() if side == "inner" else mesh.outer_rows()
        a_nodes = _interp_rows(r_sub, a_sub, mesh.r[rows])
        b_nodes = _interp_rows(r_sub, b_sub, mesh.r[rows])
        Fr = np.zeros(mesh.shape)
        Ft = np.zeros(mesh.shape)
        Fr[rows] = a_nodes @ basis.P
        Ft[rows] = b_nodes @ basis.Qs
        projected[side] = (Fr, Ft)

    Y_in = np.zeros((nm, 4, grid.r_in.size))
    Y_out = np.zeros((nm, 4, grid.r_out.size))
    worst = 0.0
    if U != 0.0 or problem.has_force:
        b = mesh.b
        for i, n in enumerate(modes):
            f_b, df_b = (U * b * b, 2.0 * U * b) if n == 2 else (0.0, 0.0)
            an_in, an_out = a_in[:, n - 1], a_out[:, n - 1]
            bn_in, bn_out = b_in[:, i], b_out[:, i]
            if f_b == 0.0 and not (np.any(an_in) or np.any(an_out) or np.any(bn_in) or np.any(bn_out)):
                continue
            yi, yo, res = solve_mode(n, grid, prm.m, prm.drag, prm.s, an_in, bn_in, an_out, bn_out, f_b, df_b)
            Y_in[i], Y_out[i] = yi, yo
            worst = max(worst, res)
    # spherically symmetric pressure: pi1' = a_1, continuous across r = 1
    pi1_in = _cumtrapz(grid.r_in, a_in[:, 0])
    pi1_out = pi1_in[-1] + _cumtrapz(grid.r_out, a_out[:, 0])
    sol = ModeSolution(modes, Y_in, Y_out, pi1_in, pi1_out)
    state = _assemble_state(mesh, prm, U, grid, basis, sol)
    state.residual = worst
    state.converged = worst < 1e-8
    state.info["force_projected"] = projected
    if not state.converged:
        log.warning("flow mode solve residual %.3e", worst)
    return state


def _cumtrapz(x, y):
    out = np.zeros_like(x)
    out[1:] = np.cumsum(0.5 * np.diff(x) * (y[1:] + y[:-1]))
    return out


def _assemble_state(mesh, prm, U, grid, basis, sol) -> FlowState:
    k = mesh.k_if
    nm = sol.modes.size
    N = (sol.modes * (sol.modes - 1)).astype(float)

    def side_rows(Y, idx):
        return Y[:, :, idx]  # (nm, 4, rows)

    yi = side_rows(sol.Y_in, grid.node_in)
    yo = side_rows(sol.Y_out, grid.node_out)
    # nodal amplitudes: inner rows 0..k (inner side at k), outer rows k..nr-1
    Y = np.concatenate([yi[:, :, :k], yo], axis=2)  # (nm, 4, nr)
    pi1 = np.concatenate([sol.pi1_in[grid.node_in][:k], sol.pi1_out[grid.node_out]])
    r = mesh.r
    f, f1, g, P = Y[:, 0], Y[:, 1], Y[:, 2], Y[:, 3]
    Q, Qs, Pl = basis.Q, basis.Qs, basis.P[1:]
    psi = np.einsum("mk,mj->kj", f, Q)
    vr = np.einsum("mk,mj->kj", f, Pl) / r[:, None] ** 2
    vt = -np.einsum("mk,mj->kj", f1, Qs) / r[:, None]
    omega = -np.einsum("mk,mj->kj", g, Qs) / r[:, None]
    p = pi1[:, None] + np.einsum("mk,mj->kj", P / N[:, None], Pl)
    p_in_trace = sol.pi1_in[-1] + np.einsum("m,mj->j", yi[:, 3, k] / N, Pl)

    # pressure gauge: zero mean over the shell boundary (outer side of r = 1, and r = 1/gamma)
    s_in, s_out = surface_measure(mesh, "inner"), surface_measure(mesh, "outer")
    mean = (np.sum(p[k] * s_in) + np.sum(p[-1] * s_out)) / (np.sum(s_in) + np.sum(s_out))
    p -= mean
    p_in_trace = p_in_trace - mean

    # psi on control-volume corners
    tb = ThetaBasis(mesh.theta_edges, basis.n_max)
    f_edges = np.zeros((nm, mesh.nr + 1))
    f_edges[:, 1:k + 1] = sol.Y_in[:, 0, grid.edge_in]
    f_edges[:, k + 1:] = sol.Y_out[:, 0, grid.edge_out]
    psi_c = np.einsum("me,mj->ej", f_edges, tb.Q)
    psi_if = np.einsum("m,mj->j", sol.Y_in[:, 0, -1], tb.Q)
    # exact boundary values (uniform stream at r = 1/gamma, zero on the axis)
    psi_c[:, 0] = 0.0
    psi_c[:, -1] = 0.0
    psi_if[[0, -1]] = 0.0

    return FlowState(
        mesh=mesh, params=prm, U=U, grid=grid, basis=basis, sol=sol,
        psi=ScalarField(mesh, psi), omega=ScalarField(mesh, omega),
        v=VectorField(mesh, vr, vt), p=ScalarField(mesh, p, inner_trace=p_in_trace),
        psi_corners=psi_c, psi_if_edges=psi_if,
    )


# --- traction and permeability -------------------------------------------------

@dataclass
class TractionResult:
    theta: np.ndarray
    normal: np.ndarray       # Sigma.n radial component (half rate-of-strain stress)
    tangential: np.ndarray   # Sigma.n theta component (half rate-of-strain stress)
    F_z: float               # force from Sigma = p I - 1/2 (grad v + grad v^T), n outward of the shell
    F_transverse: float
    F_z_conventional: float  # force from -p I + (grad v + grad v^T) on the core
    grad_p: float
    V_cell: float
    U: float

    @property
    def L11(self) -> float:
        return compute_permeability(self, self.U)


def surface_stress_amplitudes(state: FlowState):
    """(p, dv_r/dr, tau_rtheta) on the outer side of r = 1 at the mesh theta nodes."""
    sol, basis = state.sol, state.basis
    N = (sol.modes * (sol.modes - 1)).astype(float)
    f, f1, g, _ = sol.Y_out[:, :, 0].T
    p = state.p.values[state.mesh.k_if]
    dvr = np.einsum("m,mj->j", f1 - 2 * f, basis.P[1:])
    tau = -np.einsum("m,mj->j", g + 2 * N * f - 2 * f1, basis.Qs)
    return p, dvr, tau


def compute_traction(state: FlowState, mesh: CellMesh | None = None,
                     params: DimensionlessParameters | None = None) -> TractionResult:
    if not state.converged:
        raise FlowSolverError("refusing to compute traction of a non-converged flow state")
    mesh = state.mesh if mesh is None else mesh
    p, dvr, tau = surface_stress_amplitudes(state)
    th = mesh.theta
    dS = surface_measure(mesh, "inner")
    normal = -p + dvr
    tangential = 0.5 * tau
    Fz = float(np.sum((normal * np.cos(th) - tangential * np.sin(th)) * dS))
    Fz_conv = float(np.sum(((-p + 2 * dvr) * np.cos(th) - tau * np.sin(th)) * dS))
    V = mesh.cell_volume
    return TractionResult(th, normal, tangential, Fz, 0.0, Fz_conv, -Fz / V, V, state.U)


def compute_permeability(traction: TractionResult, U: float, conventional: bool = False) -> float:
    """L11 = -U / grad p with grad p = -F_z / V_cell."""
    if not U > 0:
        raise ValueError("permeability needs U > 0")
    F = traction.F_z_conventional if conventional else traction.F_z
    if F == 0.0:
        raise DegeneratePermeability("degenerate permeability (no obstacle): F_z = 0")
    return U * traction.V_cell / F


# --- auxiliary fields -------------------------------------------------------------

def zero_flow(mesh: CellMesh, params: DimensionlessParameters, refine: int = 4) -> FlowState:
    return solve_stokes_brinkman(FlowProblem(params, U=0.0), mesh, refine=refine)


def electric_body_force(mesh: CellMesh, phi: np.ndarray, mobile: np.ndarray, sigma: float):
    """Phi = -rho grad(phi) on each side (rho includes -sigma in the core)."""
    dr, dt = nodal_gradient(mesh, phi)
    rho_in, rho_out = mobile - sigma, mobile
    return (-rho_in * dr, -rho_in * dt), (-rho_out * dr, -rho_out * dt)


def nodal_gradient(mesh: CellMesh, f: np.ndarray):
    """(df/dr, (1/r) df/dtheta) at nodes; second order on the non-uniform radial grid."""
    r = mesh.r
    dr = np.empty_like(f)
    h1 = np.diff(r)[:-1][:, None]
    h2 = np.diff(r)[1:][:, None]
    fm, f0, fp = f[:-2], f[1:-1], f[2:]
    dr[1:-1] = (h1**2 * fp - h2**2 * fm + (h2**2 - h1**2) * f0) / (h1 * h2 * (h1 + h2))
    # regularity at the centre: mirror node at -r0 carries f[0]
    dr[0] = (f[1] - f[0]) / (r[1] + r[0])
    ha, hb = r[-1] - r[-2], r[-2] - r[-3]
    dr[-1] = ((2 * ha + hb) / (ha * (ha + hb))) * f[-1] - ((ha + hb) / (ha * hb)) * f[-2] + (ha / (hb * (ha + hb))) * f[-3]
    dt = np.zeros_like(f)
    dt[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * mesh.dtheta)
    return dr, dt / r[:, None]


def stokes_extensions(state: FlowState):
    """Divergence-free zero-force Stokes extensions of the boundary data.

    ``U_i`` lives in the core with the trace of v on r = 1; ``U_o`` in the
    shell with U on r = 1/gamma and the trace of v on r = 1. Built mode by mode
    from the homogeneous Stokes solutions r^{n+2}, r^n, r^{3-n}, r^{1-n}.
    """
    mesh, sol, basis = state.mesh, state.sol, state.basis
    r = mesh.r
    k = mesh.k_if
    b = mesh.b
    nm = sol.modes.size
    fi = np.zeros((nm, mesh.nr))
    dfi = np.zeros((nm, mesh.nr))
    fo = np.zeros((nm, mesh.nr))
    dfo = np.zeros((nm, mesh.nr))
    ri = r[: k + 1]
    ro = r[k:]
    for i, n in enumerate(sol.modes):
        f1, d1 = sol.Y_out[i, 0, 0], sol.Y_out[i, 1, 0]
        fb, db = sol.Y_out[i, 0, -1], sol.Y_out[i, 1, -1]
        # core: A r^n + B r^{n+2}
        A, B = np.linalg.solve([[1.0, 1.0], [n, n + 2]], [f1, d1])
        fi[i, : k + 1] = A * ri**n + B * ri ** (n + 2)
        dfi[i, : k + 1] = A * n * ri ** (n - 1) + B * (n + 2) * ri ** (n + 1)
        ex = np.array([n + 2, n, 3 - n, 1 - n], dtype=float)
        M = np.array([np.ones(4), ex, b**ex, ex * b ** (ex - 1)])
        c = np.linalg.solve(M, [f1, d1, fb, db])
        fo[i, k:] = np.sum(c[:, None] * ro[None, :] ** ex[:, None], axis=0)
        dfo[i, k:] = np.sum((c * ex)[:, None] * ro[None, :] ** (ex[:, None] - 1), axis=0)

    def vec(fv, dfv, rows):
        vr = np.einsum("mk,mj->kj", fv, basis.P[1:]) / r[:, None] ** 2
        vt = -np.einsum("mk,mj->kj", dfv, basis.Qs) / r[:, None]
        mask = np.zeros(mesh.nr, bool)
        mask[rows] = True
        vr[~mask] = 0.0
        vt[~mask] = 0.0
        return VectorField(mesh, vr, vt)

    return vec(fi, dfi, mesh.inner_rows()), vec(fo, dfo, mesh.outer_rows())
