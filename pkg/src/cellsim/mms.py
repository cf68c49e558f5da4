"""Manufactured-solution and exact-solution convergence studies.

Each case prescribes smooth fields, turns the residual they leave in the
continuous equations into exact control-volume source integrals (Gauss
quadrature of the flux through every control-volume face), solves on a
sequence of meshes and reports L2 errors and observed orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_in

from .electrostatics import PoissonProblem, boundary_mean_gauge, solve_poisson
from .hydro import FlowProblem, electric_body_force, solve_stokes_brinkman
from .mesh import CellMesh
from .params import DimensionlessParameters
from .transport import SPECIES, TransportProblem, solve_nernst_planck

DEFAULT_LEVELS = ((32, 16), (64, 32), (128, 64))

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


class UnknownCase(KeyError):
    pass


@dataclass
class ConvergenceTable:
    case: str
    meshes: list[dict]
    errors: dict[str, list[float]]
    exact: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def orders(self) -> dict[str, list[float]]:
        h = [m["h"] for m in self.meshes]
        out = {}
        for name, e in self.errors.items():
            out[name] = [math.log(e[i] / e[i + 1]) / math.log(h[i] / h[i + 1])
                         if e[i] > 0 and e[i + 1] > 0 else math.nan for i in range(len(e) - 1)]
        return out

    def min_order(self, name: str) -> float:
        return min(self.orders[name])

    def to_json(self) -> dict:
        return {"case": self.case, "meshes": self.meshes, "errors": self.errors,
                "orders": self.orders, "exact": self.exact, "notes": self.notes}


# --- exact control-volume integrals -----------------------------------------------

def _segments(a: float, b: float, split: float | None = None):
    if split is not None and a < split < b:
        return [(a, split), (split, b)]
    return [(a, b)]


def _gauss(fn, a: float, b: float) -> float:
    x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.dot(_GL_W, fn(x)))


def control_volume_outflow(mesh: CellMesh, flux) -> tuple[np.ndarray, np.ndarray]:
    """Outward flux of ``flux(r, theta) -> (F_r, F_theta)`` through each control volume.

    Returns ``(net, boundary)``: ``net[k, j]`` is the total outflow of control
    volume (k, j), i.e. the integral of div F over it; ``boundary[j]`` the part
    leaving through r = 1/gamma. Radial segments are split at r = 1.
    """
    nr, nt = mesh.shape
    re, te = mesh.r_edges, mesh.theta_edges
    two_pi = 2.0 * np.pi
    # through spheres r = re[k], k = 1..nr, over each theta interval
    radial = np.zeros((nr, nt))
    for k in range(1, nr + 1):
        e = re[k]
        for j in range(nt):
            radial[k - 1, j] = two_pi * e * e * _gauss(
                lambda th: flux(np.full_like(th, e), th)[0] * np.sin(th), te[j], te[j + 1])
    # through cones theta = te[j], j = 1..nt-1, over each radial interval
    cone = np.zeros((nr, nt - 1))
    for j in range(1, nt):
        t = te[j]
        for k in range(nr):
            total = 0.0
            for a, b in _segments(re[k], re[k + 1], 1.0):
                total += _gauss(lambda r: flux(r, np.full_like(r, t))[1] * r, a, b)
            cone[k, j - 1] = two_pi * math.sin(t) * total
    net = radial.copy()
    net[1:] -= radial[:-1]
    net[:, :-1] += cone
    net[:, 1:] -= cone
    return net, radial[-1].copy()


def _nodal_l2(mesh: CellMesh, err: np.ndarray) -> float:
    return float(math.sqrt(np.sum(mesh.weights * err**2)))


def _mesh_info(mesh: CellMesh) -> dict:
    return {"nr": mesh.nr, "ntheta": mesh.ntheta, "h": mesh.h()}


# --- manufactured fields ------------------------------------------------------------

def _phi_radial(gamma):
    k = math.pi * gamma

    def phi(r, th):
        return np.cos(k * r) + 0.0 * th

    def grad(r, th):
        return -k * np.sin(k * r) + 0.0 * th, 0.0 * r * th

    return phi, grad


def _phi_coupled(gamma, amp=0.1, amp_t=0.05):
    """Radial part with zero slope at r = 1/gamma plus an l = 1 part with the same property."""
    k = math.pi * gamma
    b = 1.0 / gamma

    def phi(r, th):
        return amp * np.cos(k * r) + amp_t * (r**3 - 3 * b * b * r) / b**3 * np.cos(th)

    def grad(r, th):
        gr = -amp * k * np.sin(k * r) + amp_t * (3 * r * r - 3 * b * b) / b**3 * np.cos(th)
        gt = -amp_t * (r * r - 3 * b * b) / b**3 * np.sin(th)  # (1/r) d/dtheta
        return gr, gt

    return phi, grad


def _conc(a):
    """C = 1 + a r^2 cos(theta) and its gradient (d/dr, (1/r) d/dtheta)."""
    def C(r, th):
        return 1.0 + a * r * r * np.cos(th)

    def grad(r, th):
        return 2 * a * r * np.cos(th), -a * r * np.sin(th)

    return C, grad


def _np_flux(C, gC, gphi, z, D, U):
    """j = v C - D (grad C + z C grad phi) with v = U e_z."""
    def j(r, th):
        c = C(r, th)
        cr, ct = gC(r, th)
        pr, pt = gphi(r, th)
        return (U * np.cos(th) * c - D * (cr + z * c * pr),
                -U * np.sin(th) * c - D * (ct + z * c * pt))
    return j


def _boundary_data(mesh: CellMesh, C, jflux):
    """Per-node outflow through r = 1/gamma and mirror jumps C(theta) - C(pi - theta)."""
    _, out = control_volume_outflow(mesh, jflux)
    b = mesh.b
    j = np.arange(mesh.ntheta // 2)
    th = mesh.theta
    jump = C(np.full(j.size, b), th[j]) - C(np.full(j.size, b), th[mesh.ntheta - j])
    return out, jump


def _uniform_flow(mesh: CellMesh, U: float = 1.0):
    prm = DimensionlessParameters(gamma=mesh.gamma, delta=1.0, s=0.0, U=U)
    return solve_stokes_brinkman(FlowProblem(prm, U), mesh)


# --- analytic uncharged cell flow -----------------------------------------------------

def uncharged_cell_modes(gamma: float, s: float, m: float = 1.0, U: float = 1.0):
    """Radial profile ``f`` of the uncharged cell flow, psi = f(r) sin^2(theta) / 2.

    Shell: combination of r^4, r^2, r, 1/r; core: combination of r^2 and
    r i_1(s r) (modified spherical Bessel), matched with the same interface
    conditions as the flow solver. Returns a vectorised ``f(r)``.
    """
    N = 2.0
    b = 1.0 / gamma
    mk = m * s * s

    def outer(r):
        # rows: f, f', E^2 f, d/dr E^2 f for each basis function
        ex = np.array([4.0, 2.0, 1.0, -1.0])
        f = r**ex
        f1 = ex * r ** (ex - 1)
        f2 = ex * (ex - 1) * r ** (ex - 2)
        f3 = ex * (ex - 1) * (ex - 2) * r ** (ex - 3)
        g = f2 - N * f / r**2
        g1 = f3 - N * (f1 / r**2 - 2 * f / r**3)
        return f, f1, g, g1

    def inner(r):
        x = s * r
        u = r * spherical_in(1, x)
        u1 = spherical_in(1, x) + x * spherical_in(1, x, derivative=True)
        # r^2: g = 0; Brinkman part: E^2 u = s^2 u
        return (np.array([r * r, u]), np.array([2 * r, u1]),
                np.array([0.0, s * s * u]), np.array([0.0, s * s * u1]))

    def quantities(f, f1, g, g1, mu, muk):
        P = mu * g1 - muk * f1
        return np.array([f, f1, mu * (g + 2 * N * f - 2 * f1), -P / N + 2 * mu * (f1 - 2 * f)])

    qo = quantities(*outer(1.0), 1.0, 0.0)      # (4, 4 basis)
    qi = quantities(*inner(1.0), m, mk)         # (4, 2 basis)
    M = np.zeros((6, 6))
    M[:4, :4] = qo
    M[:4, 4:] = -qi
    fb, fb1, _, _ = outer(b)
    M[4, :4] = fb
    M[5, :4] = fb1
    rhs = np.array([0, 0, 0, 0, U * b * b, 2 * U * b])
    c = np.linalg.solve(M, rhs)

    def f(r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r <= 1.0
        ri = r[lo]
        x = s * ri
        out[lo] = c[4] * ri * ri + c[5] * ri * spherical_in(1, x)
        ro = r[~lo]
        out[~lo] = c[0] * ro**4 + c[1] * ro**2 + c[2] * ro + c[3] / ro
        return out

    return f


# --- cases ---------------------------------------------------------------------------

def _case_poisson_radial(levels):
    gamma, delta = 0.5, 1.0
    phi, grad = _phi_radial(gamma)
    errs, meshes = [], []
    for nr, nt in levels:
        mesh = CellMesh(gamma, nr, nt)
        net, _ = control_volume_outflow(mesh, grad)
        q = -delta**2 * net
        res = solve_poisson(PoissonProblem(delta, np.zeros(mesh.shape), 0.0, extra_source=q), mesh, rtol=1e-13)
        ex = phi(mesh.R, mesh.TH)
        ex = ex - boundary_mean_gauge(mesh, ex)
        errs.append(_nodal_l2(mesh, res.phi.values - ex))
        meshes.append(_mesh_info(mesh))
    return ConvergenceTable("poisson-radial", meshes, {"phi": errs})


def _case_stokes_uniform(levels):
    errs_v, errs_psi, meshes = [], [], []
    for nr, nt in levels:
        mesh = CellMesh(0.5, nr, nt)
        flow = _uniform_flow(mesh)
        vz, vrho = flow.v.cartesian()
        errs_v.append(float(np.max(np.hypot(vz - 1.0, vrho))))
        psi = 0.5 * mesh.R**2 * np.sin(mesh.TH) ** 2
        errs_psi.append(float(np.max(np.abs(flow.psi.values - psi))))
        meshes.append(_mesh_info(mesh))
    return ConvergenceTable("stokes-uniform", meshes, {"v": errs_v, "psi": errs_psi}, exact=True)


def _case_stokes_cell(levels):
    gamma, s0 = 0.5, 5.0
    f = uncharged_cell_modes(gamma, s0)
    errs, meshes = [], []
    for nr, nt in levels:
        mesh = CellMesh(gamma, nr, nt)
        prm = DimensionlessParameters(gamma=gamma, delta=1.0, s=s0, U=1.0)
        flow = solve_stokes_brinkman(FlowProblem(prm, 1.0), mesh)
        psi = f(mesh.r)[:, None] * 0.5 * np.sin(mesh.theta)[None, :] ** 2
        errs.append(_nodal_l2(mesh, flow.psi.values - psi))
        meshes.append(_mesh_info(mesh))
    return ConvergenceTable("stokes-cell", meshes, {"psi": errs}, notes={"gamma": gamma, "s0": s0})


def _np_inputs(mesh, prm, phi_grad, conc, flow_U):
    """Sources and boundary data that make ``conc`` exact for given phi and v = U e_z."""
    sources, outflow, jumps, means = {}, {}, {}, []
    V = float(np.sum(mesh.weights))
    for (name, sign), (C, gC) in zip(SPECIES, conc):
        z = sign * (prm.Z_plus if sign > 0 else prm.Z_minus)
        D = 1.0 / (prm.nu(sign, False) * prm.Pe)
        jf = _np_flux(C, gC, phi_grad, z, D, flow_U)
        net, _ = control_volume_outflow(mesh, jf)
        out, jump = _boundary_data(mesh, C, jf)
        sources[name], outflow[name], jumps[name] = net, out, jump
        means.append(float(np.sum(mesh.weights * C(mesh.R, mesh.TH))) / V)
    return sources, outflow, jumps, tuple(means)


def _case_nernst_planck(levels):
    gamma = 0.5
    prm = DimensionlessParameters(gamma=gamma, delta=1.0, s=0.0, U=1.0, Pe=1.0)
    C, gC = _conc(0.1)
    phi_f = lambda r, th: 0.1 * r * np.cos(th)
    phi_g = lambda r, th: (0.1 * np.cos(th), -0.1 * np.sin(th))
    errs = {"c_plus": [], "c_minus": []}
    meshes = []
    for nr, nt in levels:
        mesh = CellMesh(gamma, nr, nt)
        flow = _uniform_flow(mesh)
        sources, outflow, jumps, means = _np_inputs(mesh, prm, phi_g, [(C, gC), (C, gC)], 1.0)
        tp = TransportProblem.from_flow(prm, phi_f(mesh.R, mesh.TH), flow, means=means, sources=sources,
                                        boundary_outflow=outflow, boundary_jump=jumps)
        conc = solve_nernst_planck(tp, mesh)
        ex = C(mesh.R, mesh.TH)
        errs["c_plus"].append(_nodal_l2(mesh, conc.plus.values - ex))
        errs["c_minus"].append(_nodal_l2(mesh, conc.minus.values - ex))
        meshes.append(_mesh_info(mesh))
    return ConvergenceTable("nernst-planck", meshes, errs)


def _case_coupled_smooth(levels, tol=1e-12, max_iter=60):
    gamma, delta, sigma, U = 0.5, 1.0, 0.5, 1.0
    prm = DimensionlessParameters(gamma=gamma, delta=delta, sigma=sigma, s=0.0, U=U, Pe=1.0)
    phi_f, phi_g = _phi_coupled(gamma)
    cp_f, cp_g = _conc(0.1)
    cm_f, cm_g = _conc(-0.05)
    errs = {"phi": [], "c_plus": [], "c_minus": [], "psi": []}
    meshes, sweeps = [], []
    for nr, nt in levels:
        mesh = CellMesh(gamma, nr, nt)
        R, TH = mesh.R, mesh.TH
        net, _ = control_volume_outflow(mesh, phi_g)
        cp_x, cm_x, phi_x = cp_f(R, TH), cm_f(R, TH), phi_f(R, TH)
        mob_x = prm.Z_plus * cp_x - prm.Z_minus * cm_x
        extra = -delta**2 * net - (mob_x * mesh.weights - sigma * mesh.w_in)
        # body force the exact fields would exert, with the exact gradient
        gr, gt = phi_g(R, TH)
        corr_in = ((mob_x - sigma) * gr, (mob_x - sigma) * gt)
        corr_out = (mob_x * gr, mob_x * gt)
        sources, outflow, jumps, means = _np_inputs(mesh, prm, phi_g, [(cp_f, cp_g), (cm_f, cm_g)], U)

        cp, cm = np.full(mesh.shape, means[0]), np.full(mesh.shape, means[1])
        phi = np.zeros(mesh.shape)
        for it in range(1, max_iter + 1):
            mob = prm.Z_plus * cp - prm.Z_minus * cm
            phi_new = solve_poisson(PoissonProblem(delta, mob, sigma, extra_source=extra), mesh,
                                    rtol=1e-13).phi.values
            (fri, fti), (fro, fto) = electric_body_force(mesh, phi_new, mob, sigma)
            flow = solve_stokes_brinkman(FlowProblem(prm, U, (fri + corr_in[0], fti + corr_in[1]),
                                                     (fro + corr_out[0], fto + corr_out[1])), mesh)
            tp = TransportProblem.from_flow(prm, phi_new, flow, means=means, sources=sources,
                                            boundary_outflow=outflow, boundary_jump=jumps)
            conc = solve_nernst_planck(tp, mesh)
            change = max(float(np.max(np.abs(phi_new - phi))),
                         float(np.max(np.abs(conc.plus.values - cp))),
                         float(np.max(np.abs(conc.minus.values - cm))))
            phi, cp, cm = phi_new, conc.plus.values, conc.minus.values
            if change < tol:
                break
        sweeps.append(it)
        ex_phi = phi_x - boundary_mean_gauge(mesh, phi_x)
        errs["phi"].append(_nodal_l2(mesh, phi - ex_phi))
        errs["c_plus"].append(_nodal_l2(mesh, cp - cp_x))
        errs["c_minus"].append(_nodal_l2(mesh, cm - cm_x))
        errs["psi"].append(_nodal_l2(mesh, flow.psi.values - 0.5 * U * R**2 * np.sin(TH) ** 2))
        meshes.append(_mesh_info(mesh))
    return ConvergenceTable("coupled-smooth", meshes, errs, notes={"sweeps": sweeps})


CASES = {
    "poisson-radial": _case_poisson_radial,
    "stokes-uniform": _case_stokes_uniform,
    "stokes-cell": _case_stokes_cell,
    "nernst-planck": _case_nernst_planck,
    "coupled-smooth": _case_coupled_smooth,
}


def mms_run(case: str, levels=DEFAULT_LEVELS) -> ConvergenceTable:
    """Run a registered convergence case over ``levels`` of (nr, ntheta)."""
    if case not in CASES:
        raise UnknownCase(f"unknown manufactured case {case!r}; known: {', '.join(sorted(CASES))}")
    if len(levels) < 2:
        raise ValueError("need at least two mesh levels")
    return CASES[case](tuple(levels))

