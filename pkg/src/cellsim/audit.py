"""Both sides of the a priori estimates, evaluated on converged coupled states.

Every inequality is turned into an :class:`InequalityAudit` record holding the
two sides, the slack ``rhs - lhs`` and the constants used. Records whose
constants are fully explicit decide the pass flag of an :class:`AuditReport`;
records with generic (unknown) constants only report the measured ratio
``lhs / rhs`` evaluated with the constant set to one.

Notation used below: ``rho_o`` and ``rho_i`` are the squared L2 norms of the
charge density in the shell and in the core (the core density includes the
fixed charge ``-sigma``); ``linf`` is the sum of their squared sup norms and
``g = (1 - 1/gamma)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .electrostatics import PoissonProblem, stiffness_matrix
from .hydro import TractionResult, compute_traction, electric_body_force, stokes_extensions
from .mesh import (
    CellMesh,
    VectorField,
    h1_norm,
    integrate,
    surface_measure,
    vector_gradient_energy,
    volume_norm_l2,
)
from .transport import SPECIES

EXPLICIT = "explicit"
EMPIRICAL = "empirical"

AUDIT_IDS = (
    "potential_bound",
    "fiifio_link1",
    "fiifio_link2",
    "velocity_bound",
    "pressure_bound_outer",
    "pressure_bound_inner",
    "force_bound",
    "L11_bound",
    "L11_branch",
    "flux_bound_plus_inner",
    "flux_bound_plus_outer",
    "flux_bound_minus_inner",
    "flux_bound_minus_outer",
)


class AuditError(ValueError):
    pass


def audit_tolerance(rhs: float | None) -> float:
    """Allowed violation of an explicit-constant bound."""
    return 1e-6 * (1.0 + abs(rhs if rhs is not None else 0.0))


@dataclass
class InequalityAudit:
    """One evaluated inequality ``lhs <= rhs``.

    ``rhs`` and ``slack`` are ``None`` when the bound is vacuous (an infinite
    right-hand side) or when no branch of a case distinction applies; such
    records never fail. ``ratio`` is ``lhs / rhs`` for empirical records.
    """

    id: str
    lhs: float
    rhs: float | None
    cls: str
    constants: dict = field(default_factory=dict)
    branch: str = ""
    params: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    ratio: float | None = None

    @property
    def slack(self) -> float | None:
        return None if self.rhs is None else self.rhs - self.lhs

    @property
    def violated(self) -> bool:
        if self.cls != EXPLICIT or self.rhs is None:
            return False
        return self.slack < -audit_tolerance(self.rhs)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "constants": dict(sorted(self.constants.items())),
            "branch": self.branch,
            "params": dict(sorted(self.params.items())),
            "mesh": self.mesh,
            "class": self.cls,
        }
        if self.cls == EMPIRICAL:
            out["ratio"] = self.ratio
        return out


def _sort_key(rec: InequalityAudit):
    return (rec.id, tuple(sorted(rec.params.items())), rec.branch)


@dataclass
class AuditReport:
    records: list[InequalityAudit]
    weak_identities: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = sorted(self.records, key=_sort_key)

    @property
    def passed(self) -> bool:
        return not any(r.violated for r in self.records)

    def violations(self) -> list[InequalityAudit]:
        return [r for r in self.records if r.violated]

    def get(self, audit_id: str) -> list[InequalityAudit]:
        return [r for r in self.records if r.id == audit_id]

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "eps_audit": "1e-6*(1+rhs)",
            "records": [r.to_json() for r in self.records],
            "weak_identities": dict(sorted(self.weak_identities.items())),
            "notes": self.notes,
        }


# --- norms of the charge density ---------------------------------------------------

@dataclass(frozen=True)
class ChargeNorms:
    rho_o: float      # ||rho||^2 over the shell
    rho_i: float      # ||rho - sigma||^2 over the core
    linf_o: float     # max rho^2 over the shell
    linf_i: float     # max (rho - sigma)^2 over the core

    @property
    def linf(self) -> float:
        return self.linf_o + self.linf_i


def charge_norms(mesh: CellMesh, mobile: np.ndarray, sigma: float) -> ChargeNorms:
    rho_in, rho_out = mobile - sigma, mobile
    k = mesh.k_if
    return ChargeNorms(
        rho_o=integrate(mesh, rho_out**2, "outer"),
        rho_i=integrate(mesh, rho_in**2, "inner"),
        linf_o=float(np.max(rho_out[k:] ** 2)),
        linf_i=float(np.max(rho_in[: k + 1] ** 2)),
    )


def _g(gamma: float) -> float:
    return (1.0 - 1.0 / gamma) ** 2


def concentration_bracket(n: ChargeNorms, gamma: float, delta: float) -> float:
    """16 g/delta^4 ||rho_o||^2 + 4/delta^4 ||rho_i||^2."""
    return 16.0 * _g(gamma) / delta**4 * n.rho_o + 4.0 / delta**4 * n.rho_i


def potential_rhs(n: ChargeNorms, gamma: float, delta: float) -> float:
    return 2.0 / delta**2 * n.rho_i + 8.0 * _g(gamma) / delta**2 * n.rho_o


def potential_ceiling(n: ChargeNorms, gamma: float, delta: float) -> float:
    """Largest ``||phi||^2_H1`` (both regions) compatible with the potential bound."""
    kappa = min(delta**2 / 2.0, delta**2 / (8.0 * _g(gamma)))
    return potential_rhs(n, gamma, delta) / kappa


def force_constants(gamma: float, delta: float) -> tuple[float, float]:
    g = _g(gamma)
    C1 = max(64.0 * g / delta**4, 4.0 / delta**2 + 2.0 / delta, 2.0 / delta**4)
    C2 = max(16.0 / delta**2, 2.0 / delta**4)
    return C1, C2


def _common(state) -> tuple[dict, dict]:
    return state.params.to_dict(), {"nr": state.mesh.nr, "ntheta": state.mesh.ntheta}


def _extension_norms(state) -> dict:
    """Squared norms of the boundary data and of its Stokes extensions."""
    mesh, prm = state.mesh, state.params
    U_i, U_o = stokes_extensions(state.flow)
    return {
        "U_surface": prm.U**2 * float(np.sum(surface_measure(mesh, "outer"))),
        "U_o": volume_norm_l2(U_o, "outer") ** 2,
        "U_i": volume_norm_l2(U_i, "inner") ** 2,
    }


# --- potential -----------------------------------------------------------------------

def audit_potential_bound(state) -> InequalityAudit:
    """Weighted H1 norms of the potential against the charge-density norms."""
    mesh, prm = state.mesh, state.params
    n = charge_norms(mesh, state.mobile_charge(), prm.sigma)
    g = _g(prm.gamma)
    d2 = prm.delta**2
    h1_i = h1_norm(state.phi, "inner") ** 2
    h1_o = h1_norm(state.phi, "outer") ** 2
    lhs = d2 / 2.0 * h1_i + d2 / (8.0 * g) * h1_o
    rhs = potential_rhs(n, prm.gamma, prm.delta)
    params, m = _common(state)
    # kappa written with the diameters the displayed constants correspond to,
    # next to the values obtained from the set diameters
    d_i, d_o = 1.0, 2.0 * (1.0 / prm.gamma - 1.0)
    constants = {
        "kappa1": d2 / (2 * d_i**2), "kappa2": d2 / (2 * d_o**2),
        "kappa1_set_diameter": d2 / (2 * 2.0**2), "kappa2_set_diameter": d2 / (2 * (2.0 / prm.gamma) ** 2),
        "h1_inner_sq": h1_i, "h1_outer_sq": h1_o, "rho_i": n.rho_i, "rho_o": n.rho_o,
        "phi_h1_ceiling": potential_ceiling(n, prm.gamma, prm.delta),
    }
    return InequalityAudit("potential_bound", lhs, rhs, EXPLICIT, constants, "", params, m)


# --- body force and velocity ------------------------------------------------------------

def _grad_sq(mesh: CellMesh, phi: np.ndarray) -> np.ndarray:
    from .hydro import nodal_gradient

    dr, dt = nodal_gradient(mesh, phi)
    return dr**2 + dt**2


def audit_fiifio_chain(state) -> list[InequalityAudit]:
    """The two links bounding ``||Phi||^2`` by concentration norms.

    Link 1 replaces ``delta^2 Lap(phi)`` by the charge density and takes its sup
    norm out of the integral; link 2 inserts the bracket of concentration norms
    in place of ``||grad phi||^2``.
    """
    mesh, prm = state.mesh, state.params
    n = charge_norms(mesh, state.mobile_charge(), prm.sigma)
    mob = state.mobile_charge()
    gsq = _grad_sq(mesh, state.phi.values)
    rho_in, rho_out = mob - prm.sigma, mob
    phi_sq = integrate(mesh, rho_out**2 * gsq, "outer") + integrate(mesh, rho_in**2 * gsq, "inner")
    grad_o = integrate(mesh, gsq, "outer")
    grad_i = integrate(mesh, gsq, "inner")
    mid = n.linf_o * grad_o + n.linf_i * grad_i
    bracket = concentration_bracket(n, prm.gamma, prm.delta)
    top = n.linf * bracket
    params, m = _common(state)
    consts = {"linf_o": n.linf_o, "linf_i": n.linf_i, "grad_phi_o_sq": grad_o, "grad_phi_i_sq": grad_i,
              "bracket": bracket}
    return [
        InequalityAudit("fiifio_link1", phi_sq, mid, EXPLICIT, consts, "", params, m),
        InequalityAudit("fiifio_link2", mid, top, EXPLICIT, consts, "", params, m),
    ]


def audit_velocity_bound(state) -> InequalityAudit:
    """``||v||^2`` against the force bracket plus the boundary-data norms (constant 1)."""
    mesh, prm = state.mesh, state.params
    n = charge_norms(mesh, state.mobile_charge(), prm.sigma)
    ext = _extension_norms(state)
    lhs = volume_norm_l2(state.v, "outer") ** 2 + volume_norm_l2(state.v, "inner") ** 2
    rhs = n.linf * concentration_bracket(n, prm.gamma, prm.delta) + sum(ext.values())
    params, m = _common(state)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else None)
    return InequalityAudit("velocity_bound", lhs, rhs, EMPIRICAL, {"C": 1.0, **ext}, "", params, m, ratio)


def audit_pressure_bound(state) -> list[InequalityAudit]:
    """L2 parts of the pressure bounds; the generic constants come out as ratios.

    The outer record reports ``C3 = ||p_o||^2 / (g B)`` and the inner one
    ``C4 = ||p_i||^2 / B`` with ``B`` the concentration bracket. Without charge
    ``B`` vanishes; the records then switch to branch ``"uncharged"`` and
    compare against ``U^2 |Omega|`` instead.
    """
    mesh, prm = state.mesh, state.params
    n = charge_norms(mesh, state.mobile_charge(), prm.sigma)
    B = concentration_bracket(n, prm.gamma, prm.delta)
    p = state.p
    p_o = volume_norm_l2(p, "outer") ** 2
    p_i = volume_norm_l2(p, "inner") ** 2
    params, m = _common(state)
    out = []
    for rid, lhs, scale in (("pressure_bound_outer", p_o, _g(prm.gamma)), ("pressure_bound_inner", p_i, 1.0)):
        if B > 0:
            rhs, branch = scale * B, "charged"
        else:
            region = "outer" if rid.endswith("outer") else "inner"
            rhs, branch = prm.U**2 * float(np.sum(mesh.region_weights(region))), "uncharged"
        ratio = lhs / rhs if rhs > 0 else None
        out.append(InequalityAudit(rid, lhs, rhs, EMPIRICAL, {"bracket": B, "scale": scale}, branch,
                                   params, m, ratio))
    return out


# --- force and permeability ----------------------------------------------------------

def select_l11_branch(gamma: float, delta: float, alpha: float, U: float = 1.0) -> list[tuple[str, float]]:
    """Limiting-case bounds on L11 selected by the literal case conditions.

    Returns ``[(branch_id, value), ...]``: one entry normally, both entries of
    a case on its boundary, and ``[("none", nan)]`` when no case applies.
    """
    b = 1.0 / gamma
    g = _g(gamma)
    if delta < 1.0 and 0.0 <= alpha <= 4.0:
        base = b**3 * U * delta ** (4.0 - alpha) / 3.0
        first = ("small_delta_thin", base)
        second = ("small_delta_thick", base / (1.0 + 32.0 * g))
        edge = 1.0 / 32.0
    elif delta > 1.0 and 0.0 <= alpha <= 2.0:
        first = ("large_delta_thin", 2.0 * b**3 * U * delta ** (2.0 - alpha) / 3.0)
        second = ("large_delta_thick", b**3 * U * delta ** (2.0 - alpha) / 12.0 / (1.0 + 4.0 * g / delta**2))
        edge = delta**2 / 16.0 + delta**3 / 32.0
    else:
        return [("none", math.nan)]
    if math.isclose(g, edge, rel_tol=1e-12, abs_tol=0.0):
        return [first, second]
    return [first] if g < edge else [second]


def projected_force_norm(state) -> float:
    """``int_shell (grad p - Lap v)^2``: the shell body force as resolved by the flow modes."""
    Fr, Ft = state.flow.info["force_projected"]["outer"]
    return integrate(state.mesh, Fr**2 + Ft**2, "outer")


def audit_force_L11(state, traction: TractionResult | None = None, alpha: float = 0.0) -> list[InequalityAudit]:
    mesh, prm = state.mesh, state.params
    n = charge_norms(mesh, state.mobile_charge(), prm.sigma)
    C1, C2 = force_constants(prm.gamma, prm.delta)
    force_lhs = projected_force_norm(state)
    force_rhs = C1 * n.rho_o + C2 * n.rho_i
    params, m = _common(state)
    params = {**params, "alpha": alpha}
    consts = {"C1": C1, "C2": C2, "rho_o": n.rho_o, "rho_i": n.rho_i}
    out = [InequalityAudit("force_bound", force_lhs, force_rhs, EXPLICIT, consts, "", params, m)]

    tr = traction if traction is not None else (compute_traction(state.flow) if prm.U > 0 else None)
    if tr is not None and prm.U > 0 and tr.F_z != 0.0:
        L11 = tr.L11
        L11c = prm.U * tr.V_cell / tr.F_z_conventional
        pref = 4.0 * prm.U / (3.0 * prm.gamma**3)
        rhs = pref / force_rhs if force_rhs > 0 else None
        lc = {**consts, "prefactor": pref, "L11": L11, "L11_conventional": L11c,
              "F_z": tr.F_z, "F_z_conventional": tr.F_z_conventional}
        out.append(InequalityAudit("L11_bound", L11**2, rhs, EXPLICIT, lc,
                                   "" if rhs is not None else "vacuous", params, m))
        for branch, value in select_l11_branch(prm.gamma, prm.delta, alpha, prm.U):
            rhs_b = None if math.isnan(value) else value
            out.append(InequalityAudit("L11_branch", L11, rhs_b, EXPLICIT,
                                       {"alpha": alpha, "b": 1.0 / prm.gamma, "bound": value}, branch, params, m))
    return out


# --- ion fluxes ------------------------------------------------------------------------

def flux_regime(delta: float, alpha: float) -> str:
    if delta == 1.0:
        return "delta_one"
    small = delta < 1.0
    if (small and alpha <= 4.0) or (not small and alpha > 4.0):
        return "small_delta_low_alpha" if small else "large_delta_high_alpha"
    return "large_delta_low_alpha" if not small else "small_delta_high_alpha"


def flux_rhs_terms(a: float, Z: float, c_h1_sq: float, volume: float, c4: float,
                   n: ChargeNorms, gamma: float, delta: float, ext_sum: float) -> dict:
    """Terms of the explicit flux bound for one species in one region; ``a = 1/(nu Pe)``."""
    g = _g(gamma)
    return {
        "h1": max(0.5 + a * a / 2.0, a + a * a / 2.0) * c_h1_sq,
        "valence": a / 2.0 * Z * Z * volume,
        "quartic": a * Z * Z * c4,
        "force": (0.5 + 1.5 * a) * n.linf * (concentration_bracket(n, gamma, delta) + ext_sum),
        "potential": (a * a / 2.0 + 1.5 * a) * (16.0 * g / delta**4 * n.rho_o + 8.0 / delta**2 * n.rho_i),
    }


def audit_flux_bound(state, alpha: float = 0.0) -> list[InequalityAudit]:
    mesh, prm = state.mesh, state.params
    n = charge_norms(mesh, state.mobile_charge(), prm.sigma)
    ext = _extension_norms(state)
    ext_sum = sum(ext.values())
    params, m = _common(state)
    params = {**params, "alpha": alpha}
    regime = flux_regime(prm.delta, alpha)
    out = []
    for name, sign in SPECIES:
        Z = prm.Z_plus if sign > 0 else prm.Z_minus
        C = state.conc.species(sign)
        for region in ("inner", "outer"):
            inner = region == "inner"
            a = 1.0 / (prm.nu(sign, inner) * prm.Pe)
            vals = C.values
            terms = flux_rhs_terms(a, Z, h1_norm(C, region) ** 2, float(np.sum(mesh.region_weights(region))),
                                   integrate(mesh, vals**4, region), n, prm.gamma, prm.delta, ext_sum)
            lhs = state.fluxes.region_norm_sq(sign, region)
            consts = {**terms, "a": a, "C_kappa": 2.0 if inner else 8.0 * _g(prm.gamma)}
            out.append(InequalityAudit(f"flux_bound_{name}_{region}", lhs, sum(terms.values()), EXPLICIT,
                                       consts, regime, params, m))
    return out


# --- alpha ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaFit:
    alpha: float
    intercept: float
    residual: float


def measure_alpha(deltas, rho_sq) -> AlphaFit:
    """Least-squares slope of log ||rho||^2 against log delta."""
    d = np.asarray(deltas, dtype=float)
    y = np.asarray(rho_sq, dtype=float)
    if d.size < 3 or d.size != y.size:
        raise AuditError("measure_alpha needs at least 3 states with matching norms")
    if np.any(d <= 0) or np.any(y <= 0):
        raise AuditError("measure_alpha needs positive delta and charge norms")
    X = np.log(d)
    Y = np.log(y)
    coef, res, *_ = np.polyfit(X, Y, 1, full=True)
    resid = float(np.sqrt(res[0] / d.size)) if res.size else 0.0
    return AlphaFit(float(coef[0]), float(coef[1]), resid)


def alpha_from_states(states) -> AlphaFit:
    deltas, norms = [], []
    for s in states:
        n = charge_norms(s.mesh, s.mobile_charge(), s.params.sigma)
        deltas.append(s.params.delta)
        norms.append(n.rho_o + n.rho_i)
    return measure_alpha(deltas, norms)


# --- weak identities ----------------------------------------------------------------

def _rel(lhs: float, rhs: float, scale: float = 0.0) -> float:
    den = abs(lhs) + abs(rhs) + scale
    return 0.0 if den < 1e-300 else abs(lhs - rhs) / den


def _bilinear(energy, a: VectorField, b: VectorField) -> float:
    plus = VectorField(a.mesh, a.vr + b.vr, a.vt + b.vt)
    minus = VectorField(a.mesh, a.vr - b.vr, a.vt - b.vt)
    return 0.25 * (energy(plus) - energy(minus))


def audit_weak_identities(state) -> dict[str, float]:
    """Relative residuals of the integral identities on a fixed test battery.

    Potential identity with test functions phi, 1 and r cos(theta) (summed over
    both regions, where interface terms cancel); momentum identity with the test
    field v minus its Stokes extension (vanishing on both spheres); balances of
    v.n and of the conservative ion fluxes through r = 1 and r = 1/gamma.
    """
    mesh, prm = state.mesh, state.params
    K = stiffness_matrix(mesh)
    q = PoissonProblem(prm.delta, state.mobile_charge(), prm.sigma).source(mesh).ravel()
    phi = state.phi.values.ravel()
    d2 = prm.delta**2
    out = {}
    z = (mesh.R * np.cos(mesh.TH)).ravel()
    ones = np.ones_like(phi)
    Kabs = abs(K)
    for name, psi in (("potential_phi", phi), ("potential_const", ones), ("potential_rcos", z)):
        lhs = d2 * float(psi @ (K @ phi))
        rhs = float(psi @ q)
        scale = d2 * float(np.abs(psi) @ (Kabs @ np.abs(phi))) + float(np.abs(psi) @ np.abs(q))
        out[name] = _rel(lhs, rhs, scale)

    # momentum, tested with v - (Stokes extension of its boundary values);
    # scaled by the Cauchy-Schwarz bounds of each term
    U_i, U_o = stokes_extensions(state.flow)
    k = mesh.k_if
    v = state.v
    inner_rows = (np.arange(mesh.nr) <= k)[:, None]
    w = VectorField(mesh, v.vr - np.where(inner_rows, U_i.vr, U_o.vr), v.vt - np.where(inner_rows, U_i.vt, U_o.vt))
    (fri, fti), (fro, fto) = electric_body_force(mesh, state.phi.values, state.mobile_charge(), prm.sigma)
    E_o = lambda f: vector_gradient_energy(f, "outer")
    E_i = lambda f: vector_gradient_energy(f, "inner")
    lhs = (_bilinear(E_o, v, w) + prm.m * _bilinear(E_i, v, w)
           + prm.drag * integrate(mesh, v.vr * w.vr + v.vt * w.vt, "inner"))
    rhs = integrate(mesh, fro * w.vr + fto * w.vt, "outer") + integrate(mesh, fri * w.vr + fti * w.vt, "inner")
    l2 = lambda a, b_, reg: math.sqrt(integrate(mesh, a**2 + b_**2, reg))
    scale = (math.sqrt(E_o(v) * E_o(w)) + prm.m * math.sqrt(E_i(v) * E_i(w))
             + prm.drag * l2(v.vr, v.vt, "inner") * l2(w.vr, w.vt, "inner")
             + l2(fro, fto, "outer") * l2(w.vr, w.vt, "outer") + l2(fri, fti, "inner") * l2(w.vr, w.vt, "inner")
             + math.hypot(l2(fro, fto, "outer"), l2(fri, fti, "inner")) + 1.0)
    # the floor is the size of the right-hand side for a unit test field, so a
    # round-off velocity (equilibrium) is not amplified to an O(1) residual
    out["momentum_energy"] = _rel(lhs, rhs, scale)

    # balances, normalised like the ion-flux balances (absolute flux plus a floor of 1)
    for bnd, row in (("inner", k), ("outer", mesh.nr - 1)):
        vn = v.vr[row] * surface_measure(mesh, bnd)
        out[f"balance_v_{bnd}"] = abs(float(np.sum(vn))) / (1.0 + float(np.sum(np.abs(vn))))
    for name, _ in SPECIES:
        bal = state.fluxes.balances.get(name, {})
        out[f"balance_j_{name}_inner"] = float(bal.get("inner", 0.0))
        out[f"balance_j_{name}_outer"] = float(bal.get("outer", 0.0))
    return out


# --- everything --------------------------------------------------------------------

def audit_state(state, alpha: float = 0.0, include: tuple[str, ...] = ()) -> AuditReport:
    """Run every audit on ``state``; ``include`` (ids or id prefixes) filters the records."""
    records: list[InequalityAudit] = [audit_potential_bound(state)]
    records += audit_fiifio_chain(state)
    records.append(audit_velocity_bound(state))
    records += audit_pressure_bound(state)
    records += audit_force_L11(state, alpha=alpha)
    records += audit_flux_bound(state, alpha)
    if include:
        records = [r for r in records if any(r.id == i or r.id.startswith(i) for i in include)]
    weak = audit_weak_identities(state)
    notes = {"outer_transport_condition": "mirror symmetry of C and normal flux across the equator of r = 1/gamma",
             "alpha": alpha}
    return AuditReport(records, weak, notes)
