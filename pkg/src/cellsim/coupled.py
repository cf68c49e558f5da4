"""Self-consistent coupling of potential, flow and ion transport by fixed-point sweeps.

One sweep updates the potential for the current concentrations, the flow for
the resulting electric body force, and the concentrations for the new (v, phi).
The potential step predicts the concentration response to the potential change
(Gummel's device), which keeps the sweep contractive when the Debye ratio is
small; its fixed points are those of the plain sequence.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .electrostatics import (
    EquilibriumState,
    NewtonDivergence,
    PoissonProblem,
    boundary_mean_gauge,
    gauss_balance,
    solve_equilibrium_pb,
    solve_poisson_predicted,
    stiffness_matrix,
)
from .hydro import FlowProblem, FlowSolverError, FlowState, electric_body_force, solve_stokes_brinkman
from .kernels import LinearSolverError
from .mesh import CellMesh, ScalarField, VectorField, integrate
from .params import DimensionlessParameters, SolverSettings
from .transport import (
    ConcentrationPair,
    FluxField,
    TransportError,
    TransportProblem,
    compute_ion_fluxes,
    solve_nernst_planck,
)

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    """A sub-solver failed or the sweeps did not converge; ``trace`` holds the history."""

    def __init__(self, message: str, trace: list | None = None, state: "SolutionState | None" = None):
        super().__init__(message)
        self.trace = trace or []
        self.state = state


@dataclass(frozen=True)
class PicardSettings:
    relaxation: float = 0.7
    tol: float = 1e-8
    max_iter: int = 200
    init: str = "equilibrium"
    relaxation_floor: float = 0.1
    newton_tol: float = 1e-10
    refine: int = 4
    anderson_depth: int = 10

    def __post_init__(self):
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.init not in ("equilibrium", "zero"):
            raise ValueError("init must be 'equilibrium' or 'zero'")

    @classmethod
    def from_solver(cls, s: SolverSettings) -> "PicardSettings":
        return cls(relaxation=s.relaxation, tol=s.picard_tol, max_iter=s.picard_max_iter,
                   init=s.init, newton_tol=s.newton_tol)


@dataclass(eq=False)
class SolutionState:
    mesh: CellMesh
    params: DimensionlessParameters
    phi: ScalarField
    flow: FlowState
    conc: ConcentrationPair
    fluxes: FluxField
    equilibrium: EquilibriumState | None
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    wall_time: float = 0.0
    gauss_defect: float = 0.0
    poisson_residual: float = 0.0

    @property
    def v(self) -> VectorField:
        return self.flow.v

    @property
    def p(self) -> ScalarField:
        return self.flow.p

    @property
    def c_plus(self) -> ScalarField:
        return self.conc.plus

    @property
    def c_minus(self) -> ScalarField:
        return self.conc.minus

    @property
    def j_plus(self) -> VectorField:
        return self.fluxes.plus

    @property
    def j_minus(self) -> VectorField:
        return self.fluxes.minus

    def mobile_charge(self) -> np.ndarray:
        return self.conc.mobile_charge(self.params)

    def charge_density(self, region: str) -> np.ndarray:
        """Z+C+ - Z-C- minus sigma in the core; nodal values for ``region``."""
        mob = self.mobile_charge()
        return mob - self.params.sigma if region == "inner" else mob

    def residual_history(self) -> list[float]:
        return [t["residual"] for t in self.trace]


def species_means(params: DimensionlessParameters, mesh: CellMesh,
                  eq: EquilibriumState | None = None) -> tuple[tuple[float, float], EquilibriumState]:
    """Cell means of the equilibrium (Boltzmann) concentrations.

    These fix the ion content of the closed cell; they make the net charge
    vanish so the all-Neumann Poisson problem stays compatible.
    """
    if eq is None:
        eq = solve_equilibrium_pb(params, mesh, raise_on_failure=True)
    _, cp, cm = eq.fields(mesh)
    V = float(np.sum(mesh.weights))
    return (integrate(mesh, cp.values) / V, integrate(mesh, cm.values) / V), eq


def _rel_change(new: np.ndarray, old: np.ndarray, w: np.ndarray) -> float:
    dn = np.sqrt(np.sum(w * (new - old) ** 2))
    return float(dn / (1.0 + np.sqrt(np.sum(w * new**2))))


def _anderson_step(x, f, hist_x, hist_f, beta, sw, depth):
    """Anderson-mixed update from the fixed-point residual ``f = G(x) - x``.

    With an empty history (or ``depth = 0``) this is plain relaxation
    ``x + beta f``. Least squares use the volume-weighted norm ``sw``.
    """
    hist_x.append(x.copy())
    hist_f.append(f.copy())
    if len(hist_x) > depth + 1:
        hist_x.pop(0)
        hist_f.pop(0)
    if len(hist_x) < 2 or depth == 0:
        return x + beta * f
    dX = np.diff(np.array(hist_x), axis=0).T
    dF = np.diff(np.array(hist_f), axis=0).T
    gamma, *_ = np.linalg.lstsq(dF * sw[:, None], f * sw, rcond=1e-12)
    return x + beta * f - (dX + beta * dF) @ gamma


def picard_solve(params: DimensionlessParameters, mesh: CellMesh,
                 settings: PicardSettings | None = None) -> SolutionState:
    """Fixed-point sweeps phi -> (v, p) -> C+- with under-relaxation of phi and C+-.

    The sweep residual is the largest relative change ||G(x) - x|| / (1 + ||G(x)||)
    over phi, C+-, v. Updates are relaxed with weight ``relaxation`` and
    Anderson-mixed over the last ``anderson_depth`` sweeps, which removes the
    slowly decaying streaming-potential mode of the plain iteration. The
    relaxation is halved (down to ``relaxation_floor``) whenever the residual
    grows. The mixing history is kept through such steps, because at thin
    double layers the plain relaxed map has a weakly unstable mode that only
    the mixing damps; it is dropped when a mixed update would make a
    concentration non-positive. Raises :class:`SolverFailure` with the residual
    trace on non-convergence or when a sub-solver fails.
    """
    settings = settings or PicardSettings()
    t0 = time.perf_counter()
    try:
        means, eq = species_means(params, mesh)
    except NewtonDivergence as exc:
        raise SolverFailure(f"equilibrium initialisation failed: {exc}") from exc
    w = mesh.weights
    if settings.init == "equilibrium":
        phi0, cp0, cm0 = eq.fields(mesh)
        phi = phi0.values - boundary_mean_gauge(mesh, phi0.values)
        cp, cm = cp0.values.copy(), cm0.values.copy()
    else:
        phi = np.zeros(mesh.shape)
        cp = np.full(mesh.shape, means[0])
        cm = np.full(mesh.shape, means[1])

    theta = settings.relaxation
    trace: list[dict] = []
    flow = conc = None
    v_old = np.zeros(mesh.shape + (2,))
    sw = np.sqrt(np.concatenate([w.ravel()] * 3))
    hist_x: list[np.ndarray] = []
    hist_f: list[np.ndarray] = []
    converged = False
    for it in range(1, settings.max_iter + 1):
        try:
            phi_new, n_newton = solve_poisson_predicted(params, mesh, cp, cm, phi)
            mob = params.Z_plus * cp - params.Z_minus * cm
            f_in, f_out = electric_body_force(mesh, phi_new, mob, params.sigma)
            flow = solve_stokes_brinkman(FlowProblem(params, params.U, f_in, f_out), mesh,
                                         refine=settings.refine)
            if not flow.converged:
                raise FlowSolverError(f"flow solve residual {flow.residual:.3e}")
            conc = solve_nernst_planck(TransportProblem.from_flow(params, phi_new, flow, means=means), mesh)
        except (NewtonDivergence, LinearSolverError, FlowSolverError, TransportError) as exc:
            raise SolverFailure(f"sweep {it}: {type(exc).__name__}: {exc}", trace) from exc
        v_new = np.stack([flow.v.vr, flow.v.vt], axis=-1)
        changes = {
            "phi": _rel_change(phi_new, phi, w),
            "c_plus": _rel_change(conc.plus.values, cp, w),
            "c_minus": _rel_change(conc.minus.values, cm, w),
            "v": _rel_change(v_new, v_old, w[..., None]),
        }
        residual = max(changes.values())
        if trace and residual > trace[-1]["residual"]:
            theta = max(0.5 * theta, settings.relaxation_floor)
        trace.append({"iteration": it, "relaxation": theta, "residual": residual,
                      "newton": n_newton, **changes})
        log.info("sweep %d: residual %.3e (relaxation %.3g)", it, residual, theta)
        v_old = v_new
        if residual <= settings.tol:
            phi, cp, cm = phi_new, conc.plus.values, conc.minus.values
            converged = True
            break
        x = np.concatenate([phi.ravel(), cp.ravel(), cm.ravel()])
        g = np.concatenate([phi_new.ravel(), conc.plus.values.ravel(), conc.minus.values.ravel()])
        x_next = _anderson_step(x, g - x, hist_x, hist_f, theta, sw, settings.anderson_depth)
        n = phi.size
        if np.min(x_next[n:]) <= 0.0:
            hist_x.clear()
            hist_f.clear()
            x_next = x + theta * (g - x)
        phi, cp, cm = (x_next[i * n:(i + 1) * n].reshape(mesh.shape) for i in range(3))

    conc = ConcentrationPair(ScalarField(mesh, cp), ScalarField(mesh, cm), means,
                             conc.residuals, {"plus": float(cp.min()), "minus": float(cm.min())})
    try:
        flow, fluxes = derived_fields(params, mesh, phi, conc, settings.refine)
    except FlowSolverError as exc:
        raise SolverFailure(f"final flow solve: {exc}", trace) from exc
    problem = PoissonProblem(params.delta, conc.mobile_charge(params), params.sigma)
    q = problem.source(mesh).ravel()
    K = stiffness_matrix(mesh)
    pres = float(np.linalg.norm(params.delta**2 * (K @ phi.ravel()) - q) / max(np.linalg.norm(q), 1e-300))
    state = SolutionState(
        mesh=mesh, params=params, phi=ScalarField(mesh, phi), flow=flow, conc=conc, fluxes=fluxes,
        equilibrium=eq, trace=trace, converged=converged, iterations=len(trace),
        wall_time=time.perf_counter() - t0, gauss_defect=gauss_balance(mesh, phi, problem),
        poisson_residual=pres,
    )
    if not converged:
        raise SolverFailure(
            f"fixed-point sweeps did not converge in {settings.max_iter} iterations "
            f"(last residual {trace[-1]['residual']:.3e})", trace, state)
    return state


def derived_fields(params: DimensionlessParameters, mesh: CellMesh, phi: np.ndarray,
                   conc: ConcentrationPair, refine: int = 4) -> tuple[FlowState, FluxField]:
    """Flow and ion fluxes implied by (phi, C+-).

    The returned state is a pure function of the stored potential and
    concentrations, so a state rebuilt from saved fields audits identically.
    """
    mob = conc.mobile_charge(params)
    f_in, f_out = electric_body_force(mesh, phi, mob, params.sigma)
    flow = solve_stokes_brinkman(FlowProblem(params, params.U, f_in, f_out), mesh, refine=refine)
    if not flow.converged:
        raise FlowSolverError(f"flow solve residual {flow.residual:.3e}")
    return flow, compute_ion_fluxes(conc, flow.v, phi, params, flow.face_fluxes())


def state_from_fields(params: DimensionlessParameters, mesh: CellMesh, phi: np.ndarray,
                      c_plus: np.ndarray, c_minus: np.ndarray, refine: int = 4) -> SolutionState:
    """Rebuild a converged :class:`SolutionState` from stored nodal fields."""
    w = mesh.weights
    V = float(np.sum(w))
    means = (float(np.sum(w * c_plus)) / V, float(np.sum(w * c_minus)) / V)
    conc = ConcentrationPair(ScalarField(mesh, c_plus), ScalarField(mesh, c_minus), means, {},
                             {"plus": float(np.min(c_plus)), "minus": float(np.min(c_minus))})
    flow, fluxes = derived_fields(params, mesh, phi, conc, refine)
    problem = PoissonProblem(params.delta, conc.mobile_charge(params), params.sigma)
    return SolutionState(mesh=mesh, params=params, phi=ScalarField(mesh, phi), flow=flow, conc=conc,
                         fluxes=fluxes, equilibrium=None, converged=True,
                         gauss_defect=gauss_balance(mesh, phi, problem))


def run_manifest(state: SolutionState, settings: PicardSettings, outputs: dict | None = None,
                 stage_times: dict | None = None) -> dict:
    """JSON-ready description of a coupled run."""
    return {
        "version": version_string(),
        "params": state.params.to_dict(),
        "mesh": state.mesh.describe(),
        "settings": asdict(settings),
        "converged": state.converged,
        "iterations": state.iterations,
        "residuals": state.residual_history(),
        "wall_time": state.wall_time,
        "stage_times": stage_times or {},
        "outputs": outputs or {},
    }


def version_string() -> str:
    """Package version, extended with ``git describe`` output when run from a checkout."""
    import subprocess
    from pathlib import Path

    here = Path(__file__).resolve().parent
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                              capture_output=True, text=True, timeout=5, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__
