"""Parameter sweeps: one coupled solve and one audit report per grid point.

Points are independent, so they may run in worker processes. Results are
always returned and written in canonical order (sorted parameter tuples), and
nothing timing-dependent enters the aggregate CSV, so the output does not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .audit import AuditReport, audit_state
from .coupled import PicardSettings, SolverFailure, picard_solve
from .hydro import compute_traction
from .mesh import CellMesh, fmt
from .params import DimensionlessParameters, MeshSettings, sweep_points

log = logging.getLogger(__name__)

DEFAULT_GRID = {"delta": [0.1, 0.5, 1.0, 2.0, 10.0], "gamma": [0.3, 0.5, 0.8], "sigma": [0.0, 0.5, 2.0]}

CSV_COLUMNS = ("delta", "gamma", "sigma", "Pe", "s", "m", "U", "nr", "ntheta", "status", "id", "class",
               "branch", "lhs", "rhs", "slack", "ratio", "violated", "constants")


@dataclass
class PointResult:
    params: DimensionlessParameters
    mesh: MeshSettings
    status: str                     # "ok" or "failed"
    report: AuditReport | None = None
    error: str = ""
    iterations: int = 0
    trace: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def key(self) -> tuple:
        return canonical_key(self.params)


def canonical_key(p: DimensionlessParameters) -> tuple:
    return tuple(sorted(p.to_dict().items()))


def run_point(params: DimensionlessParameters, mesh: MeshSettings, settings: PicardSettings,
              alpha: float = 0.0, include: tuple[str, ...] = ()) -> PointResult:
    """Solve and audit one point; solver failures are captured, not raised."""
    m = CellMesh(params.gamma, mesh.nr, mesh.ntheta)
    try:
        state = picard_solve(params, m, settings)
    except SolverFailure as exc:
        log.warning("point %s failed: %s", canonical_key(params), exc)
        return PointResult(params, mesh, "failed", error=str(exc), trace=exc.trace,
                           iterations=len(exc.trace))
    outputs = {"gauss_defect": state.gauss_defect, "poisson_residual": state.poisson_residual}
    if params.U > 0:
        tr = compute_traction(state.flow)
        outputs.update(L11=tr.L11, L11_conventional=params.U * tr.V_cell / tr.F_z_conventional, F_z=tr.F_z)
    report = audit_state(state, alpha=alpha, include=include)
    return PointResult(params, mesh, "ok", report=report, iterations=state.iterations, trace=state.trace,
                       outputs=outputs, wall_time=state.wall_time)


def _run_star(args):
    return run_point(*args)


def run_sweep(points: list[DimensionlessParameters], mesh: MeshSettings | None = None,
              settings: PicardSettings | None = None, alpha: float = 0.0, jobs: int = 1,
              include: tuple[str, ...] = ()) -> list[PointResult]:
    """Run every point (``jobs`` worker processes) and return results in canonical order."""
    mesh = mesh or MeshSettings()
    settings = settings or PicardSettings()
    ordered = sorted(points, key=canonical_key)
    tasks = [(p, mesh, settings, alpha, include) for p in ordered]
    if jobs <= 1 or len(tasks) <= 1:
        results = [_run_star(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_star, tasks))
    return sorted(results, key=lambda r: r.key)


def default_points(base: DimensionlessParameters | None = None,
                   grid: dict | None = None) -> list[DimensionlessParameters]:
    base = base or DimensionlessParameters(gamma=0.5, delta=1.0)
    return sweep_points(base, grid or DEFAULT_GRID)


def _constants_text(constants: dict) -> str:
    return ";".join(f"{k}={fmt(v) if isinstance(v, (int, float)) else v}" for k, v in sorted(constants.items()))


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return fmt(x)


def aggregate_csv(results: list[PointResult]) -> str:
    """One row per (point, inequality id); failed points get a single ``solver_failure`` row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for res in sorted(results, key=lambda r: r.key):
        p = res.params
        head = [fmt(p.delta), fmt(p.gamma), fmt(p.sigma), fmt(p.Pe), fmt(p.s), fmt(p.m), fmt(p.U),
                res.mesh.nr, res.mesh.ntheta, res.status]
        if res.report is None:
            w.writerow(head + ["solver_failure", "", "", "", "", "", "", "", res.error.replace("\n", " ")])
            continue
        for rec in res.report.records:
            w.writerow(head + [rec.id, rec.cls, rec.branch, _num(rec.lhs), _num(rec.rhs), _num(rec.slack),
                               _num(rec.ratio), int(rec.violated), _constants_text(rec.constants)])
    return buf.getvalue()


def sweep_summary(results: list[PointResult]) -> dict:
    ok = [r for r in results if r.status == "ok"]
    violations = [(r.key, v.id) for r in ok for v in r.report.violations()]
    return {
        "points": len(results),
        "converged": len(ok),
        "failed": [dict(r.key) | {"error": r.error} for r in results if r.status != "ok"],
        "violations": [{"params": dict(k), "id": i} for k, i in violations],
    }
