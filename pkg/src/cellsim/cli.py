"""``cell-sim`` command line: solve, audit, sweep, mms, nondim.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 audit violation.
``CELL_SIM_LOG`` (error, info or debug) sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .audit import audit_state
from .coupled import PicardSettings, SolverFailure, picard_solve, state_from_fields
from .hydro import compute_traction
from .mesh import CellMesh
from .mms import CASES, UnknownCase, mms_run
from .params import ConfigError, RunSpecification, load_config, sweep_points
from .reporting import (
    export_plot_data,
    read_fields,
    sanitize,
    write_fields,
    write_json,
    write_manifest,
)
from .sweep import DEFAULT_GRID, aggregate_csv, run_sweep, sweep_summary

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_AUDIT = 0, 1, 2, 3

log = logging.getLogger("cellsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cell-sim", description="Electro-hydrodynamic membrane cell simulator and estimate auditor")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("solve", "run the coupled solver and write fields"),
                       ("audit", "solve (or reload fields) and audit the estimates"),
                       ("sweep", "solve and audit every point of a parameter grid"),
                       ("mms", "manufactured-solution convergence studies"),
                       ("nondim", "convert physical parameters to dimensionless form")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        if name == "audit":
            sp.add_argument("--fields", help="run directory with stored phi/c_plus/c_minus CSVs to audit")
    return p


def _setup_logging():
    level = os.environ.get("CELL_SIM_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError("CELL_SIM_LOG", f"expected one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _out_dir(args, spec: RunSpecification, default: str) -> Path:
    out = Path(args.out or spec.output.dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mesh(spec: RunSpecification) -> CellMesh:
    return CellMesh(spec.params.gamma, spec.mesh.nr, spec.mesh.ntheta)


def _failure(out: Path, exc: SolverFailure, config: dict) -> int:
    path = write_json(out / "trace.json", sanitize({"error": str(exc), "trace": exc.trace}))
    write_manifest(out, config, [path], {}, {"status": "solver_failure"})
    print(f"solver failure: {exc}\ntrace written to {path}", file=sys.stderr)
    return EXIT_SOLVER


def _solution_summary(state) -> dict:
    out = {"converged": state.converged, "iterations": state.iterations,
           "gauss_defect": state.gauss_defect, "poisson_residual": state.poisson_residual,
           "residuals": state.residual_history()}
    if state.params.U > 0:
        tr = compute_traction(state.flow)
        out.update(L11=tr.L11, L11_conventional=state.params.U * tr.V_cell / tr.F_z_conventional,
                   F_z=tr.F_z, F_z_conventional=tr.F_z_conventional)
    return out


def cmd_solve(args, spec: RunSpecification) -> int:
    out = _out_dir(args, spec, "cell-sim-run")
    settings = PicardSettings.from_solver(spec.solver)
    t0 = time.perf_counter()
    try:
        state = picard_solve(spec.params, _mesh(spec), settings)
    except SolverFailure as exc:
        return _failure(out, exc, spec.raw)
    times = {"solve": time.perf_counter() - t0}
    files = [write_json(out / "solution.json", sanitize(_solution_summary(state)))]
    if spec.output.fields_csv:
        files += write_fields(out, state)
    write_manifest(out, spec.raw, files, times, {"settings": asdict(settings)})
    print(f"converged in {state.iterations} sweeps; outputs in {out}")
    return EXIT_OK


def cmd_audit(args, spec: RunSpecification) -> int:
    out = _out_dir(args, spec, "cell-sim-audit")
    settings = PicardSettings.from_solver(spec.solver)
    mesh = _mesh(spec)
    t0 = time.perf_counter()
    if args.fields:
        f = read_fields(Path(args.fields), mesh)
        state = state_from_fields(spec.params, mesh, f["phi"], f["c_plus"], f["c_minus"], settings.refine)
        files = []
    else:
        try:
            state = picard_solve(spec.params, mesh, settings)
        except SolverFailure as exc:
            return _failure(out, exc, spec.raw)
        files = [write_json(out / "solution.json", sanitize(_solution_summary(state)))]
        if spec.output.fields_csv:
            files += write_fields(out, state)
    t1 = time.perf_counter()
    report = audit_state(state, alpha=spec.audit.alpha, include=spec.audit.inequalities)
    files.append(write_json(out / "audit_report.json", sanitize(report.to_json())))
    times = {"solve": t1 - t0, "audit": time.perf_counter() - t1}
    write_manifest(out, spec.raw, files, times, {"passed": report.passed})
    for rec in report.violations():
        print(f"violation: {rec.id} lhs={rec.lhs:.6g} rhs={rec.rhs:.6g}", file=sys.stderr)
    print(f"audit {'passed' if report.passed else 'FAILED'}; report in {out / 'audit_report.json'}")
    return EXIT_OK if report.passed else EXIT_AUDIT


def cmd_sweep(args, spec: RunSpecification) -> int:
    out = _out_dir(args, spec, "cell-sim-sweep")
    settings = PicardSettings.from_solver(spec.solver)
    points = sweep_points(spec.params, spec.sweep or DEFAULT_GRID)
    t0 = time.perf_counter()
    results = run_sweep(points, spec.mesh, settings, alpha=spec.audit.alpha, jobs=max(1, args.jobs),
                        include=spec.audit.inequalities)
    times = {"sweep": time.perf_counter() - t0}
    files = []
    agg = out / "aggregate.csv"
    agg.write_text(aggregate_csv(results), encoding="utf-8")
    files.append(agg)
    reports = [{"params": dict(r.key), "status": r.status, "error": r.error, "iterations": r.iterations,
                "outputs": r.outputs, "report": None if r.report is None else r.report.to_json()}
               for r in results]
    files.append(write_json(out / "reports.json", sanitize(reports)))
    summary = sweep_summary(results)
    files.append(write_json(out / "summary.json", sanitize(summary)))
    ok = [r for r in results if r.report is not None]
    if ok:
        for kind, name in (("L11-vs-delta", "L11_vs_delta.csv"), ("slack-vs-delta", "slack_vs_delta.csv")):
            path = out / name
            path.write_text(export_plot_data(ok, kind), encoding="utf-8")
            files.append(path)
    write_manifest(out, spec.raw, files, times, {"jobs": args.jobs})
    print(f"{summary['converged']}/{summary['points']} points converged, "
          f"{len(summary['violations'])} explicit-constant violations; outputs in {out}")
    if summary["failed"]:
        return EXIT_SOLVER
    return EXIT_AUDIT if summary["violations"] else EXIT_OK


def cmd_mms(args, spec: RunSpecification) -> int:
    out = _out_dir(args, spec, "cell-sim-mms")
    cases = spec.mms_cases or tuple(CASES)
    tables, times = [], {}
    for case in cases:
        t0 = time.perf_counter()
        try:
            tables.append(mms_run(case).to_json())
        except UnknownCase as exc:
            raise ConfigError("mms.cases", str(exc)) from None
        times[case] = time.perf_counter() - t0
    path = write_json(out / "mms.json", sanitize(tables))
    write_manifest(out, spec.raw, [path], times)
    for t in tables:
        orders = {k: [round(o, 3) if o is not None else None for o in v] for k, v in sanitize(t["orders"]).items()}
        print(f"{t['case']}: orders {orders}")
    return EXIT_OK


def cmd_nondim(args, spec: RunSpecification) -> int:
    if spec.scaling is None:
        raise ConfigError("physical", "nondim needs a 'physical' parameter block")
    sc = spec.scaling
    data = {"dimensionless": spec.params.to_dict(), "s0": spec.params.s0,
            "scales": {"p0": sc.p0, "U0": sc.U0, "d": sc.d, "R_b": sc.R_b}, "mapping": sc.mapping}
    text = json.dumps(sanitize(data), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "nondim.json"
        path.write_text(text + "\n", encoding="utf-8")
        write_manifest(out, spec.raw, [path], {})
    print(text)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "audit": cmd_audit, "sweep": cmd_sweep, "mms": cmd_mms, "nondim": cmd_nondim}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _setup_logging()
        spec = load_config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        return COMMANDS[args.command](args, spec)
    except (ConfigError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
