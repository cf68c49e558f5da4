"""Plot-ready CSV exports, field dumps and self-describing run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from pathlib import Path

import numpy as np

from .coupled import version_string
from .mesh import CellMesh, ScalarField, fmt, read_scalar_csv, write_scalar_csv, write_vector_csv

PLOT_KINDS = ("L11-vs-delta", "slack-vs-delta", "profiles")

FIELD_FILES = {"phi": "phi.csv", "c_plus": "c_plus.csv", "c_minus": "c_minus.csv",
               "p": "p.csv", "psi": "psi.csv", "v": "v.csv", "j_plus": "j_plus.csv", "j_minus": "j_minus.csv"}


class EmptyCollection(ValueError):
    pass


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def theta_average(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted mean over theta on every radial node."""
    mesh = f.mesh
    S = mesh.S
    return mesh.r.copy(), (f.values @ S) / S.sum()


def export_plot_data(collection, kind: str, audit_id: str = "potential_bound") -> str:
    """Tidy CSV text for one of :data:`PLOT_KINDS`.

    ``collection`` holds sweep point results for the two sweep kinds and
    solution states for ``"profiles"``.
    """
    items = list(collection)
    if not items:
        raise EmptyCollection("nothing to export")
    if kind == "L11-vs-delta":
        rows = []
        for res in items:
            if res.report is None:
                continue
            p = res.params
            for rec in res.report.get("L11_bound"):
                bound = math.sqrt(rec.rhs) if rec.rhs is not None else math.inf
                rows.append([p.delta, p.gamma, p.sigma, rec.constants["L11"], bound])
        return _csv_text(["delta", "gamma", "sigma", "L11", "bound"], rows)
    if kind == "slack-vs-delta":
        rows = []
        for res in items:
            if res.report is None:
                continue
            p = res.params
            for rec in res.report.get(audit_id):
                rows.append([p.delta, p.gamma, p.sigma, rec.id, rec.branch, rec.lhs,
                             math.nan if rec.rhs is None else rec.rhs,
                             math.nan if rec.slack is None else rec.slack])
        return _csv_text(["delta", "gamma", "sigma", "id", "branch", "lhs", "bound", "slack"], rows)
    if kind == "profiles":
        rows = []
        single = len(items) == 1
        for st in items:
            r, phi = theta_average(st.phi)
            p = st.params
            for rk, pk in zip(r, phi):
                rows.append([rk, pk] if single else [p.delta, p.gamma, p.sigma, rk, pk])
        header = ["r", "phi"] if single else ["delta", "gamma", "sigma", "r", "phi"]
        return _csv_text(header, rows)
    raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")


# --- run directories ---------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def sanitize(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_fields(out: Path, state) -> list[Path]:
    """CSV dumps of the nodal fields of a solution state."""
    paths = []
    for name in ("phi", "c_plus", "c_minus", "p", "psi"):
        f = {"phi": state.phi, "c_plus": state.c_plus, "c_minus": state.c_minus,
             "p": state.p, "psi": state.flow.psi}[name]
        path = out / FIELD_FILES[name]
        write_scalar_csv(path, f)
        paths.append(path)
    for name, vec in (("v", state.v), ("j_plus", state.j_plus), ("j_minus", state.j_minus)):
        path = out / FIELD_FILES[name]
        write_vector_csv(path, vec)
        paths.append(path)
    return paths


def read_fields(run_dir: Path, mesh: CellMesh) -> dict[str, np.ndarray]:
    return {name: read_scalar_csv(run_dir / FIELD_FILES[name], mesh).values
            for name in ("phi", "c_plus", "c_minus")}


def write_manifest(out: Path, config: dict, outputs: list[Path], stage_times: dict,
                   extra: dict | None = None) -> Path:
    """Manifest listing every emitted file with its SHA-256 hash."""
    index = {p.relative_to(out).as_posix(): sha256_file(p) for p in sorted(outputs)}
    data = {
        "version": version_string(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config,
        "outputs": index,
        "stage_times": stage_times,
        **(extra or {}),
    }
    return write_json(out / "manifest.json", sanitize(data))
