"""Axisymmetric (r, theta) mesh over the porous core and the liquid shell.

Nodes are vertex-centred control volumes (box scheme). The inner radial grid
starts at ``h/2`` so that the first control volume is the ball ``r < h``; the
interface ``r = 1`` is a node line shared by both regions, whose control volume
is split into an inner and an outer part for region-wise quadrature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REGIONS = ("inner", "outer", "both")


class MaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CellMesh:
    gamma: float
    nr: int
    ntheta: int
    r: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.nr < 4 or self.ntheta < 4 or self.ntheta % 2:
            raise ValueError("need nr >= 4 and an even ntheta >= 4")
        b = 1.0 / self.gamma
        n_in = min(max(2, round(self.nr * self.gamma)), self.nr - 2)
        n_out = self.nr - n_in
        h_in = 1.0 / (n_in - 0.5)
        h_out = (b - 1.0) / n_out
        r = np.concatenate([(np.arange(1, n_in + 1) - 0.5) * h_in,
                            1.0 + h_out * np.arange(1, n_out + 1)])
        r[n_in - 1] = 1.0
        r[-1] = b
        theta = np.linspace(0.0, np.pi, self.ntheta + 1)
        set_ = object.__setattr__
        set_(self, "r", r)
        set_(self, "theta", theta)
        set_(self, "k_if", n_in - 1)
        set_(self, "h_in", h_in)
        set_(self, "h_out", h_out)
        set_(self, "b", b)
        set_(self, "dtheta", np.pi / self.ntheta)

        edges = np.empty(self.nr + 1)
        edges[0] = 0.0
        edges[1:-1] = 0.5 * (r[:-1] + r[1:])
        edges[-1] = b
        set_(self, "r_edges", edges)
        t_edges = np.empty(self.ntheta + 2)
        t_edges[0] = 0.0
        t_edges[1:-1] = 0.5 * (theta[:-1] + theta[1:])
        t_edges[-1] = np.pi
        set_(self, "theta_edges", t_edges)
        # exact sin-theta measure of each theta control interval
        S = np.cos(t_edges[:-1]) - np.cos(t_edges[1:])
        set_(self, "S", S)

        # radial r^2 dr and dr measures, split at the interface
        k = self.k_if
        r3 = (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0
        r3_in = np.where(np.arange(self.nr) < k, r3, 0.0)
        r3_in[k] = (1.0 - edges[k] ** 3) / 3.0
        r3_out = r3 - r3_in
        r3_out[k] = (edges[k + 1] ** 3 - 1.0) / 3.0
        dr = np.diff(edges)
        dr_in = np.where(np.arange(self.nr) < k, dr, 0.0)
        dr_in[k] = 1.0 - edges[k]
        dr_out = dr - dr_in
        dr_out[k] = edges[k + 1] - 1.0
        set_(self, "r3_in", r3_in)
        set_(self, "r3_out", r3_out)
        set_(self, "dr_in", dr_in)
        set_(self, "dr_out", dr_out)
        two_pi = 2.0 * np.pi
        set_(self, "w_in", two_pi * np.outer(r3_in, S))
        set_(self, "w_out", two_pi * np.outer(r3_out, S))

    # --- geometry helpers ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.nr, self.ntheta + 1)

    @property
    def weights(self) -> np.ndarray:
        return self.w_in + self.w_out

    def region_weights(self, region: str) -> np.ndarray:
        if region == "inner":
            return self.w_in
        if region == "outer":
            return self.w_out
        if region == "both":
            return self.weights
        raise MaskError(f"unknown region {region!r}")

    @property
    def R(self) -> np.ndarray:
        return np.broadcast_to(self.r[:, None], self.shape)

    @property
    def TH(self) -> np.ndarray:
        return np.broadcast_to(self.theta[None, :], self.shape)

    @property
    def cell_volume(self) -> float:
        return 4.0 * np.pi / 3.0 / self.gamma**3

    def region_tags(self) -> np.ndarray:
        tags = np.where(self.r < 1.0, "inner", "outer").astype(object)
        tags[self.k_if] = "interface"
        return tags

    def inner_rows(self) -> slice:
        return slice(0, self.k_if + 1)

    def outer_rows(self) -> slice:
        return slice(self.k_if, self.nr)

    def refine(self, factor: int = 2) -> "CellMesh":
        return CellMesh(self.gamma, self.nr * factor, self.ntheta * factor)

    def h(self) -> float:
        """Representative mesh size used for convergence rates."""
        return max(self.h_in, self.h_out, self.dtheta)

    def describe(self) -> dict:
        return {"nr": self.nr, "ntheta": self.ntheta, "gamma": self.gamma}


@dataclass(eq=False)
class ScalarField:
    """Nodal values on the mesh.

    ``mask`` is the region on which the field is valid. ``inner_trace`` holds
    the inner-side values on the interface row for fields that may jump there
    (pressure); when absent the field is single-valued on ``r = 1``.
    """

    mesh: CellMesh
    values: np.ndarray
    mask: str = "both"
    inner_trace: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mesh.shape:
            raise ValueError(f"field shape {self.values.shape} != mesh shape {self.mesh.shape}")
        if self.mask not in REGIONS:
            raise MaskError(f"unknown mask {self.mask!r}")

    def region_values(self, region: str) -> np.ndarray:
        _check_region(self.mask, region)
        if region == "inner" and self.inner_trace is not None:
            vals = self.values.copy()
            vals[self.mesh.k_if] = self.inner_trace
            return vals
        return self.values


@dataclass(eq=False)
class VectorField:
    mesh: CellMesh
    vr: np.ndarray
    vt: np.ndarray
    mask: str = "both"

    def __post_init__(self):
        self.vr = np.asarray(self.vr, dtype=float)
        self.vt = np.asarray(self.vt, dtype=float)
        if self.vr.shape != self.mesh.shape or self.vt.shape != self.mesh.shape:
            raise ValueError("vector components must match the mesh shape")

    def cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        """(v_z, v_rho) components."""
        th = self.mesh.TH
        vz = self.vr * np.cos(th) - self.vt * np.sin(th)
        vrho = self.vr * np.sin(th) + self.vt * np.cos(th)
        return vz, vrho


def _check_region(mask: str, region: str) -> None:
    if region not in REGIONS:
        raise MaskError(f"unknown region {region!r}")
    if mask != "both" and region != mask:
        raise MaskError(f"field valid on {mask!r} only, requested {region!r}")


# --- norms --------------------------------------------------------------------

def integrate(mesh: CellMesh, values: np.ndarray, region: str = "both") -> float:
    return float(np.sum(mesh.region_weights(region) * values))


def volume_norm_l2(f: ScalarField | VectorField, region: str = "both") -> float:
    _check_region(f.mask, region)
    mesh = f.mesh
    if isinstance(f, VectorField):
        sq = f.vr**2 + f.vt**2
    else:
        sq = f.region_values(region) ** 2 if region != "both" else _both_sq(f)
    return float(np.sqrt(integrate(mesh, sq, region)))


def _both_sq(f: ScalarField) -> np.ndarray:
    if f.inner_trace is None:
        return f.values**2
    # interface row: inner part with inner trace, outer part with outer values
    m = f.mesh
    return _split_sum(m, f.region_values("inner") ** 2, f.values**2)


def _split_sum(mesh: CellMesh, inner_vals: np.ndarray, outer_vals: np.ndarray) -> np.ndarray:
    """Values whose ``both``-weighted sum equals inner-weighted + outer-weighted sums."""
    w = mesh.weights
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (mesh.w_in * inner_vals + mesh.w_out * outer_vals) / np.where(w > 0, w, 1.0)
    return out


def gradient_energy(mesh: CellMesh, values: np.ndarray, region: str = "both",
                    inner_values: np.ndarray | None = None) -> float:
    """Discrete ``int |grad f|^2`` with the face weights of the box-scheme Laplacian.

    ``inner_values`` (optional) supplies the values used on the inner side of
    the interface row.
    """
    if region not in REGIONS:
        raise MaskError(f"unknown region {region!r}")
    if region == "both":
        return (gradient_energy(mesh, values, "inner", inner_values)
                + gradient_energy(mesh, values, "outer"))
    k = mesh.k_if
    vals = values
    if region == "inner" and inner_values is not None:
        vals = values.copy()
        vals[k] = inner_values[k] if inner_values.ndim == 2 else inner_values
    tr, tt_in, tt_out = face_coefficients(mesh)
    dr = np.diff(vals, axis=0)
    dt = np.diff(vals, axis=1)
    if region == "inner":
        e_r = np.sum(tr[:k] * dr[:k] ** 2)
        e_t = np.sum(tt_in * dt**2)
    else:
        e_r = np.sum(tr[k:] * dr[k:] ** 2)
        e_t = np.sum(tt_out * dt**2)
    return float(e_r + e_t)


_FACE_CACHE: dict[int, tuple] = {}


def face_coefficients(mesh: CellMesh):
    """Transmissibilities of the box-scheme Laplacian.

    Returns ``(tr, tt_in, tt_out)``: ``tr[k, j]`` couples nodes (k, j) and
    (k+1, j); ``tt_*[k, j]`` couples (k, j) and (k, j+1), split by region.
    """
    key = id(mesh)
    hit = _FACE_CACHE.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1]
    two_pi = 2.0 * np.pi
    e = mesh.r_edges[1:-1]
    tr = two_pi * (e**2 / np.diff(mesh.r))[:, None] * mesh.S[None, :]
    sin_f = np.sin(mesh.theta_edges[1:-1])
    tt_in = two_pi * mesh.dr_in[:, None] * (sin_f / mesh.dtheta)[None, :]
    tt_out = two_pi * mesh.dr_out[:, None] * (sin_f / mesh.dtheta)[None, :]
    res = (tr, tt_in, tt_out)
    _FACE_CACHE[key] = (mesh, res)
    return res


def h1_norm(f: ScalarField, region: str = "both") -> float:
    _check_region(f.mask, region)
    l2 = volume_norm_l2(f, region) ** 2
    g = gradient_energy(f.mesh, f.values, region,
                        None if f.inner_trace is None else f.region_values("inner"))
    return float(np.sqrt(l2 + g))


def vector_gradient_energy(v: VectorField, region: str = "both") -> float:
    """``int |grad v|^2`` for an axisymmetric swirl-free field (Cartesian components)."""
    mesh = v.mesh
    vz, vrho = v.cartesian()
    rho = mesh.R * np.sin(mesh.TH)
    with np.errstate(invalid="ignore", divide="ignore"):
        hoop = np.where(rho > 0, vrho / np.where(rho > 0, rho, 1.0), 0.0)
    # axis limit of v_rho / rho from the neighbouring theta node
    hoop[:, 0] = hoop[:, 1]
    hoop[:, -1] = hoop[:, -2]
    return (gradient_energy(mesh, vz, region) + gradient_energy(mesh, vrho, region)
            + integrate(mesh, hoop**2, region))


def boundary_integral(f: ScalarField | np.ndarray, boundary: str, mesh: CellMesh | None = None,
                      side: str | None = None) -> float:
    """Surface integral over ``"inner"`` (r = 1) or ``"outer"`` (r = 1/gamma)."""
    if isinstance(f, ScalarField):
        mesh = f.mesh
        vals = f.region_values(side) if (side and f.inner_trace is not None) else f.values
    else:
        vals = np.asarray(f)
    if boundary in ("inner", "Gamma_i"):
        row, rb = mesh.k_if, 1.0
    elif boundary in ("outer", "Gamma_o"):
        row, rb = mesh.nr - 1, mesh.b
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    trace = vals[row] if vals.ndim == 2 else vals
    return float(2.0 * np.pi * rb * rb * np.sum(trace * mesh.S))


def surface_measure(mesh: CellMesh, boundary: str) -> np.ndarray:
    rb = 1.0 if boundary in ("inner", "Gamma_i") else mesh.b
    return 2.0 * np.pi * rb * rb * mesh.S


def friedrichs_check(f: ScalarField, region: str, variant: str = "full") -> tuple[float, float, float]:
    """Both sides of a Friedrichs-type inequality on ``region``.

    ``variant="full"`` uses the set diameter (2 inner, 2/gamma outer) and the
    whole region boundary. ``"zero_mean"`` (outer) uses shell thickness
    2(1/gamma - 1) with no boundary term; ``"gamma_i"`` (inner) keeps the
    interface term.
    """
    mesh = f.mesh
    if region not in ("inner", "outer"):
        raise MaskError("friedrichs_check needs region 'inner' or 'outer'")
    lhs = volume_norm_l2(f, region) ** 2
    grad = h1_norm(f, region) ** 2 - lhs
    vals_in = f.region_values("inner") if region == "inner" else f.values
    if variant == "full":
        d = 2.0 if region == "inner" else 2.0 / mesh.gamma
        bnd = boundary_integral(vals_in**2, "inner", mesh)
        if region == "outer":
            bnd += boundary_integral(f.values**2, "outer", mesh)
        rhs = d * d * (grad + bnd)
    elif variant == "zero_mean":
        d = 2.0 * (1.0 / mesh.gamma - 1.0)
        rhs = d * d * grad
    elif variant == "gamma_i":
        d = 2.0
        rhs = d * d * (grad + boundary_integral(vals_in**2, "inner", mesh))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return lhs, rhs, rhs - lhs


# --- CSV dumps ----------------------------------------------------------------

def fmt(x: float) -> str:
    """17 significant digits: exact round trip for doubles."""
    x = float(x)
    return format(x, ".17g") if np.isfinite(x) else str(x)


def write_scalar_csv(path: str | Path, f: ScalarField) -> None:
    mesh = f.mesh
    tags = mesh.region_tags()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "theta", "region", "value"])
        for k in range(mesh.nr):
            for j in range(mesh.ntheta + 1):
                w.writerow([fmt(mesh.r[k]), fmt(mesh.theta[j]), tags[k], fmt(f.values[k, j])])


def write_vector_csv(path: str | Path, v: VectorField) -> None:
    mesh = v.mesh
    tags = mesh.region_tags()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "theta", "region", "v_r", "v_theta"])
        for k in range(mesh.nr):
            for j in range(mesh.ntheta + 1):
                w.writerow([fmt(mesh.r[k]), fmt(mesh.theta[j]), tags[k],
                            fmt(v.vr[k, j]), fmt(v.vt[k, j])])


def read_scalar_csv(path: str | Path, mesh: CellMesh) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=(3,))
    return ScalarField(mesh, data.reshape(mesh.shape))
