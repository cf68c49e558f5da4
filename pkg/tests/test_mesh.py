import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cellsim.mesh import (
    CellMesh,
    MaskError,
    ScalarField,
    VectorField,
    boundary_integral,
    fmt,
    friedrichs_check,
    h1_norm,
    read_scalar_csv,
    volume_norm_l2,
    write_scalar_csv,
    write_vector_csv,
)

from oracles import ball_integral, sphere_integral

meshes = st.builds(CellMesh, gamma=st.floats(0.1, 0.9), nr=st.integers(8, 80),
                   ntheta=st.integers(2, 40).map(lambda n: 2 * n))


def field(mesh, fn, mask="both"):
    return ScalarField(mesh, fn(mesh.R, mesh.TH), mask)


@given(meshes)
def test_mesh_structure(mesh):
    r = mesh.r
    assert np.all(np.diff(r) > 0) and np.all(np.diff(mesh.theta) > 0)
    assert r[mesh.k_if] == 1.0 and r[-1] == 1.0 / mesh.gamma
    assert mesh.theta[0] == 0.0 and mesh.theta[-1] == np.pi
    assert np.all(mesh.w_in >= 0) and np.all(mesh.w_out >= 0)
    # control volumes tile both regions exactly
    assert mesh.w_in.sum() == pytest.approx(4 * np.pi / 3, rel=1e-13)
    assert mesh.weights.sum() == pytest.approx(mesh.cell_volume, rel=1e-13)


def test_unit_constant_norm_over_core():
    m = CellMesh(0.5, 64, 32)
    assert volume_norm_l2(field(m, lambda r, t: np.ones_like(r)), "inner") == pytest.approx(math.sqrt(4 * np.pi / 3), rel=1e-12)
    assert volume_norm_l2(field(m, lambda r, t: 0 * r)) == 0.0


def test_radius_norm_against_quadrature_oracle():
    ref = math.sqrt(ball_integral(lambda r, t: r * r, 0.0, 1.0))
    assert ref == pytest.approx(math.sqrt(4 * np.pi / 5), rel=1e-10)
    m = CellMesh(0.5, 128, 64)
    assert volume_norm_l2(field(m, lambda r, t: r), "inner") == pytest.approx(ref, rel=1e-3)


def test_h1_norms():
    m = CellMesh(0.5, 128, 64)
    c = 2.5
    assert h1_norm(field(m, lambda r, t: c + 0 * r), "inner") == pytest.approx(c * math.sqrt(4 * np.pi / 3), rel=1e-12)
    z = field(m, lambda r, t: r * np.cos(t))
    # |grad z| = 1; ||z||^2 over the unit ball is 4 pi / 15
    z_sq = ball_integral(lambda r, t: (r * np.cos(t)) ** 2, 0.0, 1.0)
    assert z_sq == pytest.approx(4 * np.pi / 15, rel=1e-10)
    assert h1_norm(z, "inner") == pytest.approx(math.sqrt(z_sq + 4 * np.pi / 3), rel=2e-3)
    assert h1_norm(field(m, lambda r, t: 0 * r), "inner") == 0.0


def test_boundary_integrals():
    m = CellMesh(0.5, 64, 32)
    one = field(m, lambda r, t: np.ones_like(r))
    assert boundary_integral(one, "inner") == pytest.approx(4 * np.pi, rel=1e-13)
    assert boundary_integral(one, "outer") == pytest.approx(16 * np.pi, rel=1e-13)
    assert abs(boundary_integral(field(m, lambda r, t: np.cos(t)), "inner")) < 1e-13
    with pytest.raises(ValueError):
        boundary_integral(one, "middle")


def test_sphere_area_error_at_fine_mesh_and_convergence():
    errs = []
    for n in (32, 64, 128):
        m = CellMesh(0.5, n, n // 2)
        f = field(m, lambda r, t: np.cos(t) ** 2)
        errs.append(abs(boundary_integral(f, "inner") - sphere_integral(lambda t: np.cos(t) ** 2, 1.0)))
    assert errs[-1] <= 1e-3 * 4 * np.pi / 3
    assert errs[0] > errs[1] > errs[2]


def test_quadrature_order_on_smooth_integrand():
    fn = lambda r, t: (1 + r * r) * (1 + np.cos(t) + np.sin(t) ** 2) + r * np.sin(t)
    ref = ball_integral(fn, 0.0, 2.0)
    errs, hs = [], []
    for n in (32, 64, 128):
        m = CellMesh(0.5, n, n // 2)
        errs.append(abs(np.sum(m.weights * fn(m.R, m.TH)) - ref))
        hs.append(m.h())
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9


def test_friedrichs_examples():
    m = CellMesh(0.5, 128, 64)
    lhs, rhs, slack = friedrichs_check(field(m, lambda r, t: np.ones_like(r)), "inner")
    assert lhs == pytest.approx(4 * np.pi / 3, rel=1e-12)
    assert rhs == pytest.approx(4 * 4 * np.pi, rel=1e-12)
    assert slack > 0
    assert friedrichs_check(field(m, lambda r, t: 0 * r), "inner") == (0.0, 0.0, 0.0)
    lhs, rhs, slack = friedrichs_check(field(m, lambda r, t: r * np.cos(t)), "inner")
    ring = sphere_integral(lambda t: np.cos(t) ** 2, 1.0)
    assert lhs == pytest.approx(ball_integral(lambda r, t: (r * np.cos(t)) ** 2, 0.0, 1.0), rel=1e-3)
    assert rhs == pytest.approx(4 * (4 * np.pi / 3 + ring), rel=2e-3)
    assert slack > 0


def test_friedrichs_variants_and_masks():
    m = CellMesh(0.5, 32, 16)
    f = field(m, lambda r, t: r * np.cos(t))
    for variant in ("full", "zero_mean"):
        assert friedrichs_check(f, "outer", variant)[2] > 0
    assert friedrichs_check(f, "inner", "gamma_i")[2] > 0
    with pytest.raises(MaskError):
        friedrichs_check(f, "both")
    inner_only = field(m, lambda r, t: r, mask="inner")
    with pytest.raises(MaskError):
        volume_norm_l2(inner_only, "outer")
    with pytest.raises(ValueError):
        friedrichs_check(f, "inner", "nonsense")


@pytest.mark.parametrize("sigma,delta", [(0.5, 0.5), (2.0, 0.1), (0.0, 1.0)])
def test_friedrichs_holds_for_solver_outputs(solve, sigma, delta):
    state = solve(gamma=0.5, delta=delta, sigma=sigma)
    for f in (state.phi, state.c_plus, state.c_minus, state.flow.psi):
        for region in ("inner", "outer"):
            lhs, rhs, slack = friedrichs_check(f, region)
            assert slack >= -1e-9 * rhs


def test_field_validation():
    m = CellMesh(0.5, 8, 4)
    with pytest.raises(ValueError):
        ScalarField(m, np.zeros((3, 3)))
    with pytest.raises(MaskError):
        ScalarField(m, np.zeros(m.shape), mask="left")
    with pytest.raises(ValueError):
        CellMesh(1.5, 8, 4)
    with pytest.raises(ValueError):
        CellMesh(0.5, 8, 5)


def test_vector_field_axis_and_cartesian():
    m = CellMesh(0.5, 16, 8)
    v = VectorField(m, np.cos(m.TH), -np.sin(m.TH))
    vz, vrho = v.cartesian()
    assert np.allclose(vz, 1.0) and np.allclose(vrho, 0.0, atol=1e-15)


def test_csv_dumps(tmp_path):
    m = CellMesh(0.5, 8, 4)
    f = field(m, lambda r, t: np.exp(r) * np.cos(t) / 3)
    path = tmp_path / "f.csv"
    write_scalar_csv(path, f)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,theta,region,value"
    assert len(lines) == 1 + m.nr * (m.ntheta + 1)
    assert lines[1].split(",")[2] == "inner"
    assert np.array_equal(read_scalar_csv(path, m).values, f.values)
    write_vector_csv(tmp_path / "v.csv", VectorField(m, f.values, -f.values))
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "r,theta,region,v_r,v_theta"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x
