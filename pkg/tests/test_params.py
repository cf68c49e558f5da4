import json
import math
from dataclasses import replace

import pytest
import scipy.constants as sc
from hypothesis import given, settings, strategies as st

from cellsim.params import (
    ConfigError,
    DimensionlessParameters,
    GeometryError,
    PhysicalParameters,
    load_config,
    nondimensionalize,
    parse_config,
    sweep_points,
)


def water(**kw):
    base = dict(a=1e-7, b=2e-7, mu_o=8.9e-4, mu_i=1.2e-3, k=5e10, C0=10.0, T=298.0,
                D_plus=1.33e-9, D_minus=2.03e-9, D_m_plus=0.5e-9, D_m_minus=0.8e-9, D0=1.5e-9,
                rho_V=2e5, eps=78.5, U_in=1e-6)
    base.update(kw)
    return PhysicalParameters(**base)


def test_cell_twice_the_core_gives_half_gamma():
    dl, _ = nondimensionalize(water(a=3e-6, b=6e-6))
    assert dl.gamma == 0.5


def test_debye_radius_equal_to_core_gives_unit_delta():
    eps, C0, T = 78.5, 10.0, 298.0
    a = math.sqrt(eps * sc.epsilon_0 * sc.R * T / (C0 * sc.value("Faraday constant") ** 2))
    dl, rep = nondimensionalize(water(a=a, b=3 * a, eps=eps, C0=C0, T=T))
    assert dl.delta == pytest.approx(1.0, rel=1e-14)
    assert rep.d == pytest.approx(a, rel=1e-14)


def test_scales_match_direct_closed_form_evaluation():
    # standalone evaluation of the scale definitions with CODATA constants
    F, R, e0 = 96485.33212, 8.314462618, 8.8541878128e-12
    a, C0, T, eps, mu, D0, k, mu_i = 1e-7, 10.0, 298.0, 78.5, 8.9e-4, 1.5e-9, 5e10, 1.2e-3
    d = math.sqrt(eps * e0 * R * T / (C0 * F * F))
    U0 = a * R * T * C0 / mu
    dl, rep = nondimensionalize(water())
    assert dl.delta == pytest.approx(d / a, rel=1e-8)
    assert dl.Pe == pytest.approx(a * U0 / D0, rel=1e-8)
    assert dl.sigma == pytest.approx(2e5 / (F * C0), rel=1e-8)
    assert dl.s == pytest.approx(math.sqrt(a * a * k / mu_i), rel=1e-12)
    assert dl.m == pytest.approx(mu_i / mu, rel=1e-14)
    assert dl.nu_plus == pytest.approx(D0 / 1.33e-9, rel=1e-14)
    assert rep.R_b == pytest.approx(math.sqrt(mu / k), rel=1e-14)
    assert rep.p0 == pytest.approx(R * T * C0, rel=1e-8)


def test_stored_scales_recompute_exactly():
    _, rep = nondimensionalize(water())
    assert rep.recompute_d() == rep.d
    assert rep.recompute_R_b() == rep.R_b


@pytest.mark.parametrize("field,value", [("mu_o", 0.0), ("C0", -1.0), ("T", float("nan")), ("D0", float("inf"))])
def test_invalid_physical_input_names_the_field(field, value):
    with pytest.raises(ConfigError) as err:
        water(**{field: value})
    assert err.value.key == field


def test_cell_smaller_than_core_is_a_geometry_error():
    with pytest.raises(GeometryError):
        water(b=1e-7)


def test_uncharged_matrix_is_allowed():
    dl, _ = nondimensionalize(water(rho_V=0.0))
    assert dl.sigma == 0.0


@given(lam=st.sampled_from([0.5, 2.0, 10.0]), a=st.floats(1e-8, 1e-5), ratio=st.floats(1.1, 20.0),
       k=st.floats(1e6, 1e14))
def test_scale_invariance_of_gamma_and_s(lam, a, ratio, k):
    one, _ = nondimensionalize(water(a=a, b=a * ratio, k=k))
    two, _ = nondimensionalize(water(a=lam * a, b=lam * a * ratio, k=k / lam**2))
    if lam in (0.5, 2.0):
        assert (two.gamma, two.s) == (one.gamma, one.s)
    else:
        # decimal scale factors round the products once, so equality is to the last bit
        assert two.gamma == pytest.approx(one.gamma, rel=4e-16)
        assert two.s == pytest.approx(one.s, rel=4e-16)


@given(m=st.floats(1e-3, 1e3), s=st.floats(0.0, 1e3))
def test_s0_squared_equals_m_s_squared(m, s):
    p = DimensionlessParameters(gamma=0.5, delta=1.0, m=m, s=s)
    assert p.s0**2 == pytest.approx(m * s * s, rel=1e-15, abs=1e-300)


def test_with_s0_round_trips():
    p = DimensionlessParameters(gamma=0.5, delta=1.0, m=4.0).with_s0(5.0)
    assert p.s0 == pytest.approx(5.0, rel=1e-15)


@pytest.mark.parametrize("kw,key", [({"gamma": 1.2}, "gamma"), ({"gamma": 0.0}, "gamma"),
                                    ({"delta": 0.0}, "delta"), ({"sigma": -1.0}, "sigma"),
                                    ({"Z_plus": 0.5}, "Z_plus")])
def test_dimensionless_invariants(kw, key):
    base = {"gamma": 0.5, "delta": 1.0}
    with pytest.raises(ConfigError) as err:
        DimensionlessParameters(**{**base, **kw})
    assert err.value.key == key


# --- configuration files ---------------------------------------------------------

def write(tmp_path, cfg):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    return path


def test_minimal_config_takes_defaults(tmp_path):
    spec = load_config(write(tmp_path, {"dimensionless": {"gamma": 0.5, "delta": 1}}))
    assert (spec.mesh.nr, spec.mesh.ntheta) == (64, 32)
    assert spec.solver.picard_tol == 1e-8
    assert spec.params.U == 1.0 and spec.params.Z_plus == 1.0 and spec.params.nu_minus == 1.0


def test_both_parameter_blocks_are_ambiguous(tmp_path):
    with pytest.raises(ConfigError, match="ambiguous parameterization"):
        load_config(write(tmp_path, {"dimensionless": {"gamma": 0.5, "delta": 1}, "physical": {}}))


def test_out_of_range_gamma_names_key(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, {"dimensionless": {"gamma": 1.2, "delta": 1}}))
    assert err.value.key == "dimensionless.gamma"


@pytest.mark.parametrize("cfg,key", [
    ({"dimensionless": {"gamma": 0.5}}, "dimensionless.delta"),
    ({"dimensionless": {"gamma": 0.5, "delta": 1}, "mesh": {"nr": 64, "nz": 3}}, "mesh.nz"),
    ({"dimensionless": {"gamma": 0.5, "delta": 1}, "colour": 1}, "colour"),
    ({"dimensionless": {"gamma": 0.5, "delta": 1}, "solver": {"relaxation": 2.0}}, "solver.relaxation"),
    ({"dimensionless": {"gamma": 0.5, "delta": 1}, "mesh": {"ntheta": 31}}, "mesh.ntheta"),
    ({"dimensionless": {"gamma": 0.5, "delta": 1}, "sweep": {"foo": [1]}}, "sweep.foo"),
])
def test_config_errors_carry_key_path(cfg, key):
    with pytest.raises(ConfigError) as err:
        parse_config(cfg)
    assert err.value.key == key


def test_malformed_and_missing_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")


def test_physical_block_is_converted(tmp_path):
    phys = {k: getattr(water(), k) for k in ("a", "b", "mu_o", "mu_i", "k", "C0", "T", "D_plus", "D_minus",
                                               "D_m_plus", "D_m_minus", "D0", "rho_V", "eps", "U_in")}
    spec = load_config(write(tmp_path, {"physical": phys}))
    assert spec.params == nondimensionalize(water())[0]
    assert spec.scaling is not None


def test_s0_key_sets_s():
    spec = parse_config({"dimensionless": {"gamma": 0.5, "delta": 1, "s0": 6.0, "m": 4.0}})
    assert spec.params.s == pytest.approx(3.0)


def test_sweep_points_product_order():
    base = DimensionlessParameters(gamma=0.5, delta=1.0)
    pts = sweep_points(base, {"sigma": [0, 1], "delta": [0.1, 1.0]})
    assert [(p.delta, p.sigma) for p in pts] == [(0.1, 0), (0.1, 1), (1.0, 0), (1.0, 1)]
    assert pts[0] == replace(base, delta=0.1, sigma=0)
