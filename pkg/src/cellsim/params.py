"""Physical and dimensionless parameters of the membrane cell, plus run configuration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import scipy.constants as sc

F0 = sc.value("Faraday constant")
R_GAS = sc.R
EPS0 = sc.epsilon_0


class ConfigError(ValueError):
    """Invalid parameter or configuration value; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class GeometryError(ConfigError):
    pass


def _check_positive(obj, names, allow_zero=()):
    for name in names:
        value = getattr(obj, name)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(name, f"must be a finite number, got {value!r}")
        if name in allow_zero:
            if value < 0:
                raise ConfigError(name, f"must be >= 0, got {value!r}")
        elif value <= 0:
            raise ConfigError(name, f"must be > 0, got {value!r}")


@dataclass(frozen=True)
class PhysicalParameters:
    """SI inputs. ``rho_V`` is the fixed-charge density of the core (C/m^3)."""

    a: float
    b: float
    mu_o: float
    mu_i: float
    k: float
    C0: float
    T: float
    D_plus: float
    D_minus: float
    D_m_plus: float
    D_m_minus: float
    D0: float
    rho_V: float
    eps: float
    U_in: float
    Z_plus: float = 1.0
    Z_minus: float = 1.0
    F0: float = F0
    R: float = R_GAS
    eps0: float = EPS0

    def __post_init__(self):
        names = [f.name for f in fields(self)]
        _check_positive(self, names, allow_zero=("rho_V",))
        if self.b <= self.a:
            raise GeometryError("b", f"cell radius b={self.b} must exceed core radius a={self.a}")
        for name in ("Z_plus", "Z_minus"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "charge modulus must be >= 1")


@dataclass(frozen=True)
class DimensionlessParameters:
    """Dimensionless parameter vector driving every solve.

    ``s`` is the inner drag number sqrt(a^2 k / mu_i); the combined Brinkman
    number ``s0 = sqrt(m) * s`` is derived. ``c_inf_plus``/``c_inf_minus`` are
    the reservoir concentrations used to build the equilibrium base state.
    """

    gamma: float
    delta: float
    Pe: float = 1.0
    sigma: float = 0.0
    s: float = 1.0
    m: float = 1.0
    nu_plus: float = 1.0
    nu_minus: float = 1.0
    nu_m_plus: float = 1.0
    nu_m_minus: float = 1.0
    Z_plus: float = 1.0
    Z_minus: float = 1.0
    U: float = 1.0
    c_inf_plus: float = 1.0
    c_inf_minus: float = 1.0

    def __post_init__(self):
        _check_positive(
            self,
            [f.name for f in fields(self)],
            allow_zero=("sigma", "s", "U"),
        )
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma", f"must lie in (0, 1), got {self.gamma!r}")
        for name in ("Z_plus", "Z_minus"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "charge modulus must be >= 1")

    @property
    def s0(self) -> float:
        return math.sqrt(self.m) * self.s

    @property
    def b(self) -> float:
        """Dimensionless cell radius 1/gamma."""
        return 1.0 / self.gamma

    @property
    def drag(self) -> float:
        """Inner drag coefficient m*s^2 of the momentum equation."""
        return self.m * self.s * self.s

    def nu(self, species: int, inner: bool) -> float:
        if species > 0:
            return self.nu_m_plus if inner else self.nu_plus
        return self.nu_m_minus if inner else self.nu_minus

    def with_s0(self, s0: float) -> "DimensionlessParameters":
        return replace(self, s=s0 / math.sqrt(self.m))

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ScalingReport:
    p0: float
    U0: float
    d: float
    R_b: float
    mapping: dict[str, str] = field(default_factory=dict)
    inputs: PhysicalParameters | None = None

    def recompute_d(self) -> float:
        ph = self.inputs
        return (ph.C0 * ph.F0**2 / (ph.eps * ph.eps0 * ph.R * ph.T)) ** -0.5

    def recompute_R_b(self) -> float:
        return math.sqrt(self.inputs.mu_o / self.inputs.k)


def nondimensionalize(phys: PhysicalParameters) -> tuple[DimensionlessParameters, ScalingReport]:
    p0 = phys.R * phys.T * phys.C0
    U0 = phys.a * p0 / phys.mu_o
    d = (phys.C0 * phys.F0**2 / (phys.eps * phys.eps0 * phys.R * phys.T)) ** -0.5
    R_b = math.sqrt(phys.mu_o / phys.k)
    dl = DimensionlessParameters(
        gamma=phys.a / phys.b,
        delta=d / phys.a,
        Pe=phys.a * U0 / phys.D0,
        sigma=phys.rho_V / (phys.F0 * phys.C0),
        s=math.sqrt(phys.a * phys.a * phys.k / phys.mu_i),
        m=phys.mu_i / phys.mu_o,
        nu_plus=phys.D0 / phys.D_plus,
        nu_minus=phys.D0 / phys.D_minus,
        nu_m_plus=phys.D0 / phys.D_m_plus,
        nu_m_minus=phys.D0 / phys.D_m_minus,
        Z_plus=phys.Z_plus,
        Z_minus=phys.Z_minus,
        U=phys.U_in / U0,
    )
    mapping = {
        "r": "r / a",
        "v": "v / U0",
        "p": "p / p0",
        "C": "C / C0",
        "phi": "phi * F0 / (R T)",
        "j": "J / (U0 C0)",
        "gamma": "a / b",
        "delta": "d / a",
        "Pe": "a U0 / D0",
        "sigma": "rho_V / (F0 C0)",
        "s": "sqrt(a^2 k / mu_i)",
        "m": "mu_i / mu_o",
        "nu": "D0 / D",
        "U": "U_in / U0",
    }
    return dl, ScalingReport(p0=p0, U0=U0, d=d, R_b=R_b, mapping=mapping, inputs=phys)


# --- run configuration -------------------------------------------------------

@dataclass(frozen=True)
class MeshSettings:
    nr: int = 64
    ntheta: int = 32

    def __post_init__(self):
        for name in ("nr", "ntheta"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 4:
                raise ConfigError(f"mesh.{name}", f"must be an integer >= 4, got {v!r}")
        if self.ntheta % 2:
            raise ConfigError("mesh.ntheta", "must be even (equator node required)")


@dataclass(frozen=True)
class SolverSettings:
    picard_tol: float = 1e-8
    picard_max_iter: int = 200
    newton_tol: float = 1e-10
    relaxation: float = 0.7
    init: str = "equilibrium"

    def __post_init__(self):
        if not (0.0 < self.relaxation <= 1.0):
            raise ConfigError("solver.relaxation", "must lie in (0, 1]")
        for name in ("picard_tol", "newton_tol"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not (v > 0):
                raise ConfigError(f"solver.{name}", "must be > 0")
        if not isinstance(self.picard_max_iter, int) or self.picard_max_iter < 1:
            raise ConfigError("solver.picard_max_iter", "must be a positive integer")
        if self.init not in ("equilibrium", "zero"):
            raise ConfigError("solver.init", "must be 'equilibrium' or 'zero'")


@dataclass(frozen=True)
class AuditSettings:
    enabled: bool = True
    inequalities: tuple[str, ...] = ()
    alpha: float = 0.0


@dataclass(frozen=True)
class OutputSettings:
    dir: str | None = None
    fields_csv: bool = True


@dataclass(frozen=True)
class RunSpecification:
    params: DimensionlessParameters
    physical: PhysicalParameters | None = None
    scaling: ScalingReport | None = None
    mesh: MeshSettings = MeshSettings()
    solver: SolverSettings = SolverSettings()
    audit: AuditSettings = AuditSettings()
    output: OutputSettings = OutputSettings()
    sweep: dict[str, list[float]] | None = None
    mms_cases: tuple[str, ...] = ()
    raw: dict = field(default_factory=dict, compare=False)


_TOP_KEYS = {"physical", "dimensionless", "mesh", "solver", "audit", "output", "sweep", "mms"}


def _take(block: dict, cls, path: str, convert=None):
    if not isinstance(block, dict):
        raise ConfigError(path, "must be a JSON object")
    allowed = {f.name for f in fields(cls)}
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")
    kwargs = dict(block)
    if convert:
        kwargs = convert(kwargs)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        key = exc.key if exc.key.startswith(path) else f"{path}.{exc.key}"
        raise ConfigError(key, str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(cfg: dict) -> RunSpecification:
    """Validate an already-decoded configuration mapping."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    for key in cfg:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    has_phys, has_dl = "physical" in cfg, "dimensionless" in cfg
    if has_phys and has_dl:
        raise ConfigError("<root>", "ambiguous parameterization: give 'physical' or 'dimensionless', not both")
    if not (has_phys or has_dl):
        raise ConfigError("<root>", "missing required key 'physical' or 'dimensionless'")

    physical = scaling = None
    if has_phys:
        physical = _take(cfg["physical"], PhysicalParameters, "physical")
        params, scaling = nondimensionalize(physical)
    else:
        block = cfg["dimensionless"]
        if not isinstance(block, dict):
            raise ConfigError("dimensionless", "must be a JSON object")
        for req in ("gamma", "delta"):
            if req not in block:
                raise ConfigError(f"dimensionless.{req}", "missing required key")
        block = dict(block)
        if "s0" in block:
            if "s" in block:
                raise ConfigError("dimensionless.s0", "give either 's' or 's0'")
            s0 = block.pop("s0")
            if not isinstance(s0, (int, float)) or not s0 >= 0:
                raise ConfigError("dimensionless.s0", "must be >= 0")
            block["s"] = s0 / math.sqrt(block.get("m", 1.0))
        params = _take(block, DimensionlessParameters, "dimensionless")

    mesh = _take(cfg.get("mesh", {}), MeshSettings, "mesh")
    solver = _take(cfg.get("solver", {}), SolverSettings, "solver")
    audit = _take(cfg.get("audit", {}), AuditSettings, "audit",
                  convert=lambda kw: {**kw, **({"inequalities": tuple(kw["inequalities"])} if "inequalities" in kw else {})})
    output = _take(cfg.get("output", {}), OutputSettings, "output")

    sweep = None
    if "sweep" in cfg:
        sweep = cfg["sweep"]
        if not isinstance(sweep, dict) or not sweep:
            raise ConfigError("sweep", "must be a non-empty object of parameter lists")
        dl_names = {f.name for f in fields(DimensionlessParameters)} | {"s0"}
        for key, values in sweep.items():
            if key not in dl_names:
                raise ConfigError(f"sweep.{key}", "unknown parameter")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{key}", "must be a non-empty list")
    mms_cases: tuple[str, ...] = ()
    if "mms" in cfg:
        block = cfg["mms"]
        if not isinstance(block, dict) or set(block) - {"cases"}:
            raise ConfigError("mms", "expected {'cases': [...]}")
        mms_cases = tuple(block.get("cases", ()))

    return RunSpecification(
        params=params, physical=physical, scaling=scaling, mesh=mesh, solver=solver,
        audit=audit, output=output, sweep=sweep, mms_cases=mms_cases, raw=cfg,
    )


def load_config(path: str | Path) -> RunSpecification:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(str(path), "configuration file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"malformed JSON ({exc})") from None
    return parse_config(cfg)


def sweep_points(base: DimensionlessParameters, grid: dict[str, list[Any]]) -> list[DimensionlessParameters]:
    """Cartesian product of ``grid`` applied on top of ``base`` in canonical key order."""
    import itertools

    keys = sorted(grid)
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        upd = dict(zip(keys, combo))
        if "s0" in upd:
            upd["s"] = upd.pop("s0") / math.sqrt(upd.get("m", base.m))
        points.append(replace(base, **upd))
    return points
