"""Scenario configuration, validation, and initial-data construction.

Scenarios are flat key=value text files with section headers (INI style):

    [scenario]
    name = convergence_demo
    n = 2
    eps = 0.08
    N = 256
    L = 2.0
    potential = quartic36
    mode = exact_V
    backend = spectral
    dt_factor = 0.1          ; dt = dt_factor * eps^2
    T = 6.4
    volume_fix = on
    record_every = 100
    out = out/convergence

    [initial]
    type = diffused_ball
    m = 1.0
    center = 1.0, 1.0
    amplitude = 0.008
    wavenumber = 3

Every guard of the dependent modules is validated before a run starts and
violations name the failed inequality.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, GeometryError
from .field import Field, Grid, ac_energy, load_snapshot, v_volume
from .flow import FlowConfig
from .multiplier import MultiplierMode, exact_mode, neumann_mode, regularized_mode
from .potentials import PotentialSet, build_regularized_volume, make_potentials
from .radial import interpolate_to_field, psi, solve_profile_cached

__all__ = [
    "Scenario",
    "InitSpec",
    "InitReport",
    "parse_scenario",
    "serialize_scenario",
    "validate_scenario",
    "build_initial",
    "flow_config",
]

#: far-field threshold below which a field counts as numerically compact
COMPACT_TOL = 1e-14


@dataclass(frozen=True)
class InitSpec:
    """One of diffused_ball, multi_ball, raw_snapshot."""

    kind: str
    m: float = 1.0
    center: tuple = ()
    amplitude: float = 0.0
    wavenumber: int = 0
    balls: tuple = ()          # ((m_i, center_i), ...)
    truncation: float = 0.0    # 0 = profile support radius
    path: str = ""

    def __post_init__(self):
        if self.kind not in ("diffused_ball", "multi_ball", "raw_snapshot"):
            raise ConfigError(f"unknown initial-data type '{self.kind}'")


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int
    eps: float
    N: int
    L: float
    init: InitSpec
    potential: str = "quartic36"
    mode: str = "exact_V"
    delta: float = 0.0
    backend: str = "spectral"
    dt_factor: float = 0.1
    T: float = 1.0
    volume_fix: bool = True
    record_every: int = 100
    snapshot_every: int = 0
    fisher_floor: float = 0.0
    out: str = "out"
    seed: int = 0

    @property
    def dt(self) -> float:
        return self.dt_factor * self.eps**2

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.N, self.L)


def _parse_center(text: str, n: int) -> tuple:
    parts = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if len(parts) != n:
        raise ConfigError(f"center needs {n} coordinates, got {len(parts)}")
    return tuple(parts)


def _parse_balls(text: str, n: int) -> tuple:
    balls = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        mass, _, center = item.partition("@")
        balls.append((float(mass), _parse_center(center, n)))
    return tuple(balls)


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    if "scenario" not in cp or "initial" not in cp:
        raise ConfigError("config needs [scenario] and [initial] sections")
    s = cp["scenario"]
    n = s.getint("n")
    ini = cp["initial"]
    kind = ini.get("type")
    if kind == "diffused_ball":
        init = InitSpec(
            kind=kind,
            m=ini.getfloat("m", 1.0),
            center=_parse_center(ini.get("center"), n),
            amplitude=ini.getfloat("amplitude", 0.0),
            wavenumber=ini.getint("wavenumber", 0),
        )
    elif kind == "multi_ball":
        init = InitSpec(
            kind=kind,
            balls=_parse_balls(ini.get("balls"), n),
            truncation=ini.getfloat("truncation", 0.0),
        )
    else:
        init = InitSpec(kind=kind, path=ini.get("path", ""))
    return Scenario(
        name=s.get("name", "scenario"),
        n=n,
        eps=s.getfloat("eps"),
        N=s.getint("N"),
        L=s.getfloat("L"),
        potential=s.get("potential", "quartic36"),
        mode=s.get("mode", "exact_V"),
        delta=s.getfloat("delta", 0.0),
        backend=s.get("backend", "spectral"),
        dt_factor=s.getfloat("dt_factor", 0.1),
        T=s.getfloat("T", 1.0),
        volume_fix=s.getboolean("volume_fix", True),
        record_every=s.getint("record_every", 100),
        snapshot_every=s.getint("snapshot_every", 0),
        fisher_floor=s.getfloat("fisher_floor", 0.0),
        out=s.get("out", "out"),
        seed=s.getint("seed", 0),
        init=init,
    )


def serialize_scenario(sc: Scenario) -> str:
    cp = configparser.ConfigParser()
    cp["scenario"] = {
        "name": sc.name,
        "n": str(sc.n),
        "eps": repr(sc.eps),
        "N": str(sc.N),
        "L": repr(sc.L),
        "potential": sc.potential,
        "mode": sc.mode,
        "delta": repr(sc.delta),
        "backend": sc.backend,
        "dt_factor": repr(sc.dt_factor),
        "T": repr(sc.T),
        "volume_fix": "on" if sc.volume_fix else "off",
        "record_every": str(sc.record_every),
        "snapshot_every": str(sc.snapshot_every),
        "fisher_floor": repr(sc.fisher_floor),
        "out": sc.out,
        "seed": str(sc.seed),
    }
    ini: dict = {"type": sc.init.kind}
    if sc.init.kind == "diffused_ball":
        ini.update(
            m=repr(sc.init.m),
            center=", ".join(repr(c) for c in sc.init.center),
            amplitude=repr(sc.init.amplitude),
            wavenumber=str(sc.init.wavenumber),
        )
    elif sc.init.kind == "multi_ball":
        ini["balls"] = "; ".join(
            f"{repr(m)}@" + ", ".join(repr(c) for c in cen) for m, cen in sc.init.balls
        )
        ini["truncation"] = repr(sc.init.truncation)
    else:
        ini["path"] = sc.init.path
    cp["initial"] = ini
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def validate_scenario(sc: Scenario) -> None:
    """Check every guard of the dependent modules; raise naming the inequality."""
    if sc.n < 2:
        raise ConfigError(f"flow requires dimension n >= 2, got n = {sc.n}")
    grid = sc.grid  # checks N power of two >= 16, L > 0
    if not grid.h < sc.eps / 2.0:
        raise ConfigError(
            f"resolution guard violated: h = L/N = {grid.h:.4g} must satisfy h < eps/2 = {sc.eps / 2:.4g}"
        )
    if not sc.dt <= 0.25 * sc.eps**2:
        raise ConfigError(
            f"stiffness guard violated: dt = {sc.dt:.4g} must satisfy dt <= 0.25*eps^2 = {0.25 * sc.eps**2:.4g}"
        )
    if sc.mode not in ("exact_V", "regularized", "neumann_mu"):
        raise ConfigError(f"unknown multiplier mode '{sc.mode}'")
    if sc.mode == "regularized" and not (0.0 < sc.delta <= 0.1):
        raise ConfigError(f"regularized mode needs delta in (0, 0.1], got {sc.delta}")
    if sc.backend not in ("spectral", "fd"):
        raise ConfigError(f"unknown backend '{sc.backend}'")
    if sc.init.kind == "diffused_ball":
        _check_ball_geometry(sc, sc.init.m, sc.init.center)
    elif sc.init.kind == "multi_ball":
        for m_i, c_i in sc.init.balls:
            _check_ball_geometry(sc, m_i, c_i)


def _check_ball_geometry(sc: Scenario, m: float, center: tuple) -> None:
    from .field import omega_n

    r0 = (m / omega_n(sc.n)) ** (1.0 / sc.n)
    if r0 + 5.0 * sc.eps > sc.L / 2.0:
        raise GeometryError(
            f"geometry guard violated: ball radius {r0:.4g} + 5*eps = {r0 + 5 * sc.eps:.4g} "
            f"must not exceed L/2 = {sc.L / 2:.4g}"
        )
    if len(center) != sc.n:
        raise ConfigError(f"center {center} does not match dimension {sc.n}")


def flow_config(sc: Scenario, pot: PotentialSet) -> FlowConfig:
    if sc.mode == "exact_V":
        mode = exact_mode()
    elif sc.mode == "regularized":
        mode = regularized_mode(build_regularized_volume(pot, sc.delta))
    else:
        mode = neumann_mode()
    return FlowConfig(pot=pot, mode=mode, backend=sc.backend, volume_fix=sc.volume_fix)


@dataclass
class InitReport:
    ac: float
    volume: float
    hyp_double_energy: bool   # AC(u0) < 2 Psi(eps, 1/2)
    numerically_compact: bool
    two_psi_half: float


def _is_numerically_compact(u: Field) -> bool:
    """True when the support stays clear of a collar at the box boundary.

    The collar is anchored at the coordinate origin faces, which matches
    initial data centered in the box.
    """
    vals = np.abs(u.values)
    w = 2
    for ax in range(u.grid.n):
        sl = [slice(None)] * u.grid.n
        sl[ax] = slice(0, w)
        if vals[tuple(sl)].max() > COMPACT_TOL:
            return False
    return True


def _volume_normalize(values: np.ndarray, grid: Grid, pot: PotentialSet, target: float) -> np.ndarray:
    from .flow import _volume_correction

    return _volume_correction(values, pot.v, pot.dv, grid, target, max_iter=20, rtol=1e-14)


def build_initial(spec: InitSpec, sc: Scenario, pot: PotentialSet) -> tuple[Field, InitReport]:
    """Construct the initial field and report the theorem-hypothesis flags."""
    grid = sc.grid
    if spec.kind == "raw_snapshot":
        u, _, _ = load_snapshot(spec.path)
        if u.grid != grid:
            raise ConfigError(
                f"snapshot grid {u.grid} does not match scenario grid {grid}"
            )
    elif spec.kind == "diffused_ball":
        prof = solve_profile_cached(sc.eps, spec.m, sc.n, pot)
        if spec.amplitude == 0.0:
            u = interpolate_to_field(prof, grid, spec.center)
        else:
            u = _perturbed_ball(prof, grid, spec.center, spec.amplitude, spec.wavenumber)
        vals = _volume_normalize(u.values, grid, pot, spec.m)
        u = Field(grid, vals)
    elif spec.kind == "multi_ball":
        vals = np.zeros(grid.shape)
        for m_i, c_i in spec.balls:
            prof = solve_profile_cached(sc.eps, m_i, sc.n, pot)
            vals = vals + interpolate_to_field(prof, grid, c_i).values
        vals = np.clip(vals, 0.0, 1.0)
        vals[vals < COMPACT_TOL] = 0.0
        vals = _volume_normalize(vals, grid, pot, 1.0)
        u = Field(grid, vals)
    else:  # pragma: no cover
        raise ConfigError(spec.kind)

    rep = ac_energy(u, sc.eps, pot, backend=sc.backend)
    two_half = 2.0 * psi(sc.eps, 0.5, sc.n, pot)
    return u, InitReport(
        ac=rep.ac,
        volume=rep.volume,
        hyp_double_energy=rep.ac < two_half,
        numerically_compact=_is_numerically_compact(u),
        two_psi_half=two_half,
    )


def _perturbed_ball(prof, grid: Grid, center, amplitude: float, wavenumber: int) -> Field:
    """Ball with the interface radius modulated by cos(k * azimuth)."""
    xs = grid.meshgrid()
    dx = [(x - c + grid.L / 2.0) % grid.L - grid.L / 2.0 for x, c in zip(xs, center)]
    d = np.sqrt(sum(v**2 for v in dx))
    theta = np.arctan2(dx[1], dx[0])
    rho = d * (1.0 - amplitude / prof.ball_radius * np.cos(wavenumber * theta))
    spl = prof.spline()
    vals = np.where(rho <= prof.R, spl(np.minimum(np.maximum(rho, 0.0), prof.R)), 0.0)
    vals = np.clip(vals, 0.0, 1.0)
    vals[vals < COMPACT_TOL] = 0.0
    return Field(grid, vals)
