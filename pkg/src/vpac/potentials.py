"""Double-well potential W, interface density Phi, and volume potentials.

The package normalizes every double well so that ``int_0^1 sqrt(W) = 1``.
The associated quantities are

    Phi(r) = int_0^r sqrt(W),        V(r) = Phi(r)**(n/(n-1)),

so that ``V`` ranges from 0 to 1 and the functional ``integral of V(u)``
measures the enclosed (diffused) volume.  The default well is the quartic

    W(r) = 36 r^2 (1-r)^2,

for which Phi(r) = 3r^2 - 2r^3 and the normalization is exact.

Delta-regularized volume potentials ``V_delta`` replace V near r=0 by an
identically vanishing cap so that their second derivative is Lipschitz;
they are tabulated once on a fine grid and evaluated by cubic splines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .errors import ConfigError, ResolutionError

__all__ = [
    "PotentialSet",
    "RegularizedVolume",
    "make_default_potentials",
    "make_potentials",
    "register_potential",
    "build_regularized_volume",
    "potential_taylor_residual",
    "taylor_exponent_fit",
    "gamma_exponent",
]

#: default upper bound for the regularization parameter delta
DELTA0 = 0.1

#: number of intervals of the V_delta tabulation grid
TAB_POINTS = 2**16


def gamma_exponent(n: int) -> float:
    """Hoelder exponent of V'' near the lower well: min(1, 2/(n-1))."""
    return min(1.0, 2.0 / (n - 1))


@dataclass(frozen=True)
class PotentialSet:
    """Evaluators for W, Phi, V and their derivatives on [0, 1].

    All evaluators are pure and vectorized over numpy arrays.  ``V''`` is
    computed from a closed form that stays regular as r -> 0 (the naive
    product Phi**(p-2) * Phi'**2 is an indeterminate 0*inf there).
    """

    n: int
    name: str
    w: Callable
    dw: Callable
    d2w: Callable
    phi: Callable
    dphi: Callable
    v: Callable
    dv: Callable
    d2v: Callable
    normalization_residual: float

    @property
    def volume_power(self) -> float:
        """Exponent p = n/(n-1) relating V to Phi."""
        return self.n / (self.n - 1)


def _quartic36_family(n: int) -> PotentialSet:
    p = n / (n - 1.0)

    def w(r):
        r = np.asarray(r, dtype=float)
        return 36.0 * r**2 * (1.0 - r) ** 2

    def dw(r):
        r = np.asarray(r, dtype=float)
        return 72.0 * r * (1.0 - r) * (1.0 - 2.0 * r)

    def d2w(r):
        r = np.asarray(r, dtype=float)
        return 72.0 * (6.0 * r**2 - 6.0 * r + 1.0)

    def phi(r):
        r = np.asarray(r, dtype=float)
        return r**2 * (3.0 - 2.0 * r)

    def dphi(r):
        r = np.asarray(r, dtype=float)
        return 6.0 * r * (1.0 - r)

    def v(r):
        return phi(r) ** p

    def dv(r):
        r = np.asarray(r, dtype=float)
        return p * phi(r) ** (p - 1.0) * dphi(r)

    def d2v(r):
        # V'' = p Phi^(p-1) [ (p-1) Phi'^2/Phi + Phi'' ]; the ratio
        # Phi'^2/Phi = 36 (1-r)^2 / (3-2r) is regular on [0, 1].
        r = np.asarray(r, dtype=float)
        ratio = 36.0 * (1.0 - r) ** 2 / (3.0 - 2.0 * r)
        d2phi = 6.0 - 12.0 * r
        return p * phi(r) ** (p - 1.0) * ((p - 1.0) * ratio + d2phi)

    residual = abs(quad(lambda r: math.sqrt(w(r)), 0.0, 1.0, epsabs=1e-13)[0] - 1.0)
    return PotentialSet(
        n=n,
        name="quartic36",
        w=w,
        dw=dw,
        d2w=d2w,
        phi=phi,
        dphi=dphi,
        v=v,
        dv=dv,
        d2v=d2v,
        normalization_residual=residual,
    )


_REGISTRY: dict[str, Callable[[int], PotentialSet]] = {"quartic36": _quartic36_family}


def register_potential(name: str, factory: Callable[[int], PotentialSet]) -> None:
    """Register an alternative double-well family under ``name``."""
    _REGISTRY[name] = factory


def make_potentials(name: str, n: int) -> PotentialSet:
    if name not in _REGISTRY:
        raise ConfigError(f"unknown potential family '{name}'")
    return make_default_potentials(n) if name == "quartic36" else _REGISTRY[name](n)


def make_default_potentials(n: int) -> PotentialSet:
    """Build the default quartic double-well family in dimension n >= 2."""
    if int(n) != n or n < 2:
        raise ConfigError(f"dimension n must be an integer >= 2, got {n}")
    return _quartic36_family(int(n))


@dataclass(frozen=True)
class RegularizedVolume:
    """Tabulated delta-regularization of the volume potential.

    ``v``/``dv``/``d2v`` evaluate the mollified ramp composition on [0, 1]
    through cubic splines of a fine tabulation; ``d2v`` is piecewise linear
    and therefore Lipschitz with the measured constant ``lip_d2v``.
    """

    delta: float
    n: int
    r: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    v: Callable = field(repr=False)
    dv: Callable = field(repr=False)
    d2v: Callable = field(repr=False)
    lip_d2v: float = 0.0

    @property
    def resolution(self) -> float:
        return float(self.r[1] - self.r[0])


def _bump_kernel(width: float, h: float) -> np.ndarray:
    """Compactly supported smooth bump on (-width, width), unit mass on the grid."""
    m = int(np.floor(width / h))
    y = np.arange(-m, m + 1) * h / width
    with np.errstate(divide="ignore", over="ignore"):
        k = np.where(np.abs(y) < 1.0, np.exp(-1.0 / np.maximum(1.0 - y**2, 1e-300)), 0.0)
    return k / (k.sum() * h)


def build_regularized_volume(p: PotentialSet, delta: float) -> RegularizedVolume:
    """Tabulate V_delta = (mollifier of width delta^2) * (ramp(Phi))^(n/(n-1)).

    The ramp vanishes on [0, delta] and rises affinely to 1 at 1, which cuts
    the non-Lipschitz behavior of V'' at the lower well while leaving the
    upper well untouched (Phi'(1)=0 already makes V_delta'(1)=0 there).
    """
    if not (0.0 < delta <= DELTA0):
        raise ConfigError(f"delta must lie in (0, {DELTA0}], got {delta}")
    h = 1.0 / TAB_POINTS
    width = delta**2
    if width / h < 8:
        raise ResolutionError(
            f"tabulation grid (h={h:.2e}) too coarse for mollifier width {width:.2e}"
        )
    x = np.linspace(0.0, 1.0, TAB_POINTS + 1)
    ramp = np.clip((p.phi(x) - delta) / (1.0 - delta), 0.0, 1.0)
    g = ramp ** p.volume_power

    kernel = _bump_kernel(width, h)
    m = (len(kernel) - 1) // 2
    # pad with zeros below r=0 (g vanishes there) and by even reflection
    # about r=1 so the mollified slope vanishes at the endpoint
    padded = np.concatenate([np.zeros(m), g, g[-2 : -2 - m : -1]])
    smooth = np.convolve(padded, kernel * h, mode="valid")
    smooth = np.clip(smooth, 0.0, 1.0)

    spline = CubicSpline(x, smooth)
    d1 = spline.derivative(1)
    d2 = spline.derivative(2)
    d2_vals = d2(x)
    lip = float(np.max(np.abs(np.diff(d2_vals))) / h)
    return RegularizedVolume(
        delta=float(delta),
        n=p.n,
        r=x,
        values=smooth,
        v=spline,
        dv=d1,
        d2v=d2,
        lip_d2v=lip,
    )


def potential_taylor_residual(
    p: PotentialSet, order: int = 2, samples: int = 400, seed: int = 0
) -> float:
    """Smallest C with |V(r)-V(s)-V'(s)(r-s)-V''(s)(r-s)^2/2| <= C |r-s|^(2+gamma).

    Sampled over random pairs (r, s) in (0, 1)^2; gamma = min(1, 2/(n-1)).
    """
    if order != 2:
        raise ConfigError("only the second-order expansion is supported")
    rng = np.random.default_rng(seed)
    r = rng.uniform(1e-6, 1.0 - 1e-6, samples)
    s = rng.uniform(1e-6, 1.0 - 1e-6, samples)
    keep = np.abs(r - s) > 1e-9
    r, s = r[keep], s[keep]
    resid = np.abs(p.v(r) - p.v(s) - p.dv(s) * (r - s) - 0.5 * p.d2v(s) * (r - s) ** 2)
    return float(np.max(resid / np.abs(r - s) ** (2.0 + gamma_exponent(p.n))))


def taylor_exponent_fit(
    f: Callable, df: Callable, d2f: Callable, samples: int = 2000, seed: int = 1
) -> float:
    """Log-log slope of the second-order Taylor remainder of f against |r-s|."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.05, 0.95, samples)
    d = 10.0 ** rng.uniform(-5, -1, samples) * rng.choice([-1.0, 1.0], samples)
    r = np.clip(s + d, 1e-9, 1.0 - 1e-9)
    resid = np.abs(f(r) - f(s) - df(s) * (r - s) - 0.5 * d2f(s) * (r - s) ** 2)
    keep = resid > 1e-300
    slope = np.polyfit(np.log(np.abs(r - s)[keep]), np.log(resid[keep]), 1)[0]
    return float(slope)
