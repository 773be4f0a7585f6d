"""Volume-preserving Lagrange multiplier and its runtime sanity bounds.

The multiplier is the spatial quotient

    lambda[u] = ( int 2 eps^2 |grad u|^2 Vm''(u) + W'(u) Vm'(u) )
                / ( eps * int Vm'(u)^2 ),

where Vm is the volume potential of the active mode: the exact V, a
delta-regularized V_delta, or the linear potential t (bounded-box mean
constraint), for which the quotient collapses to int W'(u) / (eps |box|).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDenominator
from .field import Field, ac_energy, gradient_sq, quadrature, v_volume
from .potentials import PotentialSet, RegularizedVolume

__all__ = [
    "MultiplierMode",
    "exact_mode",
    "regularized_mode",
    "neumann_mode",
    "mode_potentials",
    "lambda_multiplier",
    "lambda_parts",
    "BoundReport",
    "BoundTracker",
    "lambda_bound_check",
    "DENOM_THRESHOLD",
]

#: degeneracy threshold for the mean of Vm'(u)^2 over the box
DENOM_THRESHOLD = 1e-14


@dataclass(frozen=True)
class MultiplierMode:
    """One of exact_V, regularized(delta), neumann_mu."""

    kind: str
    reg: RegularizedVolume | None = None

    def __post_init__(self):
        if self.kind not in ("exact_V", "regularized", "neumann_mu"):
            raise ConfigError(f"unknown multiplier mode '{self.kind}'")
        if self.kind == "regularized" and self.reg is None:
            raise ConfigError("regularized mode requires a built RegularizedVolume")

    @property
    def delta(self) -> float | None:
        return self.reg.delta if self.reg is not None else None


def exact_mode() -> MultiplierMode:
    return MultiplierMode("exact_V")


def regularized_mode(reg: RegularizedVolume) -> MultiplierMode:
    return MultiplierMode("regularized", reg=reg)


def neumann_mode() -> MultiplierMode:
    return MultiplierMode("neumann_mu")


def mode_potentials(mode: MultiplierMode, p: PotentialSet):
    """(Vm, Vm', Vm'') callables for the mode's volume potential."""
    if mode.kind == "exact_V":
        return p.v, p.dv, p.d2v
    if mode.kind == "regularized":
        return mode.reg.v, mode.reg.dv, mode.reg.d2v
    # linear potential: V(t) = t
    return (
        lambda r: np.asarray(r, dtype=float),
        lambda r: np.ones_like(np.asarray(r, dtype=float)),
        lambda r: np.zeros_like(np.asarray(r, dtype=float)),
    )


def lambda_parts(
    u: Field,
    eps: float,
    mode: MultiplierMode,
    p: PotentialSet,
    grad_sq: np.ndarray | None = None,
    backend: str = "spectral",
):
    """(numerator, denominator) of the multiplier quotient.

    ``grad_sq`` may pass a precomputed |grad u|^2 array to avoid repeated
    transforms inside the flow loop.
    """
    g = u.grid
    vm, dvm, d2vm = mode_potentials(mode, p)
    if grad_sq is None:
        grad_sq = gradient_sq(u, backend).values
    dv_u = dvm(u.values)
    num = quadrature(g, 2.0 * eps**2 * grad_sq * d2vm(u.values) + p.dw(u.values) * dv_u)
    den = eps * quadrature(g, dv_u**2)
    return num, den


def lambda_multiplier(
    u: Field,
    eps: float,
    mode: MultiplierMode,
    p: PotentialSet,
    grad_sq: np.ndarray | None = None,
    backend: str = "spectral",
) -> float:
    """Evaluate the volume-preserving multiplier for the given mode.

    Raises DegenerateDenominator when the box-mean of Vm'(u)^2 falls below
    1e-14 (an empty or vanishing interface).
    """
    num, den = lambda_parts(u, eps, mode, p, grad_sq=grad_sq, backend=backend)
    if den <= eps * DENOM_THRESHOLD * u.grid.volume:
        raise DegenerateDenominator(den)
    return num / den


@dataclass
class BoundReport:
    lambda_value: float
    ratio_upper: float       # |lambda| / (AC^(2n+1)/Vol^(2n) * dirichlet)
    ratio_l2: float          # int u^2 / (eps*AC + Vol)
    flagged: bool


@dataclass
class BoundTracker:
    """Running maxima of the bound ratios; flags a 10x regression jump."""

    max_upper: float = 0.0
    max_l2: float = 0.0

    def update(self, upper: float, l2: float) -> bool:
        flag = (self.max_upper > 0 and upper > 10.0 * self.max_upper) or (
            self.max_l2 > 0 and l2 > 10.0 * self.max_l2
        )
        self.max_upper = max(self.max_upper, upper)
        self.max_l2 = max(self.max_l2, l2)
        return flag


def lambda_bound_check(
    u: Field,
    eps: float,
    p: PotentialSet,
    tracker: BoundTracker | None = None,
    backend: str = "spectral",
) -> BoundReport:
    """Empirical ratios for the multiplier growth and L2 coercivity bounds."""
    lam = lambda_multiplier(u, eps, exact_mode(), p, backend=backend)
    rep = ac_energy(u, eps, p, backend=backend)
    n = p.n
    vol = max(rep.volume, 1e-300)
    envelope = rep.ac ** (2 * n + 1) / vol ** (2 * n) * max(rep.dirichlet, 1e-300)
    ratio_upper = abs(lam) / envelope
    u_sq = quadrature(u.grid, u.values**2)
    ratio_l2 = u_sq / (eps * rep.ac + vol)
    flagged = tracker.update(ratio_upper, ratio_l2) if tracker is not None else False
    return BoundReport(lambda_value=lam, ratio_upper=ratio_upper, ratio_l2=ratio_l2, flagged=flagged)
