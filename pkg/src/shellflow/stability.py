"""Shell steady states and their radial stability.

For W = |x|^a/a - |x|^b/b the uniform shell of radius R_ab is the unique
shell steady state. Its fate under radial perturbations is decided by two
scalars evaluated on the shell: d1 omega(R, R) (fattening) and
d/dR omega(R, R) (shifting). For power laws both have closed forms in terms
of Beta functions, which gives the bifurcation curve b*(a, N).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import kernel
from .kernel import KernelContext
from .potential import OmegaContinuity, PowerLawPotential, RadialPotentialDescriptor, regularity
from .specfun import log_gamma

BOUNDARY_RTOL = 1e-12


class Regime(enum.Enum):
    NON_C1_BLOWUP = "NonC1Blowup"
    FATTENING_UNSTABLE = "FatteningUnstable"
    RADIALLY_STABLE = "RadiallyStable"
    ON_BOUNDARY = "OnBoundary"


@dataclass(frozen=True)
class StabilityReport:
    a: float
    b: float
    dim: int
    steady_radius: float
    regime: Regime
    boundary_b: float
    d1_at_shell: float
    shift_derivative: float
    c0_residual: float
    c1_satisfied: bool
    c2_satisfied: bool
    criteria_agree: bool = True

    @property
    def d1_infinite(self) -> bool:
        return math.isinf(self.d1_at_shell)


@dataclass(frozen=True)
class PairEnergySample:
    r: float
    eta: float
    value: float


@dataclass(frozen=True)
class ConditionValues:
    """(C0) residual omega(R,R), (C1) value d1 omega(R,R), (C2) value (d1+d2) omega(R,R).

    In the non-C1 regime ``c1`` is +inf and ``c1_infinite`` is set; ``c2`` is
    still the finite slope of the diagonal map R -> omega(R, R).
    """

    c0: float
    c1: float
    c2: float
    c1_infinite: bool = False


@dataclass(frozen=True)
class ModeProbe:
    split_delta_E: float
    shift_delta_E: float


@dataclass
class TailControlResult:
    no_counterexample_found: bool
    counterexamples: list = field(default_factory=list)

    def __bool__(self):
        return self.no_counterexample_found


def _log_beta(x, y):
    return log_gamma(x) + log_gamma(y) - log_gamma(x + y)


def shell_radius(a: float, b: float, dim: int) -> float:
    """Radius R_ab of the steady shell, omega(R_ab, R_ab) = 0."""
    PowerLawPotential(a, b, dim)
    if dim == 1:
        return 0.5
    h = (dim - 1) / 2
    log_ratio = _log_beta((b + dim - 1) / 2, h) - _log_beta((a + dim - 1) / 2, h)
    return 0.5 * math.exp(log_ratio / (a - b))


def boundary_b(a: float, dim: int) -> float:
    """b*(a, N): the curve separating fattening-unstable from stable pairs."""
    den = a + dim - 3
    if den <= 0:
        raise ValueError(f"boundary_b needs a + N - 3 > 0 (a={a}, N={dim})")
    return (3 * a - dim * a - 10 + 7 * dim - dim**2) / den


def _d1_closed_form(p: PowerLawPotential, R: float) -> float:
    return sum(
        coef * R ** (c - 2) * ((c - 1) * kernel.psi_at_one(c, p.dim) - kernel.psi_prime_at_one(c, p.dim))
        for coef, c in p.terms
    )


def classify(a: float, b: float, dim: int) -> StabilityReport:
    p = PowerLawPotential(a, b, dim)
    R = shell_radius(a, b, dim)
    try:
        bnd = boundary_b(a, dim)
    except ValueError:
        bnd = math.nan
    c0 = float(kernel.diagonal_value(p, R))
    shift = float(kernel.diagonal_slope(p, R))

    if regularity(p).omega_continuity_class is not OmegaContinuity.C1:
        return StabilityReport(
            a, b, dim, R, Regime.NON_C1_BLOWUP, bnd, math.inf, shift, c0,
            c1_satisfied=False, c2_satisfied=shift <= 0,
        )

    d1 = _d1_closed_form(p, R)
    if abs(b - bnd) <= BOUNDARY_RTOL * max(1.0, abs(bnd)):
        regime = Regime.ON_BOUNDARY
    elif b < bnd:
        regime = Regime.FATTENING_UNSTABLE
    else:
        regime = Regime.RADIALLY_STABLE
    # the same decision through the psi'(1)/psi(1) inequality
    unstable = a - kernel.psi_prime_ratio_at_one(a, dim) < b - kernel.psi_prime_ratio_at_one(b, dim)
    agree = regime is Regime.ON_BOUNDARY or (
        (regime is Regime.FATTENING_UNSTABLE) == unstable == (d1 > 0)
    )
    return StabilityReport(
        a, b, dim, R, regime, bnd, d1, shift, c0,
        c1_satisfied=d1 <= 0, c2_satisfied=shift <= 0, criteria_agree=agree,
    )


def bifurcation_sweep(a_values: Sequence[float], b_steps: int, dim: int):
    """Classify an (a, b) grid; b runs over the open interval (2 - N, a).

    Returns ``(reports, skipped)``; points outside the valid domain are skipped
    and counted.
    """
    reports = []
    skipped = 0
    for a in a_values:
        lo = 2 - dim
        if not a > lo:
            skipped += b_steps
            continue
        for k in range(1, b_steps + 1):
            b = lo + (a - lo) * k / (b_steps + 1)
            try:
                reports.append(classify(a, b, dim))
            except ValueError:
                skipped += 1
    return reports, skipped


def find_steady_radius(
    d,
    dim: int,
    interval=(0.1, 2.0),
    ctx: Optional[KernelContext] = None,
    n_scan: int = 512,
) -> list:
    """All shell radii in ``interval`` where omega(r, r) changes sign.

    ``d`` is a RadialPotentialDescriptor (or anything with ``descriptor()``).
    """
    if hasattr(d, "descriptor"):
        d = d.descriptor()
    lo, hi = interval
    if not 0 < lo < hi:
        raise ValueError("interval must lie in (0, inf)")

    def F(r):
        r = np.atleast_1d(np.asarray(r, float))
        return kernel.omega_generic_array(d, r, r, dim, ctx)

    grid = np.geomspace(lo, hi, n_scan)
    vals = F(grid)
    roots = []
    for i in range(n_scan - 1):
        f0, f1 = vals[i], vals[i + 1]
        if f0 == 0:
            roots.append(float(grid[i]))
        elif f0 * f1 < 0:
            root = brentq(lambda x: float(F(x)[0]), grid[i], grid[i + 1], xtol=1e-300, rtol=1e-12)
            roots.append(float(root))
    if vals[-1] == 0:
        roots.append(float(grid[-1]))
    return roots


def check_conditions(p, R: float, dim: Optional[int] = None, ctx=None) -> ConditionValues:
    """Evaluate (C0)-(C2) for a power law or a generic descriptor at radius R."""
    if isinstance(p, RadialPotentialDescriptor):
        if dim is None:
            raise ValueError("dim is required for a generic descriptor")
        c0 = kernel.omega_generic(p, R, R, dim, ctx).value
        d1, d2 = kernel.omega_generic_grad_array(p, R, R, dim, ctx)
        d1, d2 = float(d1), float(d2)
        if not math.isfinite(d1):
            h = 1e-6 * R
            slope = (
                kernel.omega_generic(p, R + h, R + h, dim, ctx).value
                - kernel.omega_generic(p, R - h, R - h, dim, ctx).value
            ) / (2 * h)
            return ConditionValues(c0, math.inf, slope, True)
        return ConditionValues(c0, d1, d1 + d2)

    c0 = float(kernel.diagonal_value(p, R))
    c2 = float(kernel.diagonal_slope(p, R))
    if regularity(p).omega_continuity_class is not OmegaContinuity.C1:
        return ConditionValues(c0, math.inf, c2, True)
    d1, _ = kernel.omega_grad_array(p, R, R, ctx)
    return ConditionValues(c0, float(d1), c2)


def pair_energy(p, r: float, eta: float, ctx=None) -> PairEnergySample:
    """E(r, eta): interaction energy of unit shells of radii r and eta (1/2 convention)."""
    if not (r > 0 and eta > 0):
        raise ValueError("pair_energy needs r, eta > 0")
    value = 0.5 * float(kernel.shell_potential(p, r, eta, ctx))
    return PairEnergySample(float(r), float(eta), value)


def instability_mode_probe(p, R: float, dr: float, epsilon: float, ctx=None) -> ModeProbe:
    """Energy change from splitting off mass epsilon to R + dr, and from shifting to R + dr."""

    def E(x, y):
        return 0.5 * float(kernel.shell_potential(p, x, y, ctx))

    e_rr = E(R, R)
    e_rd = E(R, R + dr)
    e_dd = E(R + dr, R + dr)
    # (1-eps)^2 E_rr + 2 eps (1-eps) E_rd + eps^2 E_dd - E_rr, regrouped
    split = 2 * epsilon * (1 - epsilon) * (e_rd - e_rr) + epsilon**2 * (e_dd - e_rr)
    return ModeProbe(split, e_dd - e_rr)


def check_tail_control(
    p,
    alpha: float,
    lam: float,
    r_grid,
    eta_window: int = 41,
    ctx=None,
    max_report: int = 20,
) -> TailControlResult:
    """Search sampled points for violations of the long-range velocity controls.

    Checks, on samples only:
      omega(r, eta) <= 1/lam - lam r^alpha  for r in r_grid, eta in [R - lam, R + lam];
      sup_{r in [0, lam]} |d1 omega(r, eta)| <= (1 + eta^alpha)/lam  for eta in r_grid;
      |omega(r, eta)| <= (1 + r^alpha)(1 + eta^alpha)/lam  on r_grid x r_grid.
    A True result means no counterexample was found, not that the bounds hold.
    """
    if alpha < 1 or lam <= 0:
        raise ValueError("need alpha >= 1 and lambda > 0")
    R = shell_radius(p.a, p.b, p.dim)
    r_grid = np.asarray(r_grid, dtype=float)
    found = []

    def record(name, mask, rr, ee, lhs, rhs):
        for i in np.flatnonzero(mask.ravel())[: max_report - len(found)]:
            found.append((name, float(rr.ravel()[i]), float(ee.ravel()[i]),
                          float(lhs.ravel()[i]), float(rhs.ravel()[i])))

    etas = np.linspace(max(R - lam, 0.0), R + lam, eta_window)
    rr, ee = np.meshgrid(r_grid, etas, indexing="ij")
    w = kernel.omega_array(p, rr, ee, ctx)
    bound = 1.0 / lam - lam * rr**alpha
    bad1 = w > bound
    record("as1", bad1, rr, ee, w, bound)

    r_small = np.linspace(0.0, lam, eta_window)
    rs, es = np.meshgrid(r_small, r_grid, indexing="ij")
    with np.errstate(invalid="ignore"):
        d1, _ = kernel.omega_grad_array(p, rs, es, ctx)
    sup = np.max(np.abs(np.nan_to_num(d1, nan=np.inf)), axis=0)
    bound2 = (1.0 + r_grid**alpha) / lam
    bad2 = sup > bound2
    record("as2", bad2, np.full_like(r_grid, np.nan), r_grid, sup, bound2)

    r3, e3 = np.meshgrid(r_grid, r_grid, indexing="ij")
    w3 = np.abs(kernel.omega_array(p, r3, e3, ctx))
    bound3 = (1.0 + r3**alpha) * (1.0 + e3**alpha) / lam
    bad3 = w3 > bound3
    record("as3", bad3, r3, e3, w3, bound3)

    ok = not (bad1.any() or bad2.any() or bad3.any())
    return TailControlResult(ok, found)
