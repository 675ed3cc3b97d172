"""Radial dynamics in pseudo-inverse form.

The radial distribution is carried by its pseudo-inverse phi(xi), xi in [0, 1],
which evolves by

    d phi/dt (xi) = int_0^1 omega(phi(xi), phi(xi')) dxi'.

The integral is discretised by composite Simpson on a fixed uniform xi grid;
time stepping is backward Euler with Newton-Raphson on the dense Jacobian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg

from . import kernel
from .kernel import KernelContext
from .potential import AttractivePotential, PowerLawPotential, regularity
from .stability import shell_radius

log = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12
MONOTONE_TOL = 1e-12
SECANT_OFFSET = 1e-6
DAMPING = 0.5


class StepFailure(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class StateCorruptionError(RuntimeError):
    pass


# ----------------------------------------------------------------- grid/state


def simpson_weights(M: int) -> np.ndarray:
    if M < 3 or M % 2 == 0:
        raise ValueError("Simpson needs an odd number of nodes >= 3")
    w = np.full(M, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w / (3.0 * (M - 1))


@dataclass(frozen=True)
class RadialState:
    """Pseudo-inverse radii ``phi`` on the uniform mass grid ``xi`` at time ``t``."""

    xi: np.ndarray
    phi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        phi = np.array(self.phi, dtype=float)
        if xi.shape != phi.shape or xi.ndim != 1:
            raise ValueError("xi and phi must be 1-d arrays of equal length")
        if xi.size < 5 or xi.size % 2 == 0:
            raise ValueError("grid size must be odd and >= 5")
        if not np.allclose(xi, np.linspace(0.0, 1.0, xi.size), rtol=0, atol=1e-14):
            raise ValueError("xi must be the uniform grid on [0, 1]")
        if np.any(~np.isfinite(phi)) or np.any(phi < 0):
            raise ValueError("phi must be finite and nonnegative")
        if np.any(np.diff(phi) < -MONOTONE_TOL):
            raise ValueError("phi must be non-decreasing")
        xi.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "phi", phi)

    @property
    def M(self) -> int:
        return self.xi.size

    @property
    def weights(self) -> np.ndarray:
        return simpson_weights(self.M)


# -------------------------------------------------------------- initial data


@dataclass(frozen=True)
class UniformAnnulus:
    r1: float
    r2: float


@dataclass(frozen=True)
class ShellPerturbed:
    R: float
    amp: float = 0.0
    mode: int = 1


@dataclass(frozen=True)
class TruncatedGaussianRadial:
    """Density proportional to exp(-(|x| - center)^2 / (2 sigma^2)), cut at ``cut`` sigmas."""

    center: float
    sigma: float
    cut: float = 3.0


Profile = Union[UniformAnnulus, ShellPerturbed, TruncatedGaussianRadial]


def init_from_density(profile: Profile, M: int, dim: int) -> RadialState:
    """Pseudo-inverse of the radial CDF of ``profile`` in R^dim on M nodes."""
    xi = np.linspace(0.0, 1.0, M)
    if isinstance(profile, UniformAnnulus):
        r1, r2 = profile.r1, profile.r2
        if not 0 <= r1 < r2:
            raise ValueError("annulus needs 0 <= r1 < r2")
        phi = (r1**dim + xi * (r2**dim - r1**dim)) ** (1.0 / dim)
        phi[0], phi[-1] = r1, r2
    elif isinstance(profile, ShellPerturbed):
        if not (profile.R > 0 and abs(profile.amp) < profile.R):
            raise ValueError("shell perturbation needs R > 0 and |amp| < R")
        phi = profile.R + profile.amp * (2.0 * xi - 1.0) ** profile.mode
        if np.any(np.diff(phi) < 0):
            raise ValueError("perturbation is not monotone in xi; use an odd mode with amp >= 0")
    elif isinstance(profile, TruncatedGaussianRadial):
        phi = _invert_gaussian(profile, xi, dim)
    else:
        raise TypeError(f"unknown profile {profile!r}")
    return RadialState(xi, phi, 0.0)


def _invert_gaussian(profile, xi, dim, n_fine=20001):
    if not profile.sigma > 0 or not profile.cut > 0:
        raise ValueError("gaussian profile needs sigma > 0 and cut > 0")
    lo = max(0.0, profile.center - profile.cut * profile.sigma)
    hi = profile.center + profile.cut * profile.sigma
    if hi <= 0:
        raise ValueError("gaussian profile has no mass at positive radii")
    r = np.linspace(lo, hi, n_fine)
    dens = r ** (dim - 1) * np.exp(-0.5 * ((r - profile.center) / profile.sigma) ** 2)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    if not cdf[-1] > 0:
        raise ValueError("gaussian profile has zero mass")
    cdf /= cdf[-1]
    phi = np.interp(xi, cdf, r)
    phi[0], phi[-1] = lo, hi
    return np.maximum.accumulate(phi)


# ------------------------------------------------------------------ dynamics


def _omega_matrix(phi, p, ctx):
    return kernel.omega_array(p, phi[:, None], phi[None, :], ctx)


def rhs(state: RadialState, p, ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Velocities V_i = Simpson sum_j w_j omega(phi_i, phi_j)."""
    return _velocity(np.asarray(state.phi), p, ctx)


def _velocity(phi, p, ctx):
    return _omega_matrix(phi, p, ctx) @ simpson_weights(phi.size)


def _jacobian_blocks(phi, p, ctx, grads=None):
    """(row sums of w_j d1 omega excluding j = i plus the diagonal self-term, w_k d2 omega)."""
    w = simpson_weights(phi.size)
    ri, rj = phi[:, None], phi[None, :]
    if grads is None:
        d1, d2 = kernel.omega_grad_array(p, ri, rj, ctx)
    else:
        d1, d2 = (np.array(g) for g in grads)
    bad = ~(np.isfinite(d1) & np.isfinite(d2))
    np.fill_diagonal(bad, False)
    if np.any(bad):
        # tied radii in the non-C1 regime: secant across the singular diagonal
        ii, jj = np.nonzero(bad)
        h = SECANT_OFFSET * np.maximum(phi[ii], 1.0)
        lo = np.maximum(phi[ii] - h, 0.0)
        d1[ii, jj] = (
            kernel.omega_array(p, phi[ii] + h, phi[jj], ctx) - kernel.omega_array(p, lo, phi[jj], ctx)
        ) / (phi[ii] + h - lo)
        lo = np.maximum(phi[jj] - h, 0.0)
        d2[ii, jj] = (
            kernel.omega_array(p, phi[ii], phi[jj] + h, ctx) - kernel.omega_array(p, phi[ii], lo, ctx)
        ) / (phi[jj] + h - lo)
    np.fill_diagonal(d1, 0.0)
    np.fill_diagonal(d2, 0.0)
    # the self-interaction only ever sees omega(R, R), whose slope is finite
    pos = phi > 0
    slope = np.full(phi.size, _slope_at_origin(p))
    slope[pos] = kernel.diagonal_slope(p, phi[pos])
    self_term = w * slope
    diag = d1 @ w + self_term
    off = d2 * w[None, :]
    return diag, off


def _slope_at_origin(p):
    # omega(R, R) ~ sum coef psi_c(1) R^(c-1); finite slope only from c = 2 terms
    return sum(coef * kernel.psi_at_one(c, p.dim) for coef, c in p.terms if c == 2)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-2
    t_end: float = 1.0
    M: int = 201
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    dt_min: Optional[float] = None
    output_every: int = 10
    kernel: KernelContext = field(default_factory=KernelContext)
    enforce_monotone: bool = True
    alpha: float = 2.0

    def __post_init__(self):
        if self.dt_min is None:
            object.__setattr__(self, "dt_min", self.dt / 2**8)
        if not (self.dt > self.dt_min > 0):
            raise ValueError("need dt > dt_min > 0")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.M < 5 or self.M % 2 == 0:
            raise ValueError("M must be odd and >= 5")
        if self.newton_max_iter < 1 or self.output_every < 1:
            raise ValueError("newton_max_iter and output_every must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if not self.alpha >= 1:
            raise ValueError("alpha must be >= 1")


@dataclass(frozen=True)
class StepInfo:
    dt: float
    newton_iters: int
    residual: float
    rearranged: bool
    fixed_point_fallback: bool


def _solve_implicit(phi_old, p, dt, cfg):
    """Newton for Phi - phi_old - dt V(Phi) = 0; returns (Phi, iters, residual, fallback).

    The Jacobian is frozen (chord iteration) while the residual keeps halving
    and refreshed as soon as it does not.
    """
    ctx = cfg.kernel
    w = simpson_weights(phi_old.size)
    phi = phi_old.copy()
    best = math.inf
    stall = 0
    fallback = False
    lu = None
    for it in range(cfg.newton_max_iter + 1):
        grads = None
        if lu is None and not fallback:
            W, *grads = kernel.omega_with_grad(p, phi[:, None], phi[None, :], ctx)
            V = W @ w
        else:
            V = _omega_matrix(phi, p, ctx) @ w
        G = phi - phi_old - dt * V
        res = float(np.max(np.abs(G)))
        if not math.isfinite(res):
            break
        if res < cfg.newton_tol:
            return phi, it, res, fallback
        if it == cfg.newton_max_iter:
            break
        if res < 0.5 * best:
            best, stall = res, 0
        else:
            stall += 1
            if lu is not None and grads is None:
                lu = None
                W, *grads = kernel.omega_with_grad(p, phi[:, None], phi[None, :], ctx)
        if stall >= 3:
            fallback = True
        if fallback:
            new = (1 - DAMPING) * phi + DAMPING * (phi_old + dt * V)
        else:
            if lu is None:
                diag, off = _jacobian_blocks(phi, p, ctx, grads)
                J = np.eye(phi.size) - dt * (np.diag(diag) + off)
                lu = linalg.lu_factor(J, check_finite=False)
            step = linalg.lu_solve(lu, G, check_finite=False)
            if np.all(np.isfinite(step)):
                new = phi - step
            else:
                fallback = True
                new = (1 - DAMPING) * phi + DAMPING * (phi_old + dt * V)
        # iterates stay in the admissible half-line
        phi = np.maximum(new, 0.0)
    raise StepFailure(f"Newton did not converge (residual {res:.3e})", res)


def implicit_step(state: RadialState, p, cfg: SimConfig, dt: Optional[float] = None):
    """One backward-Euler step with dt halving; returns (new_state, StepInfo)."""
    dt = cfg.dt if dt is None else dt
    phi_old = np.array(state.phi)
    last_res = math.nan
    while True:
        try:
            phi, iters, res, fallback = _solve_implicit(phi_old, p, dt, cfg)
            break
        except StepFailure as exc:
            last_res = exc.residual
            dt *= 0.5
            if dt < cfg.dt_min:
                raise StepFailure(
                    f"time step fell below dt_min={cfg.dt_min:.3e}; last residual {last_res:.3e}",
                    last_res,
                ) from None
            log.debug("halving dt to %.3e", dt)

    if np.any(~np.isfinite(phi)) or np.any(phi < -NEGATIVE_TOL):
        raise StateCorruptionError("non-finite or negative radius after step")
    phi = np.maximum(phi, 0.0)
    rearranged = False
    if np.any(np.diff(phi) < -MONOTONE_TOL):
        if not cfg.enforce_monotone:
            raise StateCorruptionError("pseudo-inverse lost monotonicity")
        phi = np.sort(phi)
        rearranged = True
    else:
        phi = np.maximum.accumulate(phi)
    new = RadialState(state.xi, phi, state.t + dt)
    return new, StepInfo(dt, iters, res, rearranged, fallback)


def step(state: RadialState, p, cfg: SimConfig) -> RadialState:
    return implicit_step(state, p, cfg)[0]


# --------------------------------------------------------------- diagnostics


def wasserstein_to_shell(state: RadialState, R_ref: float, alpha: float = 2.0) -> float:
    """d_alpha between the radial measure and the shell of radius R_ref (R_ref = 0: the origin)."""
    gap = np.abs(np.asarray(state.phi) - R_ref)
    if math.isinf(alpha):
        return float(gap.max())
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    return float((state.weights @ gap**alpha) ** (1.0 / alpha))


def gamma_theta(state: RadialState, R_ref: float):
    """Support diameter phi(1) - phi(0) and mean-radius offset."""
    phi = np.asarray(state.phi)
    return float(phi[-1] - phi[0]), float(state.weights @ phi - R_ref)


def energy(state: RadialState, p, ctx: Optional[KernelContext] = None) -> float:
    """Interaction energy with the 1/2 convention: 1/2 sum w_i w_j <k(|phi_i s - phi_j e1|)>."""
    phi = np.asarray(state.phi)
    w = state.weights
    pair = kernel.shell_potential(p, phi[:, None], phi[None, :], ctx)
    return float(0.5 * w @ pair @ w)


def dissipation(state: RadialState, p, ctx: Optional[KernelContext] = None) -> float:
    V = rhs(state, p, ctx)
    return float(-(state.weights @ V**2))


def reference_radius(p) -> float:
    if isinstance(p, PowerLawPotential):
        return shell_radius(p.a, p.b, p.dim)
    return 0.0


def support_bound(p, r2_initial: float) -> float:
    """A-priori bound on the outer support radius: max(r2(0), (K_a/K_b)^(1/(b-a)))."""
    if isinstance(p, AttractivePotential):
        return float(r2_initial)
    a, b, N = p.a, p.b, p.dim
    if b >= 2:
        Ka, Kb = 1.0, kernel.psi_at_one(b, N)
    elif a >= 2:
        Ka, Kb = 1.0, 1.0
    else:
        Ka, Kb = kernel.psi_at_one(a, N), 1.0
    return max(float(r2_initial), (Ka / Kb) ** (1.0 / (b - a)))


def support_bound_check(state: RadialState, p, r2_initial: float, slack: float = 1e-8) -> bool:
    return bool(state.phi[-1] <= support_bound(p, r2_initial) + slack)


@dataclass(frozen=True)
class Diagnostics:
    t: float
    d_inf: float
    d_2: float
    d_alpha: float
    gamma: float
    theta: float
    energy: float
    dissipation: float
    newton_iters: int
    max_velocity: float = 0.0
    support_ok: bool = True


def diagnose(state, p, cfg, R_ref, r2_initial, newton_iters=0) -> Diagnostics:
    ctx = cfg.kernel
    V = rhs(state, p, ctx)
    g, th = gamma_theta(state, R_ref)
    return Diagnostics(
        t=state.t,
        d_inf=wasserstein_to_shell(state, R_ref, math.inf),
        d_2=wasserstein_to_shell(state, R_ref, 2.0),
        d_alpha=wasserstein_to_shell(state, R_ref, cfg.alpha),
        gamma=g,
        theta=th,
        energy=energy(state, p, ctx),
        dissipation=float(-(state.weights @ V**2)),
        newton_iters=newton_iters,
        max_velocity=float(np.max(np.abs(V))),
        support_ok=support_bound_check(state, p, r2_initial),
    )


@dataclass
class SimulationResult:
    diagnostics: list
    snapshots: list
    completed: bool = True
    error: Optional[str] = None
    rearrangements: int = 0
    fallbacks: int = 0
    support_violations: int = 0
    steps: int = 0

    @property
    def final(self) -> RadialState:
        return self.snapshots[-1]


def simulate(p, cfg: SimConfig, init: Union[RadialState, Profile]) -> SimulationResult:
    """Integrate from ``init`` to ``cfg.t_end``, recording every ``output_every`` steps.

    A step failure stops the run; the partial series is returned with
    ``completed=False`` and the error message.
    """
    if not isinstance(init, RadialState):
        init = init_from_density(init, cfg.M, p.dim)
    regularity(p)
    R_ref = reference_radius(p)
    r2_initial = float(init.phi[-1])
    state = init
    result = SimulationResult([diagnose(state, p, cfg, R_ref, r2_initial)], [state])
    n = 0
    last_iters = 0
    eps_t = 1e-12 * max(1.0, cfg.t_end)
    while state.t < cfg.t_end - eps_t:
        dt = min(cfg.dt, cfg.t_end - state.t)
        try:
            state, info = implicit_step(state, p, cfg, dt)
        except (StepFailure, StateCorruptionError, kernel.QuadratureError) as exc:
            result.completed = False
            result.error = str(exc)
            log.warning("simulation stopped at t=%.6g: %s", state.t, exc)
            break
        n += 1
        last_iters = info.newton_iters
        result.rearrangements += info.rearranged
        result.fallbacks += info.fixed_point_fallback
        done = state.t >= cfg.t_end - eps_t
        if n % cfg.output_every == 0 or done:
            diag = diagnose(state, p, cfg, R_ref, r2_initial, last_iters)
            if not diag.support_ok:
                result.support_violations += 1
            result.diagnostics.append(diag)
            result.snapshots.append(state)
    result.steps = n
    if result.snapshots[-1] is not state:
        result.diagnostics.append(diagnose(state, p, cfg, R_ref, r2_initial, last_iters))
        result.snapshots.append(state)
    return result


def fit_log_slope(times, values, t_min=-math.inf, t_max=math.inf) -> float:
    """Least-squares slope of log(values) against time over [t_min, t_max]."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    mask = (t >= t_min) & (t <= t_max) & (v > 0)
    if mask.sum() < 2:
        return math.nan
    return float(np.polyfit(t[mask], np.log(v[mask]), 1)[0])
