"""Spherical-mean profiles psi_c(s) and the shell velocity kernel omega(r, eta).

For a power-law term |x|^c / c the velocity induced at radius r by a uniform
unit-mass shell of radius eta is r^(c-1) psi_c(eta / r), with

    psi_c(s) = (sigma_{N-1}/sigma_N) int_0^pi (1 - s cos t) sin(t)^(N-2)
               / (1 + s^2 - 2 s cos t)^((2-c)/2) dt.

Potentials expose ``terms``: (coefficient, exponent) pairs such that
omega = sum(coef * r^(c-1) * psi_c(eta/r)). Each term is routed to the
cheapest exact evaluator available:

* N = 1: the two-point "sphere" {-1, 1}, always closed form;
* even integer c >= 2: a bivariate polynomial in (r, eta);
* N = 2, c = 1: complete elliptic integrals;
* anything else: graded Gauss-Legendre quadrature.

The diagonal r == eta never goes through quadrature; it uses the Beta-function
values of psi_c(1) and psi_c'(1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from ._quadrature import QuadratureError, sphere_mean
from .potential import OmegaContinuity, regularity
from .specfun import beta, sphere_ratio

__all__ = [
    "ClosedForm",
    "KernelContext",
    "KernelDomainError",
    "BlowupRegimeError",
    "QuadratureError",
    "OmegaValue",
    "psi",
    "psi_1d",
    "psi_at_one",
    "psi_prime_ratio_at_one",
    "psi_prime_at_one",
    "omega",
    "omega_array",
    "omega_generic",
    "omega_generic_array",
    "omega_generic_grad_array",
    "omega_grad_array",
    "d1_omega",
    "d2_omega",
    "diagonal_value",
    "diagonal_slope",
    "mean_power",
    "shell_potential",
]

DIAGONAL_RTOL = 1e-14


class KernelDomainError(ValueError):
    pass


class BlowupRegimeError(KernelDomainError):
    """A derivative of omega on the diagonal is infinite (non-C1 regime)."""


class ClosedForm(enum.Enum):
    NONE = "none"
    POLYNOMIAL = "polynomial"
    AUTO = "auto"


@dataclass(frozen=True)
class KernelContext:
    quad_order: int = 16
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    peak_grading: bool = True
    closed_form: ClosedForm = ClosedForm.AUTO
    grading_window: float = 0.1
    max_level: int = 6

    def __post_init__(self):
        if self.quad_order < 4:
            raise ValueError("quad_order must be >= 4")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if isinstance(self.closed_form, str):
            object.__setattr__(self, "closed_form", ClosedForm(self.closed_form))


DEFAULT_CONTEXT = KernelContext()
QUADRATURE_ONLY = KernelContext(closed_form=ClosedForm.NONE)


@dataclass(frozen=True)
class OmegaValue:
    value: float
    r: float
    eta: float
    on_diagonal: bool


def _ctx(ctx):
    return DEFAULT_CONTEXT if ctx is None else ctx


def _is_even_power(c):
    return c >= 2 and float(c).is_integer() and int(c) % 2 == 0


def _route(c, dim, ctx):
    if dim == 1:
        return "n1"
    if ctx.closed_form is not ClosedForm.NONE and _is_even_power(c):
        return "poly"
    if ctx.closed_form is ClosedForm.AUTO and dim == 2 and c == 1:
        return "elliptic"
    return "quad"


def _check_exponent(c, dim):
    if not c > 2 - dim:
        raise KernelDomainError(f"exponent c={c} must exceed 2-N={2 - dim}")


def _on_diagonal(r, eta):
    return np.abs(r - eta) < DIAGONAL_RTOL * np.maximum(r, eta)


def _scalar_or_array(out, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


# ---------------------------------------------------------------- closed forms


@lru_cache(maxsize=None)
def _moments(dim, kmax):
    """Spherical means of cos(theta)^k, k = 0..kmax."""
    mu = np.zeros(kmax + 1)
    for k in range(0, kmax + 1, 2):
        if dim == 1:
            mu[k] = 1.0
        else:
            mu[k] = beta((k + 1) / 2, (dim - 1) / 2) / beta(0.5, (dim - 1) / 2)
    return mu


def _expand_square(n):
    """(r^2 + eta^2 - 2 r eta x)^n as {(i_r, i_eta, i_x): coef}."""
    out = {}
    for i in range(n + 1):
        for j in range(n + 1 - i):
            k = n - i - j
            coef = math.factorial(n) // (math.factorial(i) * math.factorial(j) * math.factorial(k))
            key = (2 * i + k, 2 * j + k, k)
            out[key] = out.get(key, 0) + coef * (-2) ** k
    return out


def _average_out(poly, dim):
    kmax = max(k for (_, _, k) in poly)
    mu = _moments(dim, kmax)
    deg_r = max(i for (i, _, _) in poly)
    deg_e = max(j for (_, j, _) in poly)
    coeffs = np.zeros((deg_r + 1, deg_e + 1))
    for (i, j, k), coef in poly.items():
        coeffs[i, j] += coef * mu[k]
    return coeffs


@lru_cache(maxsize=None)
def _poly_velocity_coeffs(c, dim):
    """Coefficients P[i, j] of r^i eta^j in r^(c-1) psi_c(eta/r), c even."""
    base = _expand_square((int(c) - 2) // 2)
    poly = {}
    for (i, j, k), coef in base.items():
        # times (r - eta x)
        poly[(i + 1, j, k)] = poly.get((i + 1, j, k), 0) + coef
        poly[(i, j + 1, k + 1)] = poly.get((i, j + 1, k + 1), 0) - coef
    out = _average_out(poly, dim)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _poly_energy_coeffs(c, dim):
    """Coefficients of r^i eta^j in the spherical mean of |r sigma - eta e1|^c, c even."""
    out = _average_out(_expand_square(int(c) // 2), dim)
    out.setflags(write=False)
    return out


def _powers(x, n):
    out = [np.ones_like(x)]
    for _ in range(n):
        out.append(out[-1] * x)
    return out


def _polyval(coeffs, r, eta):
    # term by term over nonzero coefficients; powers are taken before broadcasting
    r = np.asarray(r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    shape = np.broadcast(r, eta).shape
    rp = _powers(r, coeffs.shape[0] - 1)
    ep = _powers(eta, coeffs.shape[1] - 1)
    out = np.zeros(shape)
    for i, j in zip(*np.nonzero(coeffs)):
        out += coeffs[i, j] * (rp[i] * ep[j])
    return out


@lru_cache(maxsize=None)
def _poly_velocity_grad_coeffs(c, dim):
    P = _poly_velocity_coeffs(c, dim)
    return (
        np.polynomial.polynomial.polyder(P, axis=0),
        np.polynomial.polynomial.polyder(P, axis=1),
    )


def _ellip_km(s):
    m = 4.0 * s / (1.0 + s) ** 2
    return m, special.ellipk(m), special.ellipe(m)


def _psi_elliptic(s, km=None):
    s = np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore"):
        m, K, E = _ellip_km(s) if km is None else km
        val = ((1.0 + s) * E + (1.0 - s) * K) / math.pi
    return np.where(s == 1.0, 2.0 / math.pi, val)


def _psi_elliptic_prime(s, km=None):
    s = np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        m, K, E = _ellip_km(s) if km is None else km
        val = (
            E
            - K
            + 2.0 * (1.0 - s) * (E - K) / (m * (1.0 + s) ** 2)
            + 2.0 * (E - (1.0 - m) * K) / (m * (1.0 + s))
        ) / math.pi
    # psi_1(s) = 1 - s^2/4 + O(s^4) near the origin
    val = np.where(s < 1e-4, -0.5 * s, val)
    return np.where(s == 1.0, -np.inf, val)


def _mean_sqrt_elliptic(u):
    m, _, E = _ellip_km(np.asarray(u, dtype=float))
    return 2.0 * (1.0 + u) * E / math.pi


def psi_1d(c, s):
    """One-dimensional profile: mean over y = +-1 of (1 - s y)|1 - s y|^(c-2)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise KernelDomainError("s must be nonnegative")
    out = 0.5 * (np.sign(1.0 - s) * np.abs(1.0 - s) ** (c - 1) + (1.0 + s) ** (c - 1))
    return _scalar_or_array(out, s)


def _psi_1d_prime(c, s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        near = np.abs(1.0 - s) ** (c - 2)
    if c == 2:
        near = np.ones_like(s)
    return 0.5 * (c - 1) * ((1.0 + s) ** (c - 2) - near)


# ------------------------------------------------------------------ psi at s=1


def psi_at_one(c, dim):
    """psi_c(1) from the Beta-function closed form."""
    if c + dim - 1 <= 0:
        raise KernelDomainError(f"psi_c(1) needs c + N - 1 > 0 (c={c}, N={dim})")
    if dim == 1:
        return 2.0 ** (c - 2)
    return sphere_ratio(dim) * 2.0 ** (c + dim - 3) * beta((c + dim - 1) / 2, (dim - 1) / 2)


def psi_prime_ratio_at_one(c, dim):
    """psi_c'(1) / psi_c(1); raises BlowupRegimeError when psi_c'(1) is infinite."""
    if dim == 1:
        if c == 2:
            return 0.0
        if c < 2:
            raise BlowupRegimeError(f"psi_c'(1) is infinite for c={c} < 2 in N=1")
        return (c - 1) / 2
    if c + dim - 3 <= 0:
        raise BlowupRegimeError(
            f"psi_c'(1) is infinite for c + N - 3 <= 0 (c={c}, N={dim})"
        )
    return (c - 2) * (c + dim - 2) / (2 * (c + dim - 3))


def psi_prime_at_one(c, dim):
    return psi_prime_ratio_at_one(c, dim) * psi_at_one(c, dim)


def _psi_prime_at_one_or_inf(c, dim):
    try:
        return psi_prime_at_one(c, dim)
    except BlowupRegimeError:
        return -np.inf


# ------------------------------------------------------------------------ psi


def _psi_quadrature(c, s, dim, ctx):
    half = 0.5 * (c - 2)

    def integrand(theta, s_rows, rows):
        sin2 = np.sin(0.5 * theta) ** 2
        num = (1.0 - s_rows) + 2.0 * s_rows * sin2
        den = (1.0 - s_rows) ** 2 + 4.0 * s_rows * sin2
        return num * den**half

    return sphere_mean(integrand, s, dim, ctx)


def _psi_values(c, s, dim, ctx):
    """psi_c on a flat array of s >= 0 (exponent already validated)."""
    route = _route(c, dim, ctx)
    if route == "n1":
        return np.asarray(psi_1d(c, s), dtype=float)
    if route == "poly":
        return _polyval(_poly_velocity_coeffs(c, dim), 1.0, s)
    if route == "elliptic":
        return _psi_elliptic(s)
    out = np.empty_like(s)
    one = s == 1.0
    out[one] = psi_at_one(c, dim)
    if np.any(~one):
        out[~one] = _psi_quadrature(c, s[~one], dim, ctx)
    return out


def psi(c, s, dim, ctx=None):
    """Spherical-mean profile psi_c(s) for s >= 0 (scalar or array)."""
    ctx = _ctx(ctx)
    _check_exponent(c, dim)
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise KernelDomainError("s must be nonnegative")
    out = _psi_values(c, arr.ravel(), dim, ctx).reshape(arr.shape)
    return _scalar_or_array(out, s)


# ---------------------------------------------------------------- omega terms


def _term_value(c, r, eta, dim, ctx, known=None):
    """r^(c-1) psi_c(eta/r) on broadcast arrays; zero at r = 0.

    ``known`` holds precomputed psi values (NaN where missing).
    """
    route = _route(c, dim, ctx)
    if route == "poly":
        return _polyval(_poly_velocity_coeffs(c, dim), r, eta)
    out = np.zeros(np.broadcast(r, eta).shape)
    r, eta = np.broadcast_arrays(r, eta)
    pos = r > 0
    rp, ep = r[pos], eta[pos]
    s = ep / rp
    diag = _on_diagonal(rp, ep)
    s = np.where(diag, 1.0, s)
    if known is None:
        pv = _psi_values(c, s, dim, ctx)
    else:
        pv = known[pos]
        miss = np.isnan(pv)
        if np.any(miss):
            pv[miss] = _psi_values(c, s[miss], dim, ctx)
    out[pos] = rp ** (c - 1) * pv
    return out


def _psi_prime_values(c, s, dim, ctx):
    route = _route(c, dim, ctx)
    if route == "n1":
        return _psi_1d_prime(c, s)
    if route == "poly":
        return _polyval(_poly_velocity_grad_coeffs(c, dim)[1], 1.0, s)
    if route == "elliptic":
        return _psi_elliptic_prime(s)
    raise AssertionError("no closed-form derivative on the quadrature route")


def _fd4(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def _term_grad(c, r, eta, dim, ctx, values=None):
    """(d/dr, d/deta) of r^(c-1) psi_c(eta/r); infinite entries on a non-C1 diagonal.

    On the elliptic route ``values``, if given, receives psi_c(eta/r) at the
    off-diagonal, off-origin entries so a caller can reuse it.
    """
    route = _route(c, dim, ctx)
    if route == "poly":
        dP_r, dP_e = _poly_velocity_grad_coeffs(c, dim)
        return _polyval(dP_r, r, eta), _polyval(dP_e, r, eta)
    r, eta = np.broadcast_arrays(np.asarray(r, float), np.asarray(eta, float))

    d_r = np.zeros(r.shape)
    d_e = np.zeros(r.shape)
    diag = (r > 0) & _on_diagonal(r, eta)
    if np.any(diag):
        R = r[diag]
        p1 = psi_at_one(c, dim)
        dp1 = _psi_prime_at_one_or_inf(c, dim)
        d_r[diag] = R ** (c - 2) * ((c - 1) * p1 - dp1)
        d_e[diag] = R ** (c - 2) * dp1

    origin = r == 0
    if np.any(origin):
        # r -> 0: r^(c-1) psi_c(eta/r) ~ r eta^(c-2) (N + c - 2)/N
        e0 = eta[origin]
        with np.errstate(divide="ignore"):
            d_r[origin] = np.where(
                e0 > 0, (dim + c - 2) / dim * e0 ** (c - 2), np.where(c > 2, 0.0, np.inf)
            )
        d_e[origin] = 0.0

    off = ~diag & ~origin
    if not np.any(off):
        return d_r, d_e
    ro, eo = r[off], eta[off]
    if route in ("n1", "elliptic"):
        s = eo / ro
        if route == "elliptic":
            km = _ellip_km(s)
            pv, dp = _psi_elliptic(s, km), _psi_elliptic_prime(s, km)
            if values is not None:
                values[off] = pv
        else:
            pv = _psi_values(c, s, dim, ctx)
            dp = _psi_prime_values(c, s, dim, ctx)
        d_r[off] = ro ** (c - 2) * ((c - 1) * pv - s * dp)
        d_e[off] = ro ** (c - 2) * dp
        return d_r, d_e

    # quadrature route: fourth-order central differences
    scale = np.maximum(np.maximum(ro, eo), 1.0)
    h_r = np.minimum(1e-5 * scale, ro / 4)
    h_e = 1e-5 * scale
    d_r[off] = _fd4(lambda x: _term_value(c, x, eo, dim, ctx), ro, h_r)
    # omega is even in eta, which keeps the stencil valid for eta < 2h
    d_e[off] = _fd4(lambda x: _term_value(c, ro, np.abs(x), dim, ctx), eo, h_e)
    return d_r, d_e


# ---------------------------------------------------------------------- omega


def _validate_terms(p):
    for _, c in p.terms:
        _check_exponent(c, p.dim)


def omega_array(p, r, eta, ctx=None):
    """omega(r, eta) for a power-law-type potential on broadcast arrays."""
    ctx = _ctx(ctx)
    _validate_terms(p)
    r = np.asarray(r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(r < 0) or np.any(eta < 0):
        raise KernelDomainError("radii must be nonnegative")
    out = np.zeros(np.broadcast(r, eta).shape)
    for coef, c in p.terms:
        out = out + coef * _term_value(c, r, eta, p.dim, ctx)
    return out


def omega(p, r, eta, ctx=None) -> OmegaValue:
    """Radial velocity at radius r induced by the unit shell of radius eta."""
    if not r > 0:
        raise KernelDomainError("r must be positive")
    if eta < 0:
        raise KernelDomainError("eta must be nonnegative")
    value = float(omega_array(p, r, eta, ctx))
    return OmegaValue(value, float(r), float(eta), bool(_on_diagonal(r, eta)))


def omega_grad_array(p, r, eta, ctx=None):
    """(d1 omega, d2 omega) on broadcast arrays; diagonal entries may be infinite."""
    ctx = _ctx(ctx)
    _validate_terms(p)
    r = np.asarray(r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    shape = np.broadcast(r, eta).shape
    d1 = np.zeros(shape)
    d2 = np.zeros(shape)
    with np.errstate(invalid="ignore"):
        for coef, c in p.terms:
            gr, ge = _term_grad(c, r, eta, p.dim, ctx)
            d1 = d1 + coef * gr
            d2 = d2 + coef * ge
    return d1, d2


def omega_with_grad(p, r, eta, ctx=None):
    """(omega, d1 omega, d2 omega) on broadcast arrays, sharing work between them."""
    ctx = _ctx(ctx)
    _validate_terms(p)
    r = np.asarray(r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(r < 0) or np.any(eta < 0):
        raise KernelDomainError("radii must be nonnegative")
    shape = np.broadcast(r, eta).shape
    w = np.zeros(shape)
    d1 = np.zeros(shape)
    d2 = np.zeros(shape)
    with np.errstate(invalid="ignore"):
        for coef, c in p.terms:
            if _route(c, p.dim, ctx) == "elliptic":
                rb, eb = np.broadcast_arrays(r, eta)
                psi_vals = np.full(shape, np.nan)
                gr, ge = _term_grad(c, rb, eb, p.dim, ctx, values=psi_vals)
                val = _term_value(c, rb, eb, p.dim, ctx, known=psi_vals)
            else:
                gr, ge = _term_grad(c, r, eta, p.dim, ctx)
                val = _term_value(c, r, eta, p.dim, ctx)
            w = w + coef * val
            d1 = d1 + coef * gr
            d2 = d2 + coef * ge
    return w, d1, d2


def _scalar_grad(p, r, eta, ctx):
    if not (r > 0 and eta > 0):
        raise KernelDomainError("derivatives of omega need r, eta > 0")
    if _on_diagonal(r, eta) and regularity(p).omega_continuity_class is not OmegaContinuity.C1:
        raise BlowupRegimeError(
            "d1 omega is +infinity on the diagonal when b <= 3 - N (non-C1 regime)"
        )
    d1, d2 = omega_grad_array(p, r, eta, ctx)
    return float(d1), float(d2)


def d1_omega(p, r, eta, ctx=None) -> float:
    return _scalar_grad(p, r, eta, ctx)[0]


def d2_omega(p, r, eta, ctx=None) -> float:
    return _scalar_grad(p, r, eta, ctx)[1]


def diagonal_value(p, R):
    """omega(R, R) from closed-form psi_c(1)."""
    R = np.asarray(R, dtype=float)
    return sum(coef * R ** (c - 1) * psi_at_one(c, p.dim) for coef, c in p.terms)


def diagonal_slope(p, R):
    """d/dR omega(R, R) = (d1 + d2) omega(R, R); finite in every regime."""
    R = np.asarray(R, dtype=float)
    return sum(coef * (c - 1) * R ** (c - 2) * psi_at_one(c, p.dim) for coef, c in p.terms)


def omega_generic(d, r, eta, dim, ctx=None) -> OmegaValue:
    """omega for an arbitrary radial potential by direct angular quadrature."""
    ctx = _ctx(ctx)
    if not r > 0:
        raise KernelDomainError("r must be positive")
    if eta < 0:
        raise KernelDomainError("eta must be nonnegative")
    flags = regularity(d, dim)
    if not flags.kprime_integrable_on_hypersurfaces:
        raise BlowupRegimeError(
            "k' is not integrable on hypersurfaces; omega is undefined on the diagonal"
        )
    value = float(omega_generic_array(d, np.array([r], float), np.array([eta], float), dim, ctx)[0])
    return OmegaValue(value, float(r), float(eta), bool(_on_diagonal(r, eta)))


def omega_generic_array(d, r, eta, dim, ctx=None):
    ctx = _ctx(ctx)
    r, eta = np.broadcast_arrays(np.asarray(r, float), np.asarray(eta, float))
    shape = r.shape
    r, eta = r.ravel(), eta.ravel()
    if dim == 1:
        gap = r - eta
        near = np.zeros_like(gap)
        nz = gap != 0
        near[nz] = np.sign(gap[nz]) * d.k_prime(np.abs(gap[nz]))
        return (-0.5 * (near + d.k_prime(r + eta))).reshape(shape)
    zero_eta = eta == 0
    out = np.empty_like(r)
    if np.any(zero_eta):
        out[zero_eta] = -d.k_prime(r[zero_eta])

    idx = np.flatnonzero(~zero_eta)
    rr, ee = r[idx], eta[idx]

    def integrand(theta, s_rows, rows):
        rv, ev = rr[rows][:, None], ee[rows][:, None]
        sin2 = np.sin(0.5 * theta) ** 2
        A = np.sqrt((rv - ev) ** 2 + 4.0 * rv * ev * sin2)
        along = (rv - ev) + 2.0 * ev * sin2
        return d.k_prime(A) * along / A

    if idx.size:
        out[idx] = -sphere_mean(integrand, ee / rr, dim, ctx)
    return out.reshape(shape)


def omega_generic_grad_array(d, r, eta, dim, ctx=None):
    """(d1 omega, d2 omega) for an arbitrary radial potential, via k''.

    Differentiates under the integral sign, so on the diagonal the result is
    exact in the C1 regime; entries there are +-inf otherwise.
    """
    ctx = _ctx(ctx)
    r, eta = np.broadcast_arrays(np.asarray(r, float), np.asarray(eta, float))
    shape = r.shape
    r, eta = r.ravel(), eta.ravel()
    if np.any(r <= 0) or np.any(eta < 0):
        raise KernelDomainError("need r > 0 and eta >= 0")
    diag = _on_diagonal(r, eta)
    c1 = regularity(d, dim).omega_continuity_class is OmegaContinuity.C1
    d1 = np.empty_like(r)
    d2 = np.empty_like(r)
    if dim == 1:
        gap = np.abs(r - eta)
        # on the diagonal the near-field term is the limit k''(0+)
        gap = np.where(diag, 1e-300, gap)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            near = d.k_second(gap)
        far = d.k_second(r + eta)
        d1[:] = -0.5 * (near + far)
        d2[:] = -0.5 * (far - near)
        return d1.reshape(shape), d2.reshape(shape)

    zero_eta = eta == 0
    if np.any(zero_eta):
        d1[zero_eta] = -d.k_second(r[zero_eta])
        d2[zero_eta] = 0.0
    idx = np.flatnonzero(~zero_eta)
    rr, ee = r[idx], eta[idx]

    def parts(theta, rows):
        rv, ev = rr[rows][:, None], ee[rows][:, None]
        sin2 = np.sin(0.5 * theta) ** 2
        A = np.sqrt((rv - ev) ** 2 + 4.0 * rv * ev * sin2)
        x1 = (rv - ev) + 2.0 * ev * sin2
        return rv, ev, A, x1

    def hess11(theta, s_rows, rows):
        rv, ev, A, x1 = parts(theta, rows)
        q = x1 / A
        return d.k_second(A) * q**2 + d.k_prime(A) / A * (1.0 - q**2)

    def hess1y(theta, s_rows, rows):
        rv, ev, A, x1 = parts(theta, rows)
        xy = rv * np.cos(theta) - ev
        return d.k_second(A) * x1 * xy / A**2 + d.k_prime(A) / A * (np.cos(theta) - x1 * xy / A**2)

    if idx.size:
        s = ee / rr
        d1[idx] = -sphere_mean(hess11, s, dim, ctx)
        d2[idx] = sphere_mean(hess1y, s, dim, ctx)
    if not c1 and np.any(diag):
        d1[diag] = np.inf
        d2[diag] = -np.inf
    return d1.reshape(shape), d2.reshape(shape)


# --------------------------------------------------------------------- energy


def _mean_power_values(c, u, dim, ctx):
    route = _route(c, dim, ctx)
    if route == "n1":
        return 0.5 * (np.abs(1.0 - u) ** c + (1.0 + u) ** c)
    if route == "poly":
        return _polyval(_poly_energy_coeffs(c, dim), 1.0, u)
    if route == "elliptic":
        return _mean_sqrt_elliptic(u)

    half = 0.5 * c

    def integrand(theta, s_rows, rows):
        sin2 = np.sin(0.5 * theta) ** 2
        return ((1.0 - s_rows) ** 2 + 4.0 * s_rows * sin2) ** half

    out = np.empty_like(u)
    one = u == 1.0
    if np.any(one):
        # mean of (2 - 2cos t)^(c/2) = 2^c mean sin(t/2)^c
        if dim == 1:
            out[one] = 0.5 * 2.0**c
        else:
            out[one] = sphere_ratio(dim) * 2.0 ** (c + dim - 2) * beta(
                (c + dim - 1) / 2, (dim - 1) / 2
            )
    if np.any(~one):
        out[~one] = sphere_mean(integrand, u[~one], dim, ctx)
    return out


def mean_power(c, u, dim, ctx=None):
    """Spherical mean of |e1 - u y|^c over unit vectors y, for 0 <= u <= 1."""
    ctx = _ctx(ctx)
    arr = np.asarray(u, dtype=float)
    out = _mean_power_values(c, arr.ravel(), dim, ctx).reshape(arr.shape)
    return _scalar_or_array(out, u)


def shell_potential(p, r, eta, ctx=None):
    """Spherical mean of k(|r sigma - eta e1|): the interaction of two unit shells."""
    ctx = _ctx(ctx)
    _validate_terms(p)
    r, eta = np.broadcast_arrays(np.asarray(r, float), np.asarray(eta, float))
    big = np.maximum(r, eta)
    small = np.minimum(r, eta)
    pos = big > 0
    u = np.where(pos, small / np.where(pos, big, 1.0), 0.0)
    u = np.where(_on_diagonal(r, eta) & pos, 1.0, u)
    out = np.zeros(r.shape)
    for coef, c in p.terms:
        # k'(A) = -sum coef A^(c-1)  =>  k(A) = -sum coef A^c / c
        if c > 0:
            scale = big**c
        else:
            with np.errstate(divide="ignore"):
                scale = np.where(pos, big, np.inf) ** c
        mp = _mean_power_values(c, u.ravel(), p.dim, ctx).reshape(u.shape)
        out = out - coef / c * scale * mp
    return out
