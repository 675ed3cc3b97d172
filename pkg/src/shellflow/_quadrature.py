"""Vectorised angular quadrature for spherical means on [0, pi].

Every spherical mean here has the form

    (sigma_{N-1}/sigma_N) * int_0^pi f(theta, s) sin(theta)^(N-2) dtheta

where the integrand has a sharp feature of width ~|1 - s| at theta = 0 when s
is close to 1 (and an integrable algebraic singularity at s == 1). Rows with
|1 - s| inside the grading window get a mesh that is geometrically graded
toward theta = 0; the rest use uniform panels. Both meshes are refined by
panel bisection until two consecutive levels agree.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .specfun import sphere_ratio

_CHUNK = 1024
_GRADED_DEPTH = 44
_DEPTH_STEP = 30
_BASE_PANELS = 8


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach tolerance; ``estimate`` is the worst error seen."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


@lru_cache(maxsize=None)
def _gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@lru_cache(maxsize=None)
def _panels(graded, level):
    if graded:
        split = math.pi / _BASE_PANELS
        # deepen with the level so integrable endpoint singularities converge too
        depth = _GRADED_DEPTH + _DEPTH_STEP * level
        edges = [split * 0.5**k for k in range(depth, -1, -1)]
        edges = [0.0] + edges
        edges += [split * k for k in range(2, _BASE_PANELS + 1)]
    else:
        edges = [math.pi * k / _BASE_PANELS for k in range(_BASE_PANELS + 1)]
    edges = np.asarray(edges)
    for _ in range(level):
        mid = 0.5 * (edges[:-1] + edges[1:])
        edges = np.sort(np.concatenate([edges, mid]))
    return edges


@lru_cache(maxsize=None)
def _rule(graded, level, order, dim):
    """Nodes and weights (including sin^(N-2) and the sphere normalisation)."""
    x, w = _gauss_legendre(order)
    edges = _panels(graded, level)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    theta = (lo + half * (x[None, :] + 1.0)).ravel()
    weight = (half * w[None, :]).ravel()
    if dim != 2:
        weight = weight * np.sin(theta) ** (dim - 2)
    weight = weight * sphere_ratio(dim)
    theta.setflags(write=False)
    weight.setflags(write=False)
    return theta, weight


def _integrate(integrand, s, graded, level, order, dim):
    theta, weight = _rule(graded, level, order, dim)
    out = np.empty(s.shape[0])
    for start in range(0, s.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        vals = integrand(theta[None, :], s[sl, None], sl)
        out[sl] = vals @ weight
    return out


def sphere_mean(integrand, s, dim, ctx):
    """Spherical mean of ``integrand(theta, s, rows)`` for each entry of ``s``.

    ``integrand`` receives ``theta`` of shape (1, q), ``s`` of shape (n, 1) and
    the slice of rows being evaluated (so that callers can index companion
    arrays); it must return an (n, q) array.
    """
    s = np.asarray(s, dtype=float).ravel()
    result = np.empty_like(s)
    if s.size == 0:
        return result
    near = np.abs(1.0 - s) < ctx.grading_window if ctx.peak_grading else np.zeros(s.shape, bool)
    for graded in (False, True):
        idx = np.flatnonzero(near == graded)
        if idx.size:
            result[idx] = _adaptive(integrand, s, idx, graded, dim, ctx)
    return result


def _adaptive(integrand, s, idx, graded, dim, ctx):
    def run(level, rows):
        sub_idx = idx[rows]

        def f(theta, s_rows, sl):
            return integrand(theta, s_rows, sub_idx[sl])

        return _integrate(f, s[sub_idx], graded, level, ctx.quad_order, dim)

    rows = np.arange(idx.size)
    prev = run(0, rows)
    final = np.empty(idx.size)
    worst = np.inf
    for level in range(1, ctx.max_level + 1):
        cur = run(level, rows)
        err = np.abs(cur - prev)
        ok = err <= np.maximum(ctx.abs_tol, ctx.rel_tol * np.abs(cur))
        final[rows[ok]] = cur[ok]
        if np.all(ok):
            return final
        worst = float(np.max(err[~ok]))
        rows, prev = rows[~ok], cur[~ok]
    raise QuadratureError(
        f"angular quadrature did not converge for {rows.size} point(s); "
        f"error estimate {worst:.3e}",
        worst,
    )
