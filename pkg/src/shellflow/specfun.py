"""Gamma, Beta and unit-sphere measures."""

import math


def log_gamma(x: float) -> float:
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def beta(x: float, y: float) -> float:
    """Euler Beta function, evaluated in log space.

    ``beta(x, y)`` and ``beta(y, x)`` give bit-identical results.
    """
    if not (x > 0 and y > 0):
        raise ValueError(f"beta requires positive arguments, got ({x!r}, {y!r})")
    return math.exp(log_gamma(x) + log_gamma(y) - log_gamma(x + y))


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim (2, 2*pi, 4*pi, ...)."""
    if int(dim) != dim or dim < 1:
        raise ValueError(f"sphere_area requires an integer dim >= 1, got {dim!r}")
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def sphere_ratio(dim: int) -> float:
    """sigma_{dim-1} / sigma_dim, the angular normalisation of a spherical mean."""
    if dim < 2:
        raise ValueError("sphere_ratio needs dim >= 2")
    return sphere_area(dim - 1) / sphere_area(dim)
