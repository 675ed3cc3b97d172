"""Radial interaction potentials W(x) = k(|x|).

The power-law family ``|x|^a/a - |x|^b/b`` carries everything the closed-form
kernels need. Arbitrary radial potentials are described by their profile and
two derivatives (``RadialPotentialDescriptor``) and go through quadrature.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class OmegaContinuity(enum.Enum):
    NOT_CONTINUOUS = "NotContinuous"
    CONTINUOUS_ONLY = "ContinuousOnly"
    C1 = "C1"


@dataclass(frozen=True)
class RegularityFlags:
    kprime_integrable_on_hypersurfaces: bool
    laplacian_integrable_on_hypersurfaces: bool
    omega_continuity_class: OmegaContinuity


def _flags_from_exponent(p: float, dim: int) -> RegularityFlags:
    # k ~ r^p near 0: k' ~ r^(p-1) and the Hessian ~ r^(p-2) are integrable on
    # (N-1)-dimensional surfaces through the singularity iff p > 2-N, p > 3-N.
    kprime = p > 2 - dim
    lap = p > 3 - dim
    if lap:
        cls = OmegaContinuity.C1
    elif kprime:
        cls = OmegaContinuity.CONTINUOUS_ONLY
    else:
        cls = OmegaContinuity.NOT_CONTINUOUS
    return RegularityFlags(kprime, lap, cls)


def _check_radius(r, allow_zero=False):
    r = np.asarray(r, dtype=float)
    bad = r < 0 if allow_zero else r <= 0
    if np.any(bad):
        raise ValueError("radius must be positive")
    return r


@dataclass(frozen=True)
class PowerLawPotential:
    """W(x) = |x|^a/a - |x|^b/b with 2 - dim < b < a."""

    a: float
    b: float
    dim: int = 2

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if not (2 - self.dim < self.b < self.a):
            raise ValueError(
                f"exponents must satisfy 2-N < b < a; got a={self.a}, b={self.b}, N={self.dim}"
            )
        if self.b == 0 or self.a == 0:
            # r^0/0 is the log potential, which this family does not cover
            raise ValueError("zero exponents (logarithmic potentials) are not supported")

    @property
    def terms(self) -> tuple[tuple[float, float], ...]:
        """(coefficient, exponent) pairs with omega = sum coef * r^(c-1) psi_c(eta/r)."""
        return ((1.0, float(self.b)), (-1.0, float(self.a)))

    @property
    def near_origin_exponent(self) -> float:
        return float(min(self.a, self.b))

    def k(self, r):
        r = np.asarray(r, dtype=float)
        if self.b < 0 and np.any(r <= 0):
            raise ValueError("potential is singular at r = 0 for b < 0")
        r = _check_radius(r, allow_zero=True)
        return r**self.a / self.a - r**self.b / self.b

    def k_prime(self, r):
        r = _check_radius(r)
        return r ** (self.a - 1) - r ** (self.b - 1)

    def k_second(self, r):
        r = _check_radius(r)
        return (self.a - 1) * r ** (self.a - 2) - (self.b - 1) * r ** (self.b - 2)

    def descriptor(self) -> "RadialPotentialDescriptor":
        return RadialPotentialDescriptor(
            k=self.k,
            k_prime=self.k_prime,
            k_second=self.k_second,
            near_origin_exponent=self.near_origin_exponent,
            attractive_beyond=1.0,
        )


@dataclass(frozen=True)
class AttractivePotential:
    """Purely attractive W(x) = |x|^a/a; a = 2 gives the linear test case."""

    a: float = 2.0
    dim: int = 2

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if not self.a > 0:
            raise ValueError("attractive exponent must be positive")

    @property
    def terms(self) -> tuple[tuple[float, float], ...]:
        return ((-1.0, float(self.a)),)

    @property
    def near_origin_exponent(self) -> float:
        return float(self.a)

    def k(self, r):
        r = _check_radius(r, allow_zero=True)
        return r**self.a / self.a

    def k_prime(self, r):
        r = _check_radius(r)
        return r ** (self.a - 1)

    def k_second(self, r):
        r = _check_radius(r)
        return (self.a - 1) * r ** (self.a - 2)

    def descriptor(self) -> "RadialPotentialDescriptor":
        return RadialPotentialDescriptor(
            k=self.k,
            k_prime=self.k_prime,
            k_second=self.k_second,
            near_origin_exponent=float(self.a),
            attractive_beyond=0.0,
        )


@dataclass(frozen=True)
class RadialPotentialDescriptor:
    """A radial potential given by k, k' and k'' (numpy-vectorised callables).

    ``near_origin_exponent`` is the leading power p in k(r) ~ c r^p as r -> 0;
    it decides the regularity regime. ``attractive_beyond`` is a radius past
    which k' >= 0, when known.
    """

    k: Callable
    k_prime: Callable
    k_second: Callable
    near_origin_exponent: float
    attractive_beyond: Optional[float] = None

    def check_derivatives(self, r_grid=None, rtol: float = 1e-5) -> bool:
        """Compare k' and k'' against central differences on ``r_grid``."""
        if r_grid is None:
            r_grid = np.geomspace(0.1, 10.0, 41)
        r = np.asarray(r_grid, dtype=float)
        h = 1e-5 * np.maximum(r, 1.0)
        h = np.minimum(h, r / 4)
        fd1 = (self.k(r + h) - self.k(r - h)) / (2 * h)
        fd2 = (self.k_prime(r + h) - self.k_prime(r - h)) / (2 * h)
        ok1 = np.allclose(fd1, self.k_prime(r), rtol=rtol, atol=rtol)
        ok2 = np.allclose(fd2, self.k_second(r), rtol=rtol, atol=rtol)
        return bool(ok1 and ok2)


def regularity(p, dim: Optional[int] = None) -> RegularityFlags:
    """Regularity regime of omega for a potential (power law or descriptor)."""
    if dim is None:
        dim = p.dim
    return _flags_from_exponent(p.near_origin_exponent, dim)
