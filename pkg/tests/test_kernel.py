import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellflow import kernel
from shellflow.kernel import (
    QUADRATURE_ONLY,
    BlowupRegimeError,
    ClosedForm,
    KernelContext,
    KernelDomainError,
    QuadratureError,
)
from shellflow.potential import AttractivePotential, PowerLawPotential, RadialPotentialDescriptor
from shellflow.stability import shell_radius

P422 = PowerLawPotential(4, 2, 2)
P212 = PowerLawPotential(2, 1, 2)
R422 = math.sqrt(3) / 3


def poly422(r, eta):
    return r - r**3 - 2 * r * eta**2


def _direct_psi(c, s, dim, n=400001):
    """Plain trapezoid on the defining angular integral (smooth away from s = 1)."""
    th = np.linspace(0.0, math.pi, n)
    f = (1 - s * np.cos(th)) * np.sin(th) ** (dim - 2) * (1 + s * s - 2 * s * np.cos(th)) ** ((c - 2) / 2)
    norm = np.sin(th) ** (dim - 2)
    return np.trapezoid(f, th) / np.trapezoid(norm, th)


# ------------------------------------------------------------------ psi


@pytest.mark.parametrize("dim", [2, 3, 4])
@pytest.mark.parametrize("c", [0.2, 1.0, 2.0, 3.5, 10.0])
def test_psi_at_zero_is_one(c, dim):
    if c <= 2 - dim:
        pytest.skip("outside the domain")
    assert kernel.psi(c, 0.0, dim) == pytest.approx(1.0, abs=1e-14)
    assert kernel.psi(c, 0.0, dim, QUADRATURE_ONLY) == pytest.approx(1.0, abs=1e-12)


def test_psi_examples():
    assert kernel.psi(2, 0.7, 2) == pytest.approx(1.0, abs=1e-14)
    assert kernel.psi(4, 0.5, 2) == pytest.approx(1.5, abs=1e-14)
    assert kernel.psi(4, 0.5, 2, QUADRATURE_ONLY) == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("c, s, dim", [(1.0, 0.3, 2), (3.0, 2.5, 2), (1.5, 0.6, 3), (0.5, 4.0, 3), (2.5, 0.2, 5)])
def test_psi_against_direct_integration(c, s, dim):
    assert kernel.psi(c, s, dim, QUADRATURE_ONLY) == pytest.approx(_direct_psi(c, s, dim), rel=1e-8)


def test_psi_large_s_asymptotics():
    for dim in (2, 3):
        for c in (1, 2, 3, 4):
            s = 1e3
            assert s ** (2 - c) * kernel.psi(c, s, dim) == pytest.approx((dim + c - 2) / dim, abs=1e-3)


def test_psi_domain():
    with pytest.raises(KernelDomainError):
        kernel.psi(0.0, 0.5, 2)
    with pytest.raises(KernelDomainError):
        kernel.psi(1.0, -0.5, 2)


def test_psi_elliptic_matches_quadrature():
    s = np.array([0.0, 0.1, 0.5, 0.9, 0.999, 1.0, 1.001, 1.5, 7.0])
    closed = kernel.psi(1.0, s, 2)
    quad = kernel.psi(1.0, s, 2, QUADRATURE_ONLY)
    assert np.allclose(closed, quad, rtol=1e-11, atol=1e-12)


def test_quadrature_failure_carries_estimate():
    # no refinement allowed, so no convergence check can ever pass
    ctx = KernelContext(max_level=0, closed_form=ClosedForm.NONE)
    with pytest.raises(QuadratureError) as info:
        kernel.psi(0.5, 0.9, 3, ctx)
    assert info.value.estimate > 0


def test_context_validation():
    with pytest.raises(ValueError):
        KernelContext(quad_order=3)
    with pytest.raises(ValueError):
        KernelContext(abs_tol=0.0)


# ----------------------------------------------------------------- psi_1d


def test_psi_1d_is_the_two_point_mean():
    # mean over y = +-1 of (1 - s y)|1 - s y|^(c - 2)
    for c in (1.0, 1.5, 2.0, 3.0, 4.5):
        for s in (0.0, 0.4, 1.0, 3.0):
            ys = np.array([1.0, -1.0])
            u = 1 - s * ys
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(u == 0, 0.0, u * np.abs(u) ** (c - 2))
            assert kernel.psi_1d(c, s) == pytest.approx(terms.mean(), abs=1e-14)


def test_psi_1d_values():
    assert kernel.psi_1d(3.3, 0.0) == 1.0
    assert kernel.psi_1d(2.0, 3.0) == pytest.approx(1.0)
    assert kernel.psi_1d(1.0, 1.0) == pytest.approx(0.5)


def test_psi_1d_large_s_asymptotics():
    for c in (1.5, 2.0, 3.0, 4.0):
        s = 1e4
        assert s ** (2 - c) * kernel.psi_1d(c, s) == pytest.approx(c - 1, rel=1e-3)


# -------------------------------------------------------------- at s = 1


@pytest.mark.parametrize("c, dim, expected", [(4, 2, 3.0), (2, 2, 1.0), (1, 2, 2 / math.pi)])
def test_psi_at_one_values(c, dim, expected):
    assert kernel.psi_at_one(c, dim) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 3.0, 4.0])
def test_psi_at_one_matches_quadrature(c, dim):
    ctx = QUADRATURE_ONLY
    quad = kernel._psi_quadrature(c, np.array([1.0]), dim, ctx)[0]
    assert quad == pytest.approx(kernel.psi_at_one(c, dim), abs=10 * ctx.abs_tol)


@pytest.mark.parametrize("c, dim, expected", [(4, 2, 4 / 3), (2, 2, 0.0), (2, 5, 0.0), (3, 2, 0.75)])
def test_psi_prime_ratio_values(c, dim, expected):
    assert kernel.psi_prime_ratio_at_one(c, dim) == pytest.approx(expected, abs=1e-15)


def test_psi_prime_ratio_pole():
    with pytest.raises(BlowupRegimeError):
        kernel.psi_prime_ratio_at_one(1.0, 2)


def test_psi_prime_at_one_matches_finite_difference():
    for c, dim in ((3.0, 2), (1.5, 3), (4.2, 3)):
        h = 1e-4
        fd = (kernel.psi(c, 1 + h, dim) - kernel.psi(c, 1 - h, dim)) / (2 * h)
        assert fd == pytest.approx(kernel.psi_prime_at_one(c, dim), rel=1e-4, abs=1e-6)


# ----------------------------------------------------------------- omega


def test_omega_examples():
    assert kernel.omega(P422, 0.5, 0.5).value == pytest.approx(0.125, abs=1e-14)
    v = kernel.omega(P422, R422, R422)
    assert v.on_diagonal
    assert v.value == pytest.approx(0.0, abs=1e-14)
    for p in (P422, P212, PowerLawPotential(3.5, 0.5, 3)):
        for r in (0.3, 1.0, 2.2):
            assert kernel.omega(p, r, 0.0).value == pytest.approx(r ** (p.b - 1) - r ** (p.a - 1), rel=1e-12)


def test_omega_value_flags_diagonal():
    assert not kernel.omega(P422, 0.5, 0.5 * (1 + 1e-12)).on_diagonal
    assert kernel.omega(P422, 0.5, 0.5 * (1 + 1e-15)).on_diagonal


def test_omega_domain():
    with pytest.raises(KernelDomainError):
        kernel.omega(P422, 0.0, 1.0)
    with pytest.raises(KernelDomainError):
        kernel.omega(P422, 1.0, -1.0)


def test_omega_polynomial_against_quadrature():
    g = np.linspace(0.1, 2.0, 20)
    r, e = np.meshgrid(g, g, indexing="ij")
    quad = kernel.omega_array(P422, r, e, QUADRATURE_ONLY)
    assert np.max(np.abs(quad - poly422(r, e))) < 1e-8
    assert np.max(np.abs(kernel.omega_array(P422, r, e) - poly422(r, e))) < 1e-12


def test_omega_homogeneity_per_term():
    p = PowerLawPotential(3.3, 0.7, 3)
    r, eta, lam = 0.7, 1.3, 1.9
    for coef, c in p.terms:
        base = kernel._term_value(c, np.array(r), np.array(eta), 3, kernel.DEFAULT_CONTEXT)
        scaled = kernel._term_value(c, np.array(lam * r), np.array(lam * eta), 3, kernel.DEFAULT_CONTEXT)
        assert scaled == pytest.approx(lam ** (c - 1) * base, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    r=st.floats(0.05, 3.0),
    eta=st.floats(0.0, 3.0),
    a=st.floats(2.2, 6.0),
    frac=st.floats(0.05, 0.95),
)
def test_closed_and_quadrature_routes_agree(r, eta, a, frac):
    # b between 2 - N and a in the plane; the elliptic and polynomial routes only kick in at special b
    b = frac * a
    p = PowerLawPotential(a, b, 2)
    assert kernel.omega_array(p, r, eta) == pytest.approx(
        kernel.omega_array(p, r, eta, QUADRATURE_ONLY), rel=1e-9, abs=1e-10
    )


@settings(max_examples=30, deadline=None)
@given(
    r=st.floats(0.05, 3.0),
    eta=st.floats(0.0, 3.0),
    lam=st.floats(0.2, 5.0),
    c=st.floats(0.1, 5.0),
    dim=st.integers(2, 4),
)
def test_term_homogeneity_property(r, eta, lam, c, dim):
    if c <= 2 - dim:
        return
    ctx = kernel.DEFAULT_CONTEXT
    base = kernel._term_value(c, np.array(r), np.array(eta), dim, ctx)
    scaled = kernel._term_value(c, np.array(lam * r), np.array(lam * eta), dim, ctx)
    assert scaled == pytest.approx(lam ** (c - 1) * base, rel=1e-9, abs=1e-12)


# ------------------------------------------------------------ derivatives


def test_d1_d2_at_shell_polynomial():
    assert kernel.d1_omega(P422, R422, R422) == pytest.approx(-2 / 3, rel=1e-12)
    assert kernel.d2_omega(P422, R422, R422) == pytest.approx(-4 / 3, rel=1e-12)


def test_diagonal_derivative_blows_up_in_continuous_only_regime():
    R = shell_radius(2, 1, 2)
    with pytest.raises(BlowupRegimeError):
        kernel.d1_omega(P212, R, R)
    # off the diagonal the derivative is finite
    assert math.isfinite(kernel.d1_omega(P212, R, 1.1 * R))


@pytest.mark.parametrize("a, b, dim", [(4, 2, 2), (3, 1.2, 2), (5, 1.7, 2), (3.5, 0.8, 3), (6, 1.5, 2)])
def test_c2_sign_and_magnitude(a, b, dim):
    R = shell_radius(a, b, dim)
    total = kernel.d1_omega(PowerLawPotential(a, b, dim), R, R) + kernel.d2_omega(PowerLawPotential(a, b, dim), R, R)
    assert total < 0
    assert total == pytest.approx((b - a) * R ** (b - 2) * kernel.psi_at_one(b, dim), rel=1e-8)


@pytest.mark.parametrize("p", [P422, P212, PowerLawPotential(3.5, 0.8, 3), PowerLawPotential(3, 1.2, 2)])
def test_gradients_match_finite_differences(p):
    pts = [(0.4, 0.9), (1.3, 0.5), (0.8, 0.0), (2.0, 1.7)]
    for r, eta in pts:
        h = 1e-6
        d1, d2 = kernel.omega_grad_array(p, np.array(r), np.array(eta))
        fd1 = (kernel.omega_array(p, r + h, eta) - kernel.omega_array(p, r - h, eta)) / (2 * h)
        assert float(d1) == pytest.approx(fd1, rel=1e-6, abs=1e-7)
        if eta > 0:
            fd2 = (kernel.omega_array(p, r, eta + h) - kernel.omega_array(p, r, eta - h)) / (2 * h)
            assert float(d2) == pytest.approx(fd2, rel=1e-6, abs=1e-7)


def test_omega_with_grad_matches_separate_calls():
    phi = np.linspace(0.0, 1.2, 25) ** 1.3
    for p in (P212, P422, PowerLawPotential(3.5, 0.8, 3)):
        r, e = phi[:, None], phi[None, :]
        w, d1, d2 = kernel.omega_with_grad(p, r, e)
        D1, D2 = kernel.omega_grad_array(p, r, e)
        assert np.allclose(w, kernel.omega_array(p, r, e), rtol=0, atol=1e-14)
        fin = np.isfinite(D1)
        assert np.array_equal(fin, np.isfinite(d1))
        assert np.allclose(d1[fin], D1[fin], rtol=1e-12, atol=1e-12)
        assert np.allclose(d2[np.isfinite(D2)], D2[np.isfinite(D2)], rtol=1e-12, atol=1e-12)


def test_diagonal_slope_is_derivative_of_diagonal_map():
    for p in (P422, P212, PowerLawPotential(3.5, 0.8, 3), PowerLawPotential(5, 3, 1)):
        R, h = 0.7, 1e-6
        fd = (kernel.diagonal_value(p, R + h) - kernel.diagonal_value(p, R - h)) / (2 * h)
        assert kernel.diagonal_slope(p, R) == pytest.approx(fd, rel=1e-7)


# --------------------------------------------------------------- generic


def test_generic_matches_power_law():
    g = np.linspace(0.15, 1.9, 10)
    for p in (P422, P212, PowerLawPotential(3.5, 0.8, 3)):
        d = p.descriptor()
        for r in g:
            for eta in g:
                gen = kernel.omega_generic(d, r, eta, p.dim).value
                assert gen == pytest.approx(float(kernel.omega_array(p, r, eta)), abs=1e-8)


def test_generic_quadratic_potential():
    d = AttractivePotential(2.0, 3).descriptor()
    for r, eta in ((0.5, 0.2), (1.0, 1.0), (2.0, 0.7)):
        assert kernel.omega_generic(d, r, eta, 3).value == pytest.approx(-r, abs=1e-10)
    assert kernel.omega_generic(P422.descriptor(), 1.0, 0.0, 2).value == pytest.approx(-P422.k_prime(1.0), abs=1e-14)


def test_generic_refuses_non_integrable_kprime():
    d = RadialPotentialDescriptor(
        k=lambda r: 1 / r, k_prime=lambda r: -1 / r**2, k_second=lambda r: 2 / r**3, near_origin_exponent=-1.0
    )
    with pytest.raises(BlowupRegimeError):
        kernel.omega_generic(d, 1.0, 0.5, 2)


def test_generic_gradients_match_power_law():
    p = PowerLawPotential(3.5, 1.6, 2)
    d = p.descriptor()
    r = np.array([0.4, 0.9, 1.3, 0.75])
    eta = np.array([0.9, 0.9, 0.2, 0.75])
    g1, g2 = kernel.omega_generic_grad_array(d, r, eta, 2)
    p1, p2 = kernel.omega_grad_array(p, r, eta)
    assert np.allclose(g1, p1, rtol=1e-7, atol=1e-8)
    assert np.allclose(g2, p2, rtol=1e-7, atol=1e-8)


# ------------------------------------------------------- energy helpers


def test_shell_potential_pure_attraction():
    p = AttractivePotential(2.0, 2)
    for r, eta in ((0.5, 0.3), (1.0, 2.0)):
        assert kernel.shell_potential(p, r, eta) == pytest.approx((r * r + eta * eta) / 2, rel=1e-13)


def test_shell_potential_shell_energy():
    # <k> over a single shell of radius R for (4, 2, 2): mean(1-cos)^2 = 3/2, mean(1-cos) = 1
    R = R422
    expected = (4 * R**4 * 1.5) / 4 - (2 * R**2) / 2
    assert kernel.shell_potential(P422, R, R) == pytest.approx(expected, rel=1e-13)
