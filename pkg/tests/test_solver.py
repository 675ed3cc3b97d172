import math

import numpy as np
import pytest

from shellflow import solver
from shellflow.potential import AttractivePotential, PowerLawPotential
from shellflow.solver import (
    RadialState,
    ShellPerturbed,
    SimConfig,
    StepFailure,
    TruncatedGaussianRadial,
    UniformAnnulus,
)
from shellflow.stability import shell_radius

P422 = PowerLawPotential(4, 2, 2)
P212 = PowerLawPotential(2, 1, 2)
LIN = AttractivePotential(2.0, 2)
R422 = math.sqrt(3) / 3


def state_from(phi, t=0.0):
    phi = np.asarray(phi, float)
    return RadialState(np.linspace(0, 1, phi.size), phi, t)


# ---------------------------------------------------------------- states


def test_simpson_weights_integrate_cubics_exactly():
    w = solver.simpson_weights(11)
    x = np.linspace(0, 1, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert w @ x**3 == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        solver.simpson_weights(10)


def test_state_validation():
    with pytest.raises(ValueError):
        state_from([0.1, 0.3, 0.2, 0.4, 0.5])
    with pytest.raises(ValueError):
        state_from([-0.1, 0.3, 0.3, 0.4, 0.5])
    with pytest.raises(ValueError):
        state_from([0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        RadialState(np.linspace(0, 1, 5) ** 2, np.linspace(0.1, 0.5, 5))


def test_state_grid_is_immutable():
    s = state_from(np.linspace(0.1, 0.5, 5))
    with pytest.raises(ValueError):
        s.xi[0] = 0.5
    with pytest.raises(ValueError):
        s.phi[0] = 0.5


def test_init_uniform_annulus():
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 21, 2)
    assert np.allclose(s.phi, np.sqrt(0.09 + s.xi * (0.81 - 0.09)), rtol=0, atol=1e-15)
    assert s.phi[0] == 0.3 and s.phi[-1] == 0.9


def test_init_shell_and_perturbation():
    assert np.all(solver.init_from_density(ShellPerturbed(0.7, 0.0, 1), 11, 2).phi == 0.7)
    s = solver.init_from_density(ShellPerturbed(0.7, 0.05, 3), 11, 2)
    assert s.phi[0] == pytest.approx(0.65) and s.phi[-1] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        solver.init_from_density(ShellPerturbed(0.7, 0.05, 2), 11, 2)


def test_init_gaussian_endpoints_and_cdf():
    prof = TruncatedGaussianRadial(1.0, 0.1, 3.0)
    s = solver.init_from_density(prof, 101, 3)
    assert s.phi[0] == pytest.approx(0.7, abs=1e-12)
    assert s.phi[-1] == pytest.approx(1.3, abs=1e-12)
    # the median of a nearly symmetric bump sits close to its centre
    assert s.phi[50] == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        solver.init_from_density(TruncatedGaussianRadial(-5.0, 0.1, 3.0), 11, 2)


def test_init_rejects_bad_annulus():
    with pytest.raises(ValueError):
        solver.init_from_density(UniformAnnulus(0.9, 0.3), 11, 2)


# ------------------------------------------------------------------ rhs


def test_rhs_pure_attraction():
    s = solver.init_from_density(UniformAnnulus(0.2, 1.1), 31, 2)
    assert np.allclose(solver.rhs(s, LIN), -s.phi, rtol=0, atol=1e-14)


def test_rhs_polynomial_kernel():
    s = solver.init_from_density(UniformAnnulus(0.2, 1.1), 31, 2)
    phi = s.phi
    S2 = s.weights @ phi**2
    assert np.allclose(solver.rhs(s, P422), phi - phi**3 - 2 * phi * S2, rtol=0, atol=1e-14)


@pytest.mark.parametrize("p", [P422, P212, PowerLawPotential(3.5, 0.8, 3)])
def test_rhs_vanishes_on_steady_shell(p):
    R = shell_radius(p.a, p.b, p.dim)
    assert np.max(np.abs(solver.rhs(state_from(np.full(21, R)), p))) < 1e-10


def test_rhs_at_origin_node():
    s = solver.init_from_density(UniformAnnulus(0.0, 1.0), 21, 2)
    V = solver.rhs(s, P212)
    assert np.all(np.isfinite(V)) and V[0] == 0.0


def test_rhs_simpson_order():
    p = P422
    phi = lambda x: 0.4 + 0.3 * x + 0.1 * np.sin(3 * x)
    ref = solver.rhs(state_from(phi(np.linspace(0, 1, 801))), p)[::80]
    errs = []
    for M in (11, 21, 41):
        V = solver.rhs(state_from(phi(np.linspace(0, 1, M))), p)
        stride = (M - 1) // 10
        errs.append(np.max(np.abs(V[::stride] - ref)))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(r == pytest.approx(4.0, abs=0.3) for r in rates)


# ----------------------------------------------------------------- steps


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=1e-2, dt_min=1e-1)
    with pytest.raises(ValueError):
        SimConfig(M=10)
    with pytest.raises(ValueError):
        SimConfig(newton_tol=0.0)
    assert SimConfig(dt=0.02).dt_min == pytest.approx(0.02 / 256)


def test_backward_euler_linear_step():
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 21, 2)
    cfg = SimConfig(dt=0.1, M=21)
    new, info = solver.implicit_step(s, LIN, cfg)
    assert np.allclose(new.phi, s.phi / 1.1, rtol=1e-15, atol=0)
    assert new.t == pytest.approx(0.1)
    assert not info.rearranged


def test_steady_shell_is_fixed():
    s = state_from(np.full(21, R422))
    cfg = SimConfig(dt=1e-2, M=21)
    start = s.phi.copy()
    for _ in range(1000):
        s, info = solver.implicit_step(s, P422, cfg)
        assert info.newton_iters <= 1
    assert np.max(np.abs(s.phi - start)) < 1e-9


def test_small_step_consistency():
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 21, 2)
    V = solver.rhs(s, P422)
    errs = []
    for dt in (1e-3, 5e-4):
        new, _ = solver.implicit_step(s, P422, SimConfig(dt=dt, M=21))
        errs.append(np.max(np.abs((new.phi - s.phi) / dt - V)))
    assert errs[1] == pytest.approx(errs[0] / 2, rel=0.05)


def test_monotone_without_rearrangement():
    cfg = SimConfig(dt=1e-3, t_end=0.3, M=51, enforce_monotone=False, output_every=50)
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 51, 2)
    for _ in range(300):
        s, info = solver.implicit_step(s, P422, cfg)
        assert np.all(np.diff(s.phi) >= 0)
        assert not info.rearranged


def test_continuous_only_regime_steps():
    cfg = SimConfig(dt=1e-2, M=41)
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 41, 2)
    for _ in range(20):
        s, info = solver.implicit_step(s, P212, cfg)
        assert info.residual < cfg.newton_tol


def test_step_failure_reports_residual():
    cfg = SimConfig(dt=1e-2, M=21, newton_tol=1e-300, newton_max_iter=2, dt_min=2.5e-3)
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 21, 2)
    with pytest.raises(StepFailure) as info:
        solver.implicit_step(s, P422, cfg)
    assert info.value.residual > 0


def test_simulate_returns_partial_series_on_failure():
    cfg = SimConfig(dt=1e-2, t_end=1.0, M=21, newton_tol=1e-300, newton_max_iter=2, dt_min=2.5e-3)
    res = solver.simulate(P422, cfg, UniformAnnulus(0.3, 0.9))
    assert not res.completed and res.error
    assert len(res.diagnostics) == len(res.snapshots) >= 1


# ----------------------------------------------------------- diagnostics


def test_wasserstein_examples():
    s = state_from(np.full(11, 0.8))
    for alpha in (1.0, 2.0, 3.5, math.inf):
        assert solver.wasserstein_to_shell(s, 0.8, alpha) == 0.0
        assert solver.wasserstein_to_shell(state_from(np.full(11, 0.9)), 0.8, alpha) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        solver.wasserstein_to_shell(s, 0.8, 0.5)


def test_wasserstein_annulus_closed_form():
    r1, r2 = 0.3, 0.9
    R = 0.5 * (r1 + r2)
    s = solver.init_from_density(UniformAnnulus(r1, r2), 2001, 2)
    mean_sq = (r1**2 + r2**2) / 2
    mean = (2 / 3) * (r2**3 - r1**3) / (r2**2 - r1**2)
    exact = math.sqrt(mean_sq - 2 * R * mean + R * R)
    assert solver.wasserstein_to_shell(s, R, 2.0) == pytest.approx(exact, rel=1e-9)


def test_gamma_theta_examples():
    assert solver.gamma_theta(state_from(np.full(11, 0.6)), 0.6) == (0.0, pytest.approx(0.0, abs=1e-15))
    s = state_from(0.6 + 0.05 * (2 * np.linspace(0, 1, 11) - 1))
    g, th = solver.gamma_theta(s, 0.6)
    assert g == pytest.approx(0.1) and th == pytest.approx(0.0, abs=1e-15)


def test_energy_of_steady_shell():
    s = state_from(np.full(21, R422))
    assert solver.energy(s, P422) == pytest.approx(-1 / 12, rel=1e-13)
    assert abs(solver.dissipation(s, P422)) < 1e-12


def test_energy_pure_attraction():
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 41, 2)
    # <|x - y|^2/2> over independent draws is <r^2>
    assert solver.energy(s, LIN) == pytest.approx(0.5 * (s.weights @ s.phi**2), rel=1e-13)


def test_support_bound_table():
    assert solver.support_bound(P422, 0.9) == pytest.approx(1.0)
    assert solver.support_bound(P422, 1.3) == pytest.approx(1.3)
    s = solver.init_from_density(UniformAnnulus(0.3, 0.9), 21, 2)
    assert solver.support_bound_check(s, P422, 0.9)


def test_fit_log_slope():
    t = np.linspace(0, 5, 50)
    assert solver.fit_log_slope(t, 3 * np.exp(-0.7 * t)) == pytest.approx(-0.7)
    assert math.isnan(solver.fit_log_slope(t, np.zeros(50)))


# ------------------------------------------------------------ dynamics


def test_exponential_stability_from_perturbed_shell():
    cfg = SimConfig(dt=1e-2, t_end=10.0, M=101, output_every=10)
    res = solver.simulate(P422, cfg, ShellPerturbed(R422, 0.02, 1))
    assert res.completed
    t = [d.t for d in res.diagnostics]
    slope = solver.fit_log_slope(t, [d.d_2 for d in res.diagnostics], 1.0, 10.0)
    assert slope <= -0.5
    for d in res.diagnostics:
        assert d.d_inf >= d.d_2 - 1e-15


def test_unstable_regime_does_not_converge():
    cfg = SimConfig(dt=5e-2, t_end=50.0, M=51, output_every=10)
    res = solver.simulate(P212, cfg, UniformAnnulus(0.3, 0.9))
    assert res.completed
    late = [d for d in res.diagnostics if d.t >= 5.0]
    assert min(d.d_inf for d in late) > 0.05


def test_pure_attraction_matches_exponential():
    cfg = SimConfig(dt=1e-3, t_end=1.0, M=21, output_every=100)
    res = solver.simulate(LIN, cfg, UniformAnnulus(0.3, 0.9))
    phi0 = res.snapshots[0].phi
    assert np.max(np.abs(res.final.phi - phi0 * math.exp(-1.0))) < 1e-3
