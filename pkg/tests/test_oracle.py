import numpy as np
import pytest

import mfgdc as M
from mfgdc.problem import kinetic_action


# -- translation oracle -------------------------------------------------------

def test_translation_norms_constant():
    # shift per step is an exact number of cells, so slices are pure rolls
    g = M.make_grid(1, 128)
    traj = M.translation_solution(M.BumpSpec(0.3, 0.3), 0.25, 1.0, g, 32)
    for q in (1.0, 1.5, 2.0, 5.0):
        N = [float(np.mean(m.values**q)) ** (1 / q) for m in traj.m]
        assert max(N) - min(N) <= 1e-13


def test_translation_static():
    g = M.make_grid(1, 64)
    traj = M.translation_solution(M.BumpSpec(0.4, 0.2), 0.0, 1.0, g, 4)
    m0 = traj.m[0].values
    for m in traj.m:
        assert np.array_equal(m.values, m0)
    assert np.max(np.abs(traj.w_values())) == 0.0


def test_translation_action_closed_form():
    g = M.make_grid(1, 128)
    bump = M.BumpSpec(0.3, 0.3)
    traj = M.translation_solution(bump, 0.25, 1.0, g, 64)
    prob = M.PlanningProblem(g, 1.0, 64, traj.m[0], traj.m[-1],
                             M.HamiltonianSpec(2.0), M.CouplingSpec.zero())
    assert kinetic_action(traj, prob) == pytest.approx(0.03125, abs=1e-6)


def test_translation_mass_exact():
    g = M.make_grid(1, 128)
    traj = M.translation_solution(M.BumpSpec(0.3, 0.3), 0.25, 1.0, g, 64)
    masses = [M.integrate(m) for m in traj.m]
    assert max(abs(m - 1.0) for m in masses) <= 1e-14


def test_translation_rejects_wraparound():
    g = M.make_grid(1, 64)
    with pytest.raises(ValueError):
        M.translation_solution(M.BumpSpec(0.3, 0.45), 0.6, 1.0, g, 8)


def test_bump_floor_strictly_positive():
    g = M.make_grid(1, 64)
    f = M.BumpSpec(0.3, 0.3, floor=0.1).field(g)
    assert np.min(f.values) > 0.0
    assert M.integrate(f) == pytest.approx(1.0, abs=1e-14)


# -- quantile interpolant -----------------------------------------------------

def test_quantile_identical_endpoints():
    g = M.make_grid(1, 512)
    f = M.BumpSpec(0.3, 0.3).field(g)
    traj = M.quantile_interpolant_1d(f, f, np.linspace(0, 1, 5))
    for m in traj.m:
        assert np.mean(np.abs(m.values - f.values)) <= 1e-3


def test_quantile_translate_midpoint():
    g = M.make_grid(1, 256)
    m0 = M.BumpSpec(0.25, 0.3).field(g)
    mT = M.BumpSpec(0.65, 0.3).field(g)
    traj = M.quantile_interpolant_1d(m0, mT, np.linspace(0, 1, 5))
    mid = M.BumpSpec(0.45, 0.3).field(g)
    assert np.mean(np.abs(traj.m[2].values - mid.values)) <= 2e-2


def test_quantile_mass_conservation():
    g = M.make_grid(1, 256)
    m0 = M.BumpSpec(0.25, 0.1).field(g)
    mT = M.BumpSpec(0.6, 0.4).field(g)
    traj = M.quantile_interpolant_1d(m0, mT, np.linspace(0, 1, 5))
    for k in (1, 2, 3):
        assert abs(M.integrate(traj.m[k]) - 1.0) <= 1e-6


def test_quantile_requires_common_cut():
    g = M.make_grid(1, 64)
    full = M.constant_field(g, 1.0)
    with pytest.raises(ValueError):
        M.quantile_interpolant_1d(full, full, np.linspace(0, 1, 5))


def test_quantile_agrees_with_translation():
    g = M.make_grid(1, 256)
    traj = M.translation_solution(M.BumpSpec(0.3, 0.3), 0.25, 1.0, g, 8)
    qtraj = M.quantile_interpolant_1d(traj.m[0], traj.m[-1], traj.times)
    worst = max(np.mean(np.abs(a.values - b.values))
                for a, b in zip(traj.m, qtraj.m))
    assert worst <= 2e-2


# -- uniform solution ----------------------------------------------------------

def test_uniform_solution_residuals():
    g = M.make_grid(1, 64)
    coup = M.CouplingSpec.power(1.0, 1.0)
    traj = M.uniform_solution(coup, 2.0, g, 16)
    prob = M.PlanningProblem(g, 2.0, 16, traj.m[0], traj.m[-1],
                             M.HamiltonianSpec(2.0), coup)
    hj, cont = M.residual_norms(traj, prob)
    assert hj <= 1e-12 and cont <= 1e-12


def test_uniform_solution_zero_coupling():
    g = M.make_grid(1, 32)
    traj = M.uniform_solution(M.CouplingSpec.zero(), 1.0, g, 8)
    assert np.max(np.abs(traj.u_values())) == 0.0


def test_uniform_solution_table_value_span():
    z = np.linspace(0.5, 1.5, 33)
    coup = M.CouplingSpec.table(z, 0.7 * z**0)  # constant g = 0.7
    g = M.make_grid(1, 32)
    traj = M.uniform_solution(coup, 2.0, g, 8)
    du = traj.u[-1].values[0] - traj.u[0].values[0]
    assert abs(abs(du) - 1.4) <= 1e-12


# -- traveling wave -------------------------------------------------------------

def test_wave_residuals_alpha0():
    g = M.make_grid(1, 128)
    spec = M.TravelingWaveSpec(M.cosine_profile(0.3), 0.4, 0.0, 2.0)
    res = M.traveling_wave_congestion(spec, g, 128, 0.1)
    hj, cont = res.residuals
    assert hj <= 1e-6 and cont <= 1e-6


def test_wave_coupling_closed_form_beta2():
    # for beta = 2: g(z) = (k0^2 - c^2 z^2) z^(alpha-2) / 2, monotone decreasing
    g = M.make_grid(1, 128)
    for alpha in (0.0, 0.5):
        spec = M.TravelingWaveSpec(M.cosine_profile(0.3), 0.4, alpha, 2.0)
        res = M.traveling_wave_congestion(spec, g, 16, 0.1)
        z = np.linspace(0.72, 1.28, 9)
        expected = (res.k0**2 - 0.16 * z**2) * z**(alpha - 2.0) / 2.0
        assert np.max(np.abs(res.coupling.g(z) - expected)) <= 1e-10
        assert res.monotone_direction == "non-increasing"
        assert res.monotone_margin >= -1e-10


def test_wave_constant_profile_reduces_to_uniform():
    g = M.make_grid(1, 64)
    spec = M.TravelingWaveSpec(M.cosine_profile(0.0), 0.4, 0.5, 2.0)
    res = M.traveling_wave_congestion(spec, g, 8, 1.0)
    assert res.k0 == pytest.approx(-0.4)
    assert np.ptp(res.trajectory.u_values()) <= 1e-14
    assert float(res.coupling.g(np.array([1.0]))[0]) == 0.0


def test_wave_norm_curves_constant():
    g = M.make_grid(1, 128)
    spec = M.TravelingWaveSpec(M.cosine_profile(0.3), 0.4, 0.5, 2.0)
    res = M.traveling_wave_congestion(spec, g, 32, 0.1)
    for q in (1.0, 2.0, 5.0):
        F = [float(np.mean(m.values**q)) for m in res.trajectory.m]
        assert max(F) - min(F) <= 1e-12 * max(F)


def test_wave_mass_and_positivity():
    g = M.make_grid(1, 128)
    spec = M.TravelingWaveSpec(M.cosine_profile(0.3), 0.4, 0.5, 2.0)
    res = M.traveling_wave_congestion(spec, g, 16, 0.1)
    traj = res.trajectory
    assert abs(traj.min_density() - 0.7) <= 1e-8
    masses = [M.integrate(m) for m in traj.m]
    assert max(abs(m - 1.0) for m in masses) <= 1e-12


def test_wave_residual_decay_second_order():
    g = M.make_grid(1, 128)
    spec = M.TravelingWaveSpec(M.cosine_profile(0.3), 0.4, 0.5, 2.0)
    coarse = M.traveling_wave_congestion(spec, g, 64, 0.2)
    fine = M.traveling_wave_congestion(spec, g, 128, 0.2)
    for a, b in zip(coarse.residuals, fine.residuals):
        assert a / b == pytest.approx(4.0, rel=0.25)


def test_wave_rejects_nonunit_mass_profile():
    g = M.make_grid(1, 64)
    spec = M.TravelingWaveSpec(lambda x: 2.0 + 0.3 * np.cos(2 * np.pi * x), 0.4)
    with pytest.raises(ValueError):
        M.traveling_wave_congestion(spec, g, 8, 1.0)


# -- random smooth density -------------------------------------------------------

@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16)])
def test_random_smooth_density(dim, n):
    g = M.make_grid(dim, n)
    f = M.random_smooth_density(g, seed=7)
    assert np.min(f.values) > 0.0
    assert M.integrate(f) == pytest.approx(1.0, abs=1e-14)
    f2 = M.random_smooth_density(g, seed=7)
    assert np.array_equal(f.values, f2.values)  # deterministic
