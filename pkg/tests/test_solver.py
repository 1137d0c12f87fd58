import numpy as np
import pytest

import mfgdc as M
from mfgdc.problem import kinetic_action
from mfgdc.variational import (
    _SpaceTime,
    _avg_var,
    _constrained_step,
    _coupling_prox,
    _dtime_var,
    _kinetic_prox,
)


def _smooth_problem(n=32, K=8, T=1.0, seed=(1, 2), coupling=None, alpha=0.0,
                    beta=2.0, dim=1):
    g = M.make_grid(dim, n)
    m0 = M.random_smooth_density(g, seed=seed[0])
    mT = M.random_smooth_density(g, seed=seed[1])
    coupling = coupling or M.CouplingSpec.power(1.0, 1.0)
    return M.PlanningProblem(g, T, K, m0, mT, M.HamiltonianSpec(beta), coupling,
                             M.CongestionParams(alpha))


# -- constrained least-squares step ------------------------------------------

@pytest.mark.parametrize("dim,n,K", [(1, 8, 4), (1, 16, 5), (2, 8, 3)])
def test_constrained_step_feasibility_and_optimality(dim, n, K):
    g = M.make_grid(dim, n)
    dt = 1.0 / K
    st = _SpaceTime(g, K, dt)
    rng = np.random.default_rng(0)
    m0 = M.random_smooth_density(g, seed=3).values
    mT = M.random_smooth_density(g, seed=4).values
    c_avg = np.zeros((K,) + g.shape)
    c_avg[0], c_avg[-1] = 0.5 * m0, 0.5 * mT
    b = np.zeros((K,) + g.shape)
    b[0], b[-1] = m0 / dt, -mT / dt
    t_mu = rng.normal(size=(K,) + g.shape)
    t_w = rng.normal(size=(K, dim) + g.shape)
    t_nu = rng.normal(size=(K - 1,) + g.shape)
    m_int, w, lam = _constrained_step(st, t_mu, t_w, t_nu, c_avg, b)
    res = _dtime_var(m_int, K, dt) + st.div(w) - b
    assert np.max(np.abs(res)) <= 1e-11
    # stationarity: gradient of the objective lies in the constraint row space
    grad_m = (_avg_var(m_int, K) + c_avg - t_mu)
    # avg^T grad_m + (m - t_nu) must equal -(Dt^T lam); w - t_w = grad lam
    from mfgdc.variational import _avg_T, _dtime_T
    lhs_m = _avg_T(grad_m) + (m_int - t_nu) + _dtime_T(lam, dt)
    assert np.max(np.abs(lhs_m)) <= 1e-11
    lhs_w = (w - t_w) - st.grad(lam)
    assert np.max(np.abs(lhs_w)) <= 1e-11


# -- pointwise proximal maps ----------------------------------------------------

@pytest.mark.parametrize("beta", [2.0, 1.5, 3.0])
def test_kinetic_prox_against_dense_scan(beta):
    # independent oracle: dense grid scan of the prox objective over m >= 0
    ham = M.HamiltonianSpec(beta)
    rng = np.random.default_rng(42)
    mm = np.linspace(1e-9, 3.5, 701)
    ww = np.linspace(-2.5, 2.5, 501)
    MM, WW = np.meshgrid(mm, ww, indexing="ij")
    kin = MM * ham.L_of_norm(np.abs(WW) / MM)
    for _ in range(12):
        a = rng.uniform(-0.5, 2.0)
        bv = rng.uniform(-1.5, 1.5)
        r = rng.uniform(0.5, 3.0)
        m, w = _kinetic_prox(ham, np.array([[a]]), np.array([[[bv]]]), r)
        m, w = float(m[0, 0]), float(w[0, 0, 0])
        vals = kin + 0.5 * r * ((MM - a) ** 2 + (WW - bv) ** 2)
        best = min(float(np.min(vals)), 0.5 * r * (a**2 + bv**2))
        mine = (0.5 * r * (a**2 + bv**2) if m == 0.0
                else m * float(ham.L_of_norm(abs(w) / m))
                + 0.5 * r * ((m - a) ** 2 + (w - bv) ** 2))
        assert mine <= best + 1e-4  # scan resolution


@pytest.mark.parametrize("beta", [2.0, 1.5, 3.0])
def test_kinetic_prox_stationarity(beta):
    # interior outputs satisfy the optimality system to solver precision
    ham = M.HamiltonianSpec(beta)
    rng = np.random.default_rng(5)
    a = rng.uniform(0.2, 2.0, size=(4, 8))
    bv = rng.uniform(-1.5, 1.5, size=(4, 1, 8))
    r = 1.3
    m, w = _kinetic_prox(ham, a, bv, r)
    pos = m > 0
    v = np.abs(w[:, 0, :]) / np.where(pos, m, 1.0)
    grad_L = ham.DL_factor(v) * v  # dL/dv at speed v
    # w-optimality: sign(w) grad_L + r (w - bv) = 0
    res_w = np.sign(w[:, 0, :]) * grad_L + r * (w[:, 0, :] - bv[:, 0, :])
    assert np.max(np.abs(res_w[pos])) <= 1e-9
    # m-optimality: -H(dL(v)) + r (m - a) = 0
    res_m = -ham.H_of_norm(grad_L) + r * (m - a)
    assert np.max(np.abs(res_m[pos])) <= 1e-9


def test_kinetic_prox_vacuum_exact_zero():
    ham = M.HamiltonianSpec(2.0)
    m, w = _kinetic_prox(ham, np.array([[-0.5]]), np.array([[[0.1]]]), 1.0)
    assert m[0, 0] == 0.0 and w[0, 0, 0] == 0.0


def test_coupling_prox_kinds():
    tgt = np.array([2.0, -1.0, 0.5])
    out = _coupling_prox(M.CouplingSpec.zero(), tgt, 1.0)
    assert np.allclose(out, [2.0, 0.0, 0.5])
    out = _coupling_prox(M.CouplingSpec.power(1.0, 1.0), tgt, 1.0)
    assert np.allclose(out, [1.0, 0.0, 0.25])
    # power theta=2: solve g(v) + r(v - t) = 0 by hand at t=2, r=1: v^2+v-2=0 -> 1
    out = _coupling_prox(M.CouplingSpec.power(1.0, 2.0), np.array([2.0]), 1.0)
    assert out[0] == pytest.approx(1.0, abs=1e-10)
    z = np.linspace(0.0, 5.0, 64)
    table = M.CouplingSpec.table(z, z.copy())
    out = _coupling_prox(table, tgt, 1.0)
    assert np.allclose(out, [1.0, 0.0, 0.25], atol=1e-9)


# -- variational backend -----------------------------------------------------------

def test_variational_uniform_stationary():
    g = M.make_grid(1, 32)
    ones = M.constant_field(g, 1.0)
    coup = M.CouplingSpec.power(1.0, 1.0)
    prob = M.PlanningProblem(g, 2.0, 8, ones, ones, M.HamiltonianSpec(2.0), coup)
    traj, diag = M.solve_planning_variational(
        prob, M.SolverParams(max_iters=2000, tol_residual=1e-10, check_every=10))
    assert diag.converged
    assert np.max(np.abs(traj.m_values() - 1.0)) <= 1e-10
    assert np.max(np.abs(traj.w_values())) <= 1e-10
    uex = -(traj.times - 1.0)  # -(t - T/2) g(1)
    assert np.max(np.abs(traj.u_values() - uex[:, None])) <= 1e-9
    # energy equals G(1) * T
    assert diag.energy == pytest.approx(0.5 * 2.0, abs=1e-10)


def test_variational_rejects_congestion():
    prob = _smooth_problem(alpha=0.5)
    with pytest.raises(ValueError, match="newton"):
        M.solve_planning_variational(prob)


def test_variational_failure_carries_state():
    prob = _smooth_problem()
    with pytest.raises(M.SolverError) as err:
        M.solve_planning_variational(
            prob, M.SolverParams(max_iters=3, tol_residual=1e-14, check_every=1))
    assert err.value.trajectory is not None
    assert err.value.diagnostics.iterations == 3


def test_variational_energy_history_non_increasing():
    prob = _smooth_problem(n=32, K=8)
    traj, diag = M.solve_planning_variational(
        prob, M.SolverParams(max_iters=3000, tol_residual=1e-7, check_every=10))
    hist = diag.energy_history
    assert len(hist) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_variational_mass_conserved_machine_precision():
    prob = _smooth_problem(n=64, K=16)
    traj, diag = M.solve_planning_variational(
        prob, M.SolverParams(max_iters=3000, tol_residual=1e-6, check_every=25))
    masses = np.array([M.integrate(m) for m in traj.m])
    assert np.max(np.abs(masses - 1.0)) <= 1e-10


def test_variational_translate_bump_matches_oracle():
    g = M.make_grid(1, 64)
    bump = M.BumpSpec(0.3, 0.3)
    m0, mT = bump.field(g), bump.field(g, shift=0.2)
    prob = M.PlanningProblem(g, 1.0, 16, m0, mT, M.HamiltonianSpec(2.0),
                             M.CouplingSpec.zero())
    try:
        traj, _ = M.solve_planning_variational(
            prob, M.SolverParams(max_iters=4000, tol_residual=2e-3,
                                 check_every=100, eps_m=1e-2))
    except M.SolverError as err:  # tolerance miss at the free boundary is fine here
        traj = err.trajectory
    oracle = M.translation_solution(bump, 0.2, 1.0, g, 16)
    rel = np.sqrt(np.sum((traj.m_values() - oracle.m_values()) ** 2)
                  / np.sum(oracle.m_values() ** 2))
    assert rel <= 8e-2  # coarse n=64, K=16; the acceptance suite holds 5e-2 at n=128, K=64
    act = kinetic_action(traj, prob)
    assert act == pytest.approx(0.02, rel=2e-2)  # c^2/(2T)


@pytest.mark.parametrize("beta", [1.5, 3.0])
def test_variational_non_quadratic_hamiltonian(beta):
    prob = _smooth_problem(n=32, K=8, beta=beta)
    traj, diag = M.solve_planning_variational(
        prob, M.SolverParams(max_iters=6000, tol_residual=1e-5, check_every=50))
    assert diag.converged
    t, F = M.functional_curve(traj, M.InternalEnergy.power(2.0))
    rep = M.convexity_report(t, F)
    assert rep.pass_convexity and rep.pass_chord


def test_variational_2d():
    prob = _smooth_problem(n=16, K=6, dim=2, seed=(5, 6))
    traj, diag = M.solve_planning_variational(
        prob, M.SolverParams(max_iters=4000, tol_residual=1e-6, check_every=50))
    assert diag.converged
    masses = np.array([M.integrate(m) for m in traj.m])
    assert np.max(np.abs(masses - 1.0)) <= 1e-10


# -- Newton backend ------------------------------------------------------------------

def test_newton_uniform_any_alpha():
    g = M.make_grid(1, 32)
    ones = M.constant_field(g, 1.0)
    coup = M.CouplingSpec.power(1.0, 1.0)
    for alpha in (0.0, 0.7):
        prob = M.PlanningProblem(g, 2.0, 8, ones, ones, M.HamiltonianSpec(2.0),
                                 coup, M.CongestionParams(alpha))
        traj, diag = M.solve_planning_newton(
            prob, M.SolverParams(backend="newton", tol_residual=1e-11))
        assert diag.converged
        uex = -(traj.times - 1.0)
        assert np.max(np.abs(traj.u_values() - uex[:, None])) <= 1e-10
        assert max(diag.hj_residual, diag.continuity_residual) <= 1e-11


def test_newton_jacobian_matches_fd():
    from mfgdc.newton import _Stepper
    prob = _smooth_problem(n=16, K=4, alpha=0.3)
    st = _Stepper(prob, 0.3)
    rng = np.random.default_rng(0)
    K, N = 4, 16
    s = rng.normal(size=(K - 1, 16)) * 0.1
    u = rng.normal(size=(K, 16)) * 0.1
    dblocks, sup, sub = st.jacobian_blocks(s, u)
    nb = 2 * K - 1
    J = np.zeros((nb * N, nb * N))
    for i in range(nb):
        J[i * N:(i + 1) * N, i * N:(i + 1) * N] = dblocks[i]
        if i < nb - 1:
            J[i * N:(i + 1) * N, (i + 1) * N:(i + 2) * N] = sup[i]
            J[(i + 1) * N:(i + 2) * N, i * N:(i + 1) * N] = sub[i]

    def resid_vec(s, u):
        cont, hj = st.residual(s, u)
        vec = np.zeros(nb * N)
        for k in range(K):
            vec[2 * k * N:(2 * k + 1) * N] = cont[k]
        for k in range(1, K):
            vec[(2 * k - 1) * N:2 * k * N] = hj[k - 1]
        return vec

    f0 = resid_vec(s, u)
    eps = 1e-7
    for c in rng.choice(nb * N, size=8, replace=False):
        block, off = divmod(int(c), N)
        s1, u1 = s.copy(), u.copy()
        if block % 2 == 0:
            u1[block // 2, off] += eps
        else:
            s1[block // 2, off] += eps
        fd = (resid_vec(s1, u1) - f0) / eps
        assert np.max(np.abs(fd - J[:, c])) <= 2e-4 * max(1.0, np.max(np.abs(J[:, c])))


def test_newton_matches_variational_alpha0():
    prob = _smooth_problem(n=32, K=8)
    tv, _ = M.solve_planning_variational(
        prob, M.SolverParams(max_iters=4000, tol_residual=1e-8, check_every=25))
    tn, diag = M.solve_planning_newton(
        prob, M.SolverParams(backend="newton", tol_residual=1e-11))
    rel = np.sqrt(np.sum((tv.m_values() - tn.m_values()) ** 2)
                  / np.sum(tv.m_values() ** 2))
    assert rel <= 1e-6  # same discrete optimality system
    assert diag.converged


def test_newton_congestion_continuation():
    prob = _smooth_problem(n=32, K=8, alpha=0.4, seed=(7, 8))
    traj, diag = M.solve_planning_newton(
        prob, M.SolverParams(backend="newton", tol_residual=1e-10, alpha_step=0.2))
    assert diag.converged
    assert any("continuation" in note for note in diag.notes)
    masses = np.array([M.integrate(m) for m in traj.m])
    assert np.max(np.abs(masses - 1.0)) <= 1e-9
    assert max(diag.hj_residual, diag.continuity_residual) <= 1e-10


def test_newton_rejects_vacuum_endpoints():
    g = M.make_grid(1, 64)
    bump = M.BumpSpec(0.3, 0.3)
    prob = M.PlanningProblem(g, 1.0, 8, bump.field(g), bump.field(g, 0.1),
                             M.HamiltonianSpec(2.0), M.CouplingSpec.zero())
    with pytest.raises(ValueError, match="positive"):
        M.solve_planning_newton(prob)


def test_newton_beta3():
    prob = _smooth_problem(n=32, K=8, beta=3.0, seed=(9, 10))
    traj, diag = M.solve_planning_newton(
        prob, M.SolverParams(backend="newton", tol_residual=1e-9))
    assert diag.converged


def test_newton_init_trajectory_used():
    prob = _smooth_problem(n=32, K=8, alpha=0.3)
    base, _ = M.solve_planning_newton(
        prob, M.SolverParams(backend="newton", tol_residual=1e-10, alpha_step=0.15))
    traj, diag = M.solve_planning_newton(
        prob, M.SolverParams(backend="newton", tol_residual=1e-10), init=base)
    assert diag.converged and diag.iterations <= 4  # warm start converges directly


# -- residual evaluation ----------------------------------------------------------

def test_residual_norms_requires_u():
    g = M.make_grid(1, 64)
    traj = M.translation_solution(M.BumpSpec(0.3, 0.3), 0.2, 1.0, g, 8)
    prob = M.PlanningProblem(g, 1.0, 8, traj.m[0], traj.m[-1],
                             M.HamiltonianSpec(2.0), M.CouplingSpec.zero())
    with pytest.raises(ValueError):
        M.residual_norms(traj, prob)


def test_residual_norms_detects_perturbation():
    g = M.make_grid(1, 128)
    spec = M.TravelingWaveSpec(M.cosine_profile(0.3), 0.4, 0.0, 2.0)
    res = M.traveling_wave_congestion(spec, g, 64, 0.1)
    traj = res.trajectory
    prob = M.PlanningProblem(g, 0.1, 64, traj.m[0], traj.m[-1],
                             M.HamiltonianSpec(2.0), res.coupling)
    hj0, _ = M.residual_norms(traj, prob)
    (x,) = g.coordinates()
    pert = 1e-3 * np.sin(2 * np.pi * x)
    u2 = tuple(M.ScalarField(g, s.values + pert) for s in traj.u)
    hj1, _ = M.residual_norms(traj.with_u(u2), prob)
    assert hj1 >= 1e-4
    assert hj1 > 10 * hj0


def test_gauge_invariance_of_residuals():
    g = M.make_grid(1, 64)
    coup = M.CouplingSpec.power(1.0, 1.0)
    traj = M.uniform_solution(coup, 1.0, g, 8)
    prob = M.PlanningProblem(g, 1.0, 8, traj.m[0], traj.m[-1],
                             M.HamiltonianSpec(2.0), coup)
    base = M.residual_norms(traj, prob)
    shifted = traj.with_u(tuple(M.ScalarField(g, s.values + 17.3) for s in traj.u))
    other = M.residual_norms(shifted, prob)
    assert abs(base[0] - other[0]) <= 1e-12
    assert abs(base[1] - other[1]) <= 1e-12
