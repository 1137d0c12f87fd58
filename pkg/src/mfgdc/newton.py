"""Damped-Newton backend for the planning problem, with congestion continuation.

The discrete system collocates the value equation at interior integer time
nodes and the density equation at half nodes, with the value function u on
half nodes and s = ln m on interior integer nodes (endpoint densities are
data).  At alpha = 0 this system is exactly the optimality system of the
variational backend, so the two backends converge to the same discrete
solution.  Spatial derivatives are spectral; the density equation telescopes
in time, so converged iterates conserve mass to solver tolerance.

The Jacobian is assembled analytically in dense per-slice blocks (spectral
differentiation matrices) and the step solved by block-tridiagonal LU.  The
additive gauge freedom of u is removed by pinning one value and dropping the
one dependent density equation; the reported residuals are always those of
the full unpinned system.

For alpha > 0 without an initial guess, the congestion exponent is continued
from the alpha = 0 variational solution in steps of alpha_step, warm-starting
each Newton solve from the previous one.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft
from scipy.linalg import lu_factor, lu_solve

from .core import TorusGrid, Trajectory, grad_arrays, trajectory_from_arrays
from .problem import PlanningProblem, SolveDiagnostics, SolverError, SolverParams


def _diff_matrices(grid: TorusGrid) -> list[np.ndarray]:
    """Dense spectral differentiation matrices acting on flattened fields."""
    n = grid.n
    eye = np.eye(n)
    spec = sfft.fft(eye, axis=0)
    k = 2.0 * np.pi * sfft.fftfreq(n, d=grid.h)
    k[n // 2] = 0.0
    D = sfft.ifft(spec * (1j * k)[:, None], axis=0).real.T
    D = np.ascontiguousarray(D.T)  # D[i, j] so that (D @ f)[i] = f'(x_i)
    if grid.dim == 1:
        return [D]
    eyeN = np.eye(n)
    return [np.kron(D, eyeN), np.kron(eyeN, D)]


class _Stepper:
    """Residual and Jacobian of the staggered planning system at fixed alpha."""

    def __init__(self, problem: PlanningProblem, alpha: float):
        self.problem = problem
        self.grid = problem.grid
        self.K = problem.K
        self.dt = problem.dt
        self.ham = problem.hamiltonian
        self.coupling = problem.coupling
        self.alpha = alpha
        beta = self.ham.beta
        self.g1 = alpha * (1.0 - beta)        # value-equation exponent
        self.g2 = 1.0 + alpha * (1.0 - beta)  # flux exponent
        self.N = self.grid.size
        self.m0, self.mT = problem.normalized_endpoints()
        self.DX = None  # assembled lazily

    # state layout: s_int (K-1, *shape), u_half (K, *shape)

    def m_full(self, s_int: np.ndarray) -> np.ndarray:
        return np.concatenate([self.m0[None], np.exp(s_int), self.mT[None]], axis=0)

    def gauge_profiles(self) -> np.ndarray:
        """Spatial modes annihilated by every spectral derivative (the global
        constant plus the Nyquist lines): their u amplitudes are pure gauge,
        pinned at the first half slice during the linear solves."""
        grid = self.grid
        lap = np.zeros(grid.shape)
        for k in grid.wavenumbers():
            lap = lap + k**2
        profiles = []
        from scipy import fft as sfft
        for idx in np.argwhere(lap == 0.0):
            spec = np.zeros(grid.shape, dtype=complex)
            spec[tuple(idx)] = 1.0
            profiles.append(sfft.ifftn(spec).real.ravel() * grid.size)
        return np.stack(profiles)

    def residual(self, s_int: np.ndarray, u_half: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
        """(continuity residual at half nodes, value residual at interior nodes)."""
        K, dt, grid = self.K, self.dt, self.grid
        m = self.m_full(s_int)
        mbar = 0.5 * (m[:-1] + m[1:])
        du = [grad_arrays(u_half[k], grid) for k in range(K)]
        pn = [np.sqrt(sum(c * c for c in d)) for d in du]
        hval = [self.ham.H_of_norm(p) for p in pn]
        sfac = [self.ham.Dp_factor(p) for p in pn]
        cont = np.empty((K,) + grid.shape)
        for k in range(K):
            coef = mbar[k]**self.g2 * sfac[k]
            flux = [coef * c for c in du[k]]
            cont[k] = (m[k + 1] - m[k]) / dt - _div(flux, grid)
        hj = np.empty((K - 1,) + grid.shape)
        for k in range(1, K):
            mk = m[k]
            cong = mk**self.g1 if self.alpha > 0 else 1.0
            hj[k - 1] = (-(u_half[k] - u_half[k - 1]) / dt
                         + cong * 0.5 * (hval[k - 1] + hval[k])
                         - self.coupling.g(mk))
        return cont, hj

    def residual_norm(self, s_int, u_half) -> float:
        cont, hj = self.residual(s_int, u_half)
        return max(float(np.max(np.abs(cont))), float(np.max(np.abs(hj))))

    def jacobian_blocks(self, s_int: np.ndarray, u_half: np.ndarray):
        """Block-tridiagonal Jacobian in the interleaved slice ordering
        [u_0, s_1, u_1, s_2, ..., s_{K-1}, u_{K-1}]."""
        if self.DX is None:
            self.DX = _diff_matrices(self.grid)
        DX = self.DX
        K, dt, N = self.K, self.dt, self.N
        beta = self.ham.beta
        m = self.m_full(s_int).reshape(self.K + 1, N)
        mbar = 0.5 * (m[:-1] + m[1:])
        du = [np.stack([d.ravel() for d in grad_arrays(u_half[k], self.grid)])
              for k in range(K)]
        pn = [np.sqrt(np.sum(d * d, axis=0)) for d in du]
        sfac = [self.ham.Dp_factor(p) for p in pn]

        nblocks = 2 * K - 1
        diag = [None] * nblocks
        sup = [np.zeros((N, N)) for _ in range(nblocks - 1)]
        sub = [np.zeros((N, N)) for _ in range(nblocks - 1)]

        def hpp_apply(k):
            """Matrix of v -> div(mbar^g2 * D^2_pp H(Du_k) grad v), flattened."""
            out = np.zeros((N, N))
            coef = mbar[k]**self.g2
            p = du[k]
            pnk = pn[k]
            s = sfac[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(pnk > 0, (beta - 2.0) * pnk**(beta - 4.0), 0.0)
            if beta == 2.0:
                t = np.zeros_like(pnk)
            for ax in range(self.grid.dim):
                for ax2 in range(self.grid.dim):
                    hpp = t * p[ax] * p[ax2]
                    if ax == ax2:
                        hpp = hpp + s
                    out += DX[ax] @ (np.multiply(coef * hpp, DX[ax2].T).T)
            return out

        for k in range(K):  # continuity blocks (even block rows 2k)
            i = 2 * k
            diag[i] = -hpp_apply(k)
            coef_bar = self.g2 * mbar[k]**(self.g2 - 1.0) * sfac[k]
            if k >= 1:  # d/ds_k
                c = (coef_bar * 0.5 * m[k]).ravel()
                blk = np.zeros((N, N))
                for ax in range(self.grid.dim):
                    blk -= DX[ax] @ np.diag(c * du[k][ax])
                blk -= np.diag(m[k].ravel()) / dt
                sub[i - 1] = blk
            if k <= K - 2:  # d/ds_{k+1}
                c = (coef_bar * 0.5 * m[k + 1]).ravel()
                blk = np.zeros((N, N))
                for ax in range(self.grid.dim):
                    blk -= DX[ax] @ np.diag(c * du[k][ax])
                blk += np.diag(m[k + 1].ravel()) / dt
                sup[i] = blk
        for k in range(1, K):  # value-equation blocks (odd block rows 2k-1)
            i = 2 * k - 1
            mk = m[k].ravel()
            cong = mk**self.g1 if self.alpha > 0 else np.ones_like(mk)
            pnorm_pair = (self.ham.H_of_norm(pn[k - 1]) + self.ham.H_of_norm(pn[k]))
            ds = (self.g1 * cong * 0.5 * pnorm_pair
                  - self.coupling.g_prime(mk) * mk)
            diag[i] = np.diag(ds)
            blk_prev = np.eye(N) / dt
            blk_next = -np.eye(N) / dt
            for ax in range(self.grid.dim):
                blk_prev = blk_prev + np.multiply(
                    (cong * 0.5 * sfac[k - 1] * du[k - 1][ax])[:, None], DX[ax])
                blk_next = blk_next + np.multiply(
                    (cong * 0.5 * sfac[k] * du[k][ax])[:, None], DX[ax])
            sub[i - 1] = blk_prev
            sup[i] = blk_next
        return diag, sup, sub


def _div(comps, grid) -> np.ndarray:
    from .core import div_arrays
    return div_arrays(list(comps), grid)


def _solve_block_tridiag(diag, sup, sub, rhs_blocks):
    """Thomas algorithm with dense LU per block."""
    n = len(diag)
    Gs = [None] * n
    rs = [None] * n
    lu = lu_factor(diag[0])
    Gs[0] = lu_solve(lu, sup[0]) if n > 1 else None
    rs[0] = lu_solve(lu, rhs_blocks[0])
    for i in range(1, n):
        A = diag[i] - (sub[i - 1] @ Gs[i - 1])
        lu = lu_factor(A)
        if i < n - 1:
            Gs[i] = lu_solve(lu, sup[i])
        rs[i] = lu_solve(lu, rhs_blocks[i] - sub[i - 1] @ rs[i - 1])
    xs = [None] * n
    xs[-1] = rs[-1]
    for i in range(n - 2, -1, -1):
        xs[i] = rs[i] - Gs[i] @ xs[i + 1]
    return xs


def _newton_solve(stepper: _Stepper, s_int, u_half, params: SolverParams,
                  diag: SolveDiagnostics, stage: str):
    """Damped Newton until the full-system max-norm residual meets tol."""
    K, N = stepper.K, stepper.N
    shape = stepper.grid.shape
    profiles = stepper.gauge_profiles()
    for it in range(params.newton_max_iters):
        cont, hj = stepper.residual(s_int, u_half)
        rnorm = max(float(np.max(np.abs(cont))), float(np.max(np.abs(hj))))
        diag.residual_history.append(
            {"stage": stage, "iteration": it, "residual": rnorm,
             "hj": float(np.max(np.abs(hj))),
             "continuity": float(np.max(np.abs(cont)))})
        diag.iterations += 1
        if rnorm <= params.tol_residual:
            return s_int, u_half, rnorm
        dblocks, sup, sub = stepper.jacobian_blocks(s_int, u_half)
        rhs = [None] * (2 * K - 1)
        for k in range(K):
            rhs[2 * k] = -cont[k].ravel()[:, None]
        for k in range(1, K):
            rhs[2 * k - 1] = -hj[k - 1].ravel()[:, None]
        # gauge: pin the invisible-mode amplitudes of u_half[0], dropping the
        # dependent density equations at cells where the mode profiles stay
        # independent (the residuals above are unpinned; filtered endpoint
        # data keep the dropped equations consistent)
        u0 = u_half[0].ravel()
        if stepper.grid.dim == 1:
            pin_rows = [0, 1]
        else:
            n = stepper.grid.n
            pin_rows = [0, 1, n, n + 1]
        for p in range(profiles.shape[0]):
            row = pin_rows[p]
            dblocks[0][row, :] = profiles[p]
            sup[0][row, :] = 0.0
            rhs[0][row, 0] = -float(profiles[p] @ u0)
        xs = _solve_block_tridiag(dblocks, sup, sub, rhs)
        du = np.stack([xs[2 * k].ravel().reshape(shape) for k in range(K)])
        ds = np.stack([xs[2 * k - 1].ravel().reshape(shape) for k in range(1, K)])
        step = 1.0
        accepted = False
        for _ in range(params.damping_steps):
            s_try = s_int + step * ds
            u_try = u_half + step * du
            if np.max(np.abs(s_try)) < 50.0:  # keep densities representable
                r_try = stepper.residual_norm(s_try, u_try)
                if r_try <= (1.0 - 1e-4 * step) * rnorm:
                    s_int, u_half = s_try, u_try
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            raise SolverError(
                f"Newton step rejected after {params.damping_steps} dampings "
                f"(stage {stage}, residual {rnorm:.3e})", diag,
                _to_trajectory(stepper, s_int, u_half))
    raise SolverError(
        f"Newton did not reach tol {params.tol_residual:g} within "
        f"{params.newton_max_iters} iterations (stage {stage})", diag,
        _to_trajectory(stepper, s_int, u_half))


def _u_nodes_from_half(u_half: np.ndarray) -> np.ndarray:
    K = u_half.shape[0]
    out = np.empty((K + 1,) + u_half.shape[1:])
    out[1:K] = 0.5 * (u_half[:-1] + u_half[1:])
    # quadratic extrapolation keeps one-sided time stencils second order
    out[0] = (15.0 * u_half[0] - 10.0 * u_half[1] + 3.0 * u_half[2]) / 8.0
    out[K] = (15.0 * u_half[-1] - 10.0 * u_half[-2] + 3.0 * u_half[-3]) / 8.0
    return out - np.mean(out)


def _to_trajectory(stepper: _Stepper, s_int, u_half) -> Trajectory:
    m = stepper.m_full(s_int)
    grid = stepper.grid
    K = stepper.K
    mbar = 0.5 * (m[:-1] + m[1:])
    w = np.empty((K, grid.dim) + grid.shape)
    for k in range(K):
        du = grad_arrays(u_half[k], grid)
        pnorm = np.sqrt(sum(c * c for c in du))
        coef = mbar[k]**stepper.g2 * stepper.ham.Dp_factor(pnorm)
        for ax in range(grid.dim):
            w[k, ax] = -coef * du[ax]
    u_nodes = _u_nodes_from_half(u_half)
    return trajectory_from_arrays(grid, stepper.problem.T, m, u_nodes, w,
                                  check_mass=False)


def _init_state(problem: PlanningProblem, init: Trajectory | None):
    K = problem.K
    grid = problem.grid
    m0, mT = problem.normalized_endpoints()
    if init is None:
        frac = (np.arange(1, K) / K).reshape((-1,) + (1,) * grid.dim)
        m_int = (1.0 - frac) * m0[None] + frac * mT[None]
        u_half = np.zeros((K,) + grid.shape)
        return np.log(m_int), u_half
    if init.K != K or init.grid != grid:
        raise ValueError("init trajectory must match the problem grid and K")
    m = init.m_values()
    m_int = np.maximum(m[1:-1], 1e-12)
    if init.u is not None:
        u = init.u_values()
        u_half = 0.5 * (u[:-1] + u[1:])
    else:
        u_half = np.zeros((K,) + grid.shape)
    return np.log(m_int), u_half


def solve_planning_newton(problem: PlanningProblem,
                          params: SolverParams | None = None,
                          init: Trajectory | None = None
                          ) -> tuple[Trajectory, SolveDiagnostics]:
    """Solve the planning system (with or without congestion) by damped Newton.

    Endpoint densities must be strictly positive (the unknown is s = ln m).
    When init is None and alpha > 0, the solve is continued in alpha: first
    the alpha = 0 problem is solved variationally, then alpha increases in
    steps of params.alpha_step, warm-starting each Newton solve.  Diagnostics
    record per-iteration residuals across all continuation stages.
    """
    params = params or SolverParams()
    if min(np.min(problem.m0.values), np.min(problem.mT.values)) <= 0.0:
        raise ValueError("Newton backend requires strictly positive endpoint densities")
    alpha = problem.congestion.alpha
    beta = problem.hamiltonian.beta
    diag = SolveDiagnostics(backend="newton")

    warm_started = init is not None
    # a cold start needs a variational warm start when alpha > 0 (continuation
    # base) or beta != 2 (the Hessian of H degenerates at Du = 0, so the
    # Jacobian at u = 0 is singular)
    if init is None and (alpha > 0.0 or beta != 2.0):
        from .models import CongestionParams
        from .variational import solve_planning_variational
        base = PlanningProblem(problem.grid, problem.T, problem.K, problem.m0,
                               problem.mT, problem.hamiltonian, problem.coupling,
                               CongestionParams(0.0))
        vparams = SolverParams(backend="variational",
                               max_iters=params.max_iters,
                               tol_residual=max(params.tol_residual, 1e-4),
                               penalty=params.penalty,
                               over_relax=params.over_relax,
                               eps_m=params.eps_m)
        try:
            init, vdiag = solve_planning_variational(base, vparams)
        except SolverError as err:
            init = err.trajectory
            diag.notes.append("alpha=0 warm start did not fully converge")
        diag.notes.append("continuation warm start from alpha = 0")

    s_int, u_half = _init_state(problem, init)

    if alpha == 0.0 or warm_started:
        stages = [alpha]
    else:
        nstep = max(1, int(np.ceil(alpha / params.alpha_step - 1e-12)))
        stages = list(np.linspace(alpha / nstep, alpha, nstep))
    rnorm = np.inf
    for a in stages:
        stepper = _Stepper(problem, a)
        s_int, u_half, rnorm = _newton_solve(stepper, s_int, u_half, params,
                                             diag, stage=f"alpha={a:g}")
    stepper = _Stepper(problem, alpha)
    cont, hj = stepper.residual(s_int, u_half)
    diag.hj_residual = float(np.max(np.abs(hj)))
    diag.continuity_residual = float(np.max(np.abs(cont)))
    diag.converged = max(diag.hj_residual, diag.continuity_residual) <= params.tol_residual
    traj = _to_trajectory(stepper, s_int, u_half)
    return traj, diag
