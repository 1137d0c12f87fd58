"""Convex variational backend for the planning problem without congestion.

Minimizes the discrete action  sum [ m L(w/m) + G(m) ] h^d dt  over density
slices m_k (integer time nodes, endpoints pinned) and momentum slices
w_{k+1/2} (half nodes) subject to the staggered continuity equation
(m_{k+1} - m_k)/dt + div w_{k+1/2} = 0.  The kinetic term is evaluated at
half nodes through the time average (m_k + m_{k+1})/2, keeping the problem
jointly convex, and the coupling term G(m) at interior integer nodes.

The solver is an augmented-Lagrangian splitting (ADMM): one exactly solved
space-time constrained least-squares step per iteration (trigonometric
diagonalization in space, sine/cosine second-difference eigendecompositions
in time), followed by a pointwise proximal step on the perspective kinetic
density (a closed-form cubic for beta = 2, guarded scalar root otherwise)
and on G.  The continuity constraint therefore holds to round-off at every
iterate, so mass is conserved at machine precision.  The value function u is
recovered from the multiplier of the constrained step and gauge-fixed to
zero space-time mean.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from .core import TorusGrid, Trajectory, trajectory_from_arrays
from .models import CouplingSpec, HamiltonianSpec
from .problem import PlanningProblem, SolveDiagnostics, SolverError, SolverParams


# -- staggered time operators (variable interior parts) ----------------------

def _avg_var(m_int: np.ndarray, K: int) -> np.ndarray:
    """Half-node average of interior slices; data contributions excluded."""
    out = np.zeros((K,) + m_int.shape[1:])
    out[1:] += 0.5 * m_int
    out[:K - 1] += 0.5 * m_int
    return out


def _avg_T(lam: np.ndarray) -> np.ndarray:
    return 0.5 * (lam[:-1] + lam[1:])


def _dtime_var(m_int: np.ndarray, K: int, dt: float) -> np.ndarray:
    out = np.zeros((K,) + m_int.shape[1:])
    out[:K - 1] += m_int / dt
    out[1:] -= m_int / dt
    return out


def _dtime_T(lam: np.ndarray, dt: float) -> np.ndarray:
    return (lam[:-1] - lam[1:]) / dt


class _SpaceTime:
    """Transforms and multipliers for the constrained least-squares step."""

    def __init__(self, grid: TorusGrid, K: int, dt: float):
        self.grid = grid
        self.K = K
        self.dt = dt
        self.axes = tuple(range(1, 1 + grid.dim))
        j = np.arange(1, K)
        self.gamma_dst = (2.0 / dt) * np.sin(np.pi * j / (2.0 * K))
        self.mu_dst = 1.0 + np.cos(np.pi * j / (2.0 * K)) ** 2
        i = np.arange(K)
        gamma_dct = (2.0 / dt) * np.sin(np.pi * i / (2.0 * K))
        mu_dct = 1.0 + np.cos(np.pi * i / (2.0 * K)) ** 2
        ratio = np.zeros(K)
        ratio[1:] = gamma_dct[1:] ** 2 / mu_dct[1:]
        ks = grid.wavenumbers()
        lap = np.zeros(grid.shape)
        for k in ks:
            lap = lap + k**2
        shape_bcast = (K,) + (1,) * grid.dim
        self.sigma = ratio.reshape(shape_bcast) + lap[None, ...]
        # kernel modes (global constant, plus constants-in-time on spatial
        # modes invisible to the Nyquist-zeroed derivatives) are gauged out
        self.kernel = self.sigma == 0.0
        self.sigma_safe = np.where(self.kernel, 1.0, self.sigma)
        self.ik = [1j * k for k in ks]

    def minv(self, x: np.ndarray) -> np.ndarray:
        """(avg^T avg + I)^{-1} on interior slices, via the sine basis."""
        c = sfft.dst(x, type=1, axis=0, norm="ortho")
        c /= self.mu_dst.reshape((-1,) + (1,) * self.grid.dim)
        return sfft.dst(c, type=1, axis=0, norm="ortho")

    def solve_schur(self, r: np.ndarray) -> np.ndarray:
        """Invert the multiplier operator; kernel modes are gauged out."""
        c = sfft.dct(r, type=2, axis=0, norm="ortho")
        spec = sfft.fftn(c, axes=self.axes)
        spec /= self.sigma_safe
        spec[self.kernel] = 0.0
        c = sfft.ifftn(spec, axes=self.axes).real
        return sfft.idct(c, type=2, axis=0, norm="ortho")

    def div(self, w: np.ndarray) -> np.ndarray:
        """Divergence batched over the leading time axis; w: (K, dim, *shape)."""
        out = np.zeros((w.shape[0],) + self.grid.shape)
        for ax in range(self.grid.dim):
            spec = sfft.fftn(w[:, ax], axes=self.axes)
            out += sfft.ifftn(spec * self.ik[ax][None, ...], axes=self.axes).real
        return out

    def grad(self, lam: np.ndarray) -> np.ndarray:
        spec = sfft.fftn(lam, axes=self.axes)
        comps = [sfft.ifftn(spec * self.ik[ax][None, ...], axes=self.axes).real
                 for ax in range(self.grid.dim)]
        return np.stack(comps, axis=1)


def _constrained_step(st: _SpaceTime, t_mu, t_w, t_nu, c_avg, b):
    """min 0.5‖avg m + c_avg - t_mu‖² + 0.5‖m - t_nu‖² + 0.5‖w - t_w‖²
    over the staggered continuity set; returns (m_int, w, lam)."""
    K, dt = st.K, st.dt
    rm = _avg_T(t_mu - c_avg) + t_nu
    q1 = st.minv(rm)
    r = _dtime_var(q1, K, dt) + st.div(t_w) - b
    lam = st.solve_schur(r)
    m_int = q1 - st.minv(_dtime_T(lam, dt))
    w = t_w + st.grad(lam)
    return m_int, w, lam


# -- pointwise proximal maps --------------------------------------------------

def _kinetic_prox(ham: HamiltonianSpec, a: np.ndarray, bvec: np.ndarray,
                  r: float) -> tuple[np.ndarray, np.ndarray]:
    """prox of the perspective kinetic density with weight r.

    Minimizes m L(w/m) + (r/2)[(m-a)^2 + |w-b|^2] over m >= 0 (value 0 at
    (0,0), +inf for m = 0, w != 0).  Reduced to a scalar equation in the
    speed v = |w|/m; beta = 2 gives a depressed cubic solved in closed form,
    other beta a guarded bisection/Newton root.
    """
    bc = ham.beta_conj
    bn = np.sqrt(np.sum(bvec * bvec, axis=1))
    if ham.beta == 2.0:
        # v^3 + (2 r a + 2) v - 2 r |b| = 0, largest real root
        p = 2.0 * r * a + 2.0
        q = -2.0 * r * bn
        v = _cubic_largest_root(p, q)
        for _ in range(2):  # float polish
            f = v**3 + p * v + q
            fp = 3.0 * v**2 + p
            v = np.where(fp > 1e-30, v - f / np.maximum(fp, 1e-30), v)
        v = np.maximum(v, 0.0)
        m = a + v**2 / (2.0 * r)
    else:
        v = _speed_root(a, bn, r, bc, ham.beta)
        m = a + v**bc / (ham.beta * r)
    vacuum = (a <= 0.0) & (np.maximum(-ham.beta * r * a, 0.0) ** ((bc - 1.0) / bc)
                           >= r * bn)
    m = np.where(vacuum, 0.0, np.maximum(m, 0.0))
    speed = np.where(vacuum, 0.0, v)
    scale = np.where(bn > 0.0, m * speed / np.where(bn > 0.0, bn, 1.0), 0.0)
    w = bvec * scale[:, None]
    return m, w


def _cubic_largest_root(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Largest real root of v^3 + p v + q = 0 (vectorized Cardano/trig)."""
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    single = disc >= 0.0
    sq = np.sqrt(np.where(single, disc, 0.0))
    v1 = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
    pm = np.where(single, -1.0, np.minimum(p, -1e-300))
    rad = np.sqrt(-pm / 3.0)
    arg = np.clip(3.0 * q / (2.0 * pm * rad), -1.0, 1.0)
    v3 = 2.0 * rad * np.cos(np.arccos(arg) / 3.0)
    return np.where(single, v1, v3)


def _speed_root(a: np.ndarray, bn: np.ndarray, r: float, bc: float,
                beta: float, iters: int = 60) -> np.ndarray:
    """Root of psi(v) = v a + v^(bc+1)/(beta r) + v^(bc-1)/r - bn on the
    feasible branch, by bracketed bisection with a Newton polish."""
    def psi(v):
        return v * a + v**(bc + 1.0) / (beta * r) + np.where(v > 0, v, 0.0)**(bc - 1.0) / r - bn

    lo = np.where(a < 0.0, (np.maximum(-beta * r * a, 0.0)) ** (1.0 / bc), 0.0)
    hi = lo + np.maximum(bn, 1.0)
    for _ in range(60):
        bad = psi(hi) < 0.0
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        neg = psi(mid) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    v = 0.5 * (lo + hi)
    for _ in range(2):
        f = psi(v)
        h = 1e-7 * np.maximum(v, 1.0)
        fp = (psi(v + h) - f) / h
        step = np.where(np.abs(fp) > 1e-30, f / np.where(np.abs(fp) > 1e-30, fp, 1.0), 0.0)
        v = np.clip(v - step, lo, hi)
    return v


def _coupling_prox(coupling: CouplingSpec, target: np.ndarray, r: float) -> np.ndarray:
    """argmin G(v) + (r/2)(v - target)^2 over v >= 0 for non-decreasing g."""
    if coupling.kind == "zero":
        return np.maximum(target, 0.0)
    if coupling.kind == "power" and coupling.theta == 1.0:
        return np.maximum(r * target / (r + coupling.c), 0.0)
    if coupling.kind == "power" and coupling.theta == 0.0:
        return np.maximum(target - coupling.c / r, 0.0)

    def phi(v):
        return coupling.g(v) + r * (v - target)

    lo = np.zeros_like(target)
    at_zero = phi(lo) >= 0.0
    hi = np.maximum(target, 1.0)
    for _ in range(60):
        bad = (phi(hi) < 0.0) & ~at_zero
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        neg = phi(mid) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    out = 0.5 * (lo + hi)
    return np.where(at_zero, 0.0, out)


# -- energy and optimality residual -------------------------------------------

def _energy(ham, coupling, grid, dt, m_int, w, m0, mT, eps_m) -> float:
    K = w.shape[0]
    full = np.concatenate([m0[None], m_int, mT[None]], axis=0)
    mbar = 0.5 * (full[:-1] + full[1:])
    wn = np.sqrt(np.sum(w * w, axis=1))
    dens = np.where(mbar > eps_m,
                    mbar * ham.L_of_norm(wn / np.maximum(mbar, eps_m)), 0.0)
    hd = grid.h**grid.dim
    kin = float(np.sum(dens)) * hd * dt
    weights = np.ones(K + 1)
    weights[0] = weights[-1] = 0.5
    pot = sum(wk * float(np.sum(coupling.G(full[k]))) * hd * dt
              for k, wk in enumerate(weights))
    return kin + pot


def _hj_kkt_residual(st: _SpaceTime, ham, coupling, u_half, m_int, mu_kin,
                     eps_m) -> float:
    """Max-norm optimality residual -du/dt + avg H(Du) - g(m) at interior
    nodes, restricted to cells whose adjacent kinetic densities exceed eps_m."""
    du = st.grad(u_half)
    pn = np.sqrt(np.sum(du * du, axis=1))
    hval = ham.H_of_norm(pn)
    ut = (u_half[1:] - u_half[:-1]) / st.dt
    avg_h = 0.5 * (hval[:-1] + hval[1:])
    res = -ut + avg_h - coupling.g(m_int)
    mask = (mu_kin[:-1] > eps_m) & (mu_kin[1:] > eps_m)
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(res[mask])))


def _u_nodes_from_half(u_half: np.ndarray) -> np.ndarray:
    K = u_half.shape[0]
    out = np.empty((K + 1,) + u_half.shape[1:])
    out[1:K] = 0.5 * (u_half[:-1] + u_half[1:])
    # quadratic extrapolation keeps one-sided time stencils second order
    out[0] = (15.0 * u_half[0] - 10.0 * u_half[1] + 3.0 * u_half[2]) / 8.0
    out[K] = (15.0 * u_half[-1] - 10.0 * u_half[-2] + 3.0 * u_half[-3]) / 8.0
    return out - np.mean(out)


def solve_planning_variational(problem: PlanningProblem,
                               params: SolverParams | None = None
                               ) -> tuple[Trajectory, SolveDiagnostics]:
    """Solve the planning problem by the augmented-Lagrangian splitting.

    Requires congestion.alpha = 0 (the congestion system is not an optimality
    system of this convex energy; use the Newton backend).  Returns the
    feasible final iterate as a Trajectory (m, u, w) and diagnostics whose
    energy history records the best feasible action seen so far.  Raises
    SolverError, carrying diagnostics and the last iterate, when the
    optimality residual has not reached tol_residual within max_iters.
    """
    params = params or SolverParams()
    if problem.congestion.alpha > 0:
        raise ValueError("variational backend requires alpha = 0; "
                         "use solve_planning_newton for congestion problems")
    grid, K, dt = problem.grid, problem.K, problem.dt
    ham, coupling = problem.hamiltonian, problem.coupling
    r = params.penalty
    rho = params.over_relax
    eps_m = params.eps_m
    m0, mT = problem.normalized_endpoints()

    st = _SpaceTime(grid, K, dt)
    c_avg = np.zeros((K,) + grid.shape)
    c_avg[0] = 0.5 * m0
    c_avg[-1] = 0.5 * mT
    b = np.zeros((K,) + grid.shape)
    b[0] = m0 / dt
    b[-1] = -mT / dt

    # interior density init: linear interpolation between the endpoints
    frac = (np.arange(1, K) / K).reshape((-1,) + (1,) * grid.dim)
    m_int = (1.0 - frac) * m0[None] + frac * mT[None]
    w = np.zeros((K, grid.dim) + grid.shape)
    mu = _avg_var(m_int, K) + c_avg
    om = np.zeros_like(w)
    nu = m_int.copy()
    y_mu = np.zeros_like(mu)
    y_om = np.zeros_like(om)
    y_nu = np.zeros_like(nu)

    diag = SolveDiagnostics(backend="variational")
    best_energy = np.inf
    lam = np.zeros((K,) + grid.shape)
    it = 0
    converged = False
    while it < params.max_iters:
        it += 1
        m_int, w, lam = _constrained_step(
            st, mu - y_mu / r, om - y_om / r, nu - y_nu / r, c_avg, b)
        s_mu = _avg_var(m_int, K) + c_avg
        s_om = w
        s_nu = m_int
        if rho != 1.0:
            s_mu = rho * s_mu + (1.0 - rho) * mu
            s_om = rho * s_om + (1.0 - rho) * om
            s_nu = rho * s_nu + (1.0 - rho) * nu
        mu, om = _kinetic_prox(ham, s_mu + y_mu / r, s_om + y_om / r, r)
        nu = _coupling_prox(coupling, s_nu + y_nu / r, r)
        y_mu += r * (s_mu - mu)
        y_om += r * (s_om - om)
        y_nu += r * (s_nu - nu)

        if it % params.check_every == 0 or it == params.max_iters:
            u_half = -r * lam
            hj = _hj_kkt_residual(st, ham, coupling, u_half, m_int, mu, eps_m)
            primal = max(float(np.max(np.abs(_avg_var(m_int, K) + c_avg - mu))),
                         float(np.max(np.abs(w - om))),
                         float(np.max(np.abs(m_int - nu))))
            cont = float(np.max(np.abs(_dtime_var(m_int, K, dt) + st.div(w) - b)))
            energy = _energy(ham, coupling, grid, dt, m_int, w, m0, mT, eps_m)
            best_energy = min(best_energy, energy)
            diag.energy_history.append(best_energy)
            diag.residual_history.append(
                {"iteration": it, "hj": hj, "continuity": cont, "primal": primal})
            if hj <= params.tol_residual and primal <= params.tol_residual:
                converged = True
                break

    u_half = -r * lam
    diag.iterations = it
    diag.converged = converged
    diag.hj_residual = diag.residual_history[-1]["hj"] if diag.residual_history else np.inf
    diag.continuity_residual = (diag.residual_history[-1]["continuity"]
                                if diag.residual_history else np.inf)
    diag.energy = _energy(ham, coupling, grid, dt, m_int, w, m0, mT, eps_m)

    m_full = np.concatenate([m0[None], m_int, mT[None]], axis=0)
    m_full = np.maximum(m_full, 0.0)
    hd = grid.h**grid.dim
    target = float(np.sum(m0)) * hd
    for k in range(1, K):
        mass = float(np.sum(m_full[k])) * hd
        if mass > 0:
            m_full[k] *= target / mass
    u_nodes = _u_nodes_from_half(u_half)
    traj = trajectory_from_arrays(grid, problem.T, m_full, u_nodes, w)
    if not converged:
        raise SolverError(
            f"variational solver did not reach tol {params.tol_residual:g} "
            f"within {params.max_iters} iterations", diag, traj)
    return traj, diag
