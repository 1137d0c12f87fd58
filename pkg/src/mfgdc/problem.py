"""Planning-problem data model, solver diagnostics, and PDE residual norms.

Sign conventions throughout the package: the value function u solves
    -u_t + m^(alpha(1-beta)) |Du|^beta / beta = g(m)
and the density satisfies
    m_t - div(m^(1+alpha(1-beta)) Du |Du|^(beta-2)) = 0,
so agents move with velocity -D_pH(Du) (scaled by the congestion factor) and
the momentum w = m * velocity obeys m_t + div w = 0.  u is determined only up
to an additive constant, fixed by zero space-time mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ScalarField, TorusGrid, Trajectory, grad_arrays, div_arrays, integrate
from .models import CouplingSpec, CongestionParams, HamiltonianSpec

ENDPOINT_MASS_TOL = 1e-10


def _filter_untransportable(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Zero the nonconstant spatial modes on which every spectral first
    derivative vanishes (the Nyquist lines for even n); the mean is kept."""
    from scipy import fft as sfft
    lap = np.zeros(grid.shape)
    for k in grid.wavenumbers():
        lap = lap + k**2
    mask = lap == 0.0
    mask[(0,) * grid.dim] = False
    if not np.any(mask):
        return values
    spec = sfft.fftn(values)
    spec[mask] = 0.0
    return sfft.ifftn(spec).real


@dataclass(frozen=True)
class PlanningProblem:
    """Endpoint densities plus Hamiltonian/coupling/congestion data."""

    grid: TorusGrid
    T: float
    K: int
    m0: ScalarField
    mT: ScalarField
    hamiltonian: HamiltonianSpec
    coupling: CouplingSpec
    congestion: CongestionParams = field(default_factory=CongestionParams)

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.K < 2:
            raise ValueError("need at least K = 2 time steps")
        for name, m in (("m0", self.m0), ("mT", self.mT)):
            if m.grid != self.grid:
                raise ValueError(f"{name} lives on a different grid")
            if np.min(m.values) < 0:
                raise ValueError(f"{name} must be nonnegative")
            if abs(integrate(m) - 1.0) > ENDPOINT_MASS_TOL:
                raise ValueError(f"{name} must have unit mass (within {ENDPOINT_MASS_TOL})")
        if self.congestion.alpha > 0:
            if min(np.min(self.m0.values), np.min(self.mT.values)) <= 0:
                raise ValueError("congestion (alpha > 0) requires strictly positive endpoints")

    @property
    def dt(self) -> float:
        return self.T / self.K

    def normalized_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoint arrays prepared for the solvers: spatial modes invisible
        to the Nyquist-zeroed spectral derivatives are removed (the discrete
        transport operators cannot move them between differing endpoint
        values), then the values are clipped at zero and rescaled to exactly
        unit mass."""
        out = []
        for f in (self.m0, self.mT):
            v = _filter_untransportable(f.values, self.grid)
            v = np.maximum(v, 0.0)
            out.append(v / np.mean(v))
        return out[0], out[1]


@dataclass
class SolverParams:
    """Knobs shared by both backends.

    penalty and over_relax drive the variational splitting; alpha_step and
    damping_steps drive the Newton continuation.  eps_m is the positivity
    floor guarding velocity reconstruction and the support restriction of the
    variational optimality residual.
    """

    backend: str = "variational"
    max_iters: int = 20000
    tol_residual: float = 1e-5
    penalty: float = 1.0
    over_relax: float = 1.8
    check_every: int = 25
    alpha_step: float = 0.1
    damping_steps: int = 14
    newton_max_iters: int = 40
    eps_m: float = 1e-12

    def __post_init__(self):
        if self.backend not in ("variational", "newton"):
            raise ValueError("backend must be 'variational' or 'newton'")
        if self.tol_residual <= 0:
            raise ValueError("tol_residual must be positive")
        if self.alpha_step <= 0:
            raise ValueError("alpha_step must be positive")


@dataclass
class SolveDiagnostics:
    backend: str
    iterations: int = 0
    converged: bool = False
    energy: float | None = None
    energy_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    hj_residual: float = float("inf")
    continuity_residual: float = float("inf")
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "iterations": self.iterations,
            "converged": self.converged,
            "energy": self.energy,
            "energy_history": list(self.energy_history),
            "residuals": list(self.residual_history),
            "hj_residual": self.hj_residual,
            "continuity_residual": self.continuity_residual,
            "notes": list(self.notes),
        }


class SolverError(RuntimeError):
    """Solver failure; carries the diagnostics and, when available, the last iterate."""

    def __init__(self, message: str, diagnostics: SolveDiagnostics,
                 trajectory: Trajectory | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.trajectory = trajectory


# -- residual evaluation -----------------------------------------------------

def _dt_centered(a: np.ndarray, dt: float) -> np.ndarray:
    """Time derivative along axis 0: centered interior, one-sided second-order
    three-point stencils at both ends."""
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * dt)
    out[-1] = (3.0 * a[-1] - 4.0 * a[-2] + a[-3]) / (2.0 * dt)
    return out


def residual_norms(traj: Trajectory, problem: PlanningProblem,
                   eps_m: float = 0.0) -> tuple[float, float]:
    """Max-norm residuals of the value equation and the density equation.

    The value-equation residual -u_t + m^(alpha(1-beta)) H(Du) - g(m) is
    evaluated at every time node (centered differences inside, one-sided
    second-order at the ends), restricted to {m > eps_m} when eps_m > 0 (use
    the solver floor for variational outputs whose u is a constrained
    multiplier on the support only).  The density-equation residual is
    evaluated at interior nodes, where the trajectory itself carries the
    evolution; the endpoint slices are data.
    """
    if traj.u is None:
        raise ValueError("residual_norms requires value slices u")
    ham = problem.hamiltonian
    alpha = problem.congestion.alpha
    beta = ham.beta
    g1 = alpha * (1.0 - beta)       # exponent in the value equation
    g2 = 1.0 + alpha * (1.0 - beta)  # exponent in the flux
    grid = traj.grid
    m = traj.m_values()
    u = traj.u_values()
    dt = traj.dt

    ut = _dt_centered(u, dt)
    hj_max = 0.0
    cont_max = 0.0
    for k in range(traj.K + 1):
        du = grad_arrays(u[k], grid)
        pnorm = np.sqrt(sum(c * c for c in du))
        mk = m[k]
        cong = mk**g1 if alpha > 0 else np.ones_like(mk)
        hj = -ut[k] + cong * ham.H_of_norm(pnorm) - problem.coupling.g(mk)
        if eps_m > 0.0:
            mask = mk > eps_m
            if np.any(mask):
                hj_max = max(hj_max, float(np.max(np.abs(hj[mask]))))
        else:
            hj_max = max(hj_max, float(np.max(np.abs(hj))))
        if 1 <= k <= traj.K - 1:
            mt = (m[k + 1] - m[k - 1]) / (2.0 * dt)
            s = ham.Dp_factor(pnorm)
            flux = [mk**g2 * s * c for c in du]
            cont = mt - div_arrays(flux, grid)
            cont_max = max(cont_max, float(np.max(np.abs(cont))))
    return hj_max, cont_max


def kinetic_action(traj: Trajectory, problem: PlanningProblem,
                   eps_m: float = 1e-12) -> float:
    """Discrete action sum m L(w/m) h^d dt over half nodes (midpoint in time)."""
    if traj.w is None:
        raise ValueError("kinetic_action requires momentum slices")
    ham = problem.hamiltonian
    m = traj.m_values()
    w = traj.w_values()
    hd = traj.grid.h**traj.grid.dim
    total = 0.0
    for k in range(traj.K):
        mbar = 0.5 * (m[k] + m[k + 1])
        wn = np.sqrt(sum(w[k, ax]**2 for ax in range(traj.grid.dim)))
        dens = np.where(mbar > eps_m,
                        ham.L_of_norm(np.where(mbar > eps_m, wn / np.maximum(mbar, eps_m), 0.0))
                        * mbar,
                        0.0)
        total += float(np.sum(dens)) * hd * traj.dt
    return total


def total_action(traj: Trajectory, problem: PlanningProblem,
                 eps_m: float = 1e-12) -> float:
    """Kinetic action plus the trapezoidal coupling term sum G(m) h^d dt."""
    kin = kinetic_action(traj, problem, eps_m)
    m = traj.m_values()
    hd = traj.grid.h**traj.grid.dim
    weights = np.ones(traj.K + 1)
    weights[0] = weights[-1] = 0.5
    pot = sum(wk * float(np.sum(problem.coupling.G(m[k]))) * hd * traj.dt
              for k, wk in enumerate(weights))
    return kin + pot
