"""Exact and independently computable reference solutions.

Four families: rigid translations of compactly supported bumps (the optimal
transport geodesic when a common vacuum arc exists), the one-dimensional
quantile (inverse-CDF) displacement interpolant, the uniform stationary
solution, and a manufactured traveling wave that solves the congestion system
identically with an implicitly defined coupling g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import fft as sfft
from scipy.integrate import quad
from scipy.optimize import brentq

from .core import ScalarField, TorusGrid, Trajectory, integrate, trajectory_from_arrays
from .models import CouplingSpec
from .problem import PlanningProblem


# -- bumps and their rigid translations ---------------------------------------

@dataclass(frozen=True)
class BumpSpec:
    """Raised-cosine density bump of mass 1 on the circle.

    center in [0,1); support length in (0, 0.5); optional floor delta >= 0
    adds a uniform background, renormalized so the mass stays 1 (and the
    density strictly positive when delta > 0).
    """

    center: float
    length: float
    floor: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.length < 0.5):
            raise ValueError("support length must lie in (0, 0.5)")
        if self.floor < 0.0:
            raise ValueError("floor must be >= 0")

    def density(self, x: np.ndarray, shift: float = 0.0) -> np.ndarray:
        s = np.mod(x - self.center - shift + 0.5, 1.0) - 0.5
        inside = np.abs(s) <= self.length / 2.0
        bump = np.where(inside, (1.0 + np.cos(2.0 * np.pi * s / self.length)) / self.length, 0.0)
        return (bump + self.floor) / (1.0 + self.floor)

    def field(self, grid: TorusGrid, shift: float = 0.0) -> ScalarField:
        """Grid samples normalized to exactly unit discrete mass."""
        if grid.dim != 1:
            raise ValueError("bump densities are one-dimensional")
        (x,) = grid.coordinates()
        vals = self.density(x, shift)
        return ScalarField(grid, vals / np.mean(vals))


def translation_solution(bump: BumpSpec, shift: float, T: float,
                         grid: TorusGrid, K: int) -> Trajectory:
    """Rigid-shift trajectory m(x,t) = m0(x - shift t/T), momentum (shift/T) m.

    Optimal for the pure transport problem (g = 0, quadratic Hamiltonian)
    whenever both supports leave a common vacuum arc, i.e. length + |shift|
    < 1: the circle problem then reduces to the line, where the monotone map
    between translates is the translation itself.  No value slices are
    emitted: on the torus the transport potential exists only on the moving
    support.

    Each slice is normalized to exactly unit discrete mass, and the momentum
    is (shift/T) times the average of the adjacent slices, so the discrete
    kinetic action equals shift^2/(2T) to round-off.
    """
    if grid.dim != 1:
        raise ValueError("translation oracle is one-dimensional")
    if bump.length + abs(shift) >= 1.0:
        raise ValueError("no common vacuum arc: need length + |shift| < 1")
    if K < 2:
        raise ValueError("need K >= 2")
    (x,) = grid.coordinates()
    dt = T / K
    m = np.stack([bump.density(x, shift * (k * dt) / T) for k in range(K + 1)])
    m /= np.mean(m, axis=1, keepdims=True)
    c = shift / T
    w = (c * 0.5 * (m[:-1] + m[1:]))[:, None, :]
    return trajectory_from_arrays(grid, T, m, None, w)


# -- quantile displacement interpolant ----------------------------------------

def _find_cut(v0: np.ndarray, vT: np.ndarray, h: float) -> float:
    """Midpoint of the longest common zero run of the two densities."""
    both = (v0 <= 0.0) & (vT <= 0.0)
    n = both.size
    if not np.any(both):
        raise ValueError("no common zero-mass cut found")
    ext = np.concatenate([both, both])  # circular runs
    best_len, best_start = 0, -1
    run, start = 0, 0
    for i in range(2 * n):
        if ext[i]:
            if run == 0:
                start = i
            run += 1
            if run > best_len and start < n:
                best_len, best_start = run, start
        else:
            run = 0
    best_len = min(best_len, n)
    return ((best_start + best_len / 2.0) % n) * h


def quantile_interpolant_1d(m0: ScalarField, mT: ScalarField,
                            times: np.ndarray, cut: float | None = None,
                            n_quantiles: int = 100_000) -> Trajectory:
    """Displacement interpolant between 1-d densities sharing a vacuum cut.

    The circle is cut open at a point of zero mass common to both densities;
    on the resulting interval the monotone (inverse-CDF) map is optimal, and
    the density at time t is the law of (1-t) F0^{-1}(s) + t FT^{-1}(s) for s
    uniform.  Computed from n_quantiles deterministic quantile samples
    deposited on the grid with a raised-cosine kernel one cell wide, then
    normalized to exact unit mass per slice.  Densities only.
    """
    grid = m0.grid
    if grid.dim != 1 or mT.grid != grid:
        raise ValueError("quantile interpolant needs two 1-d fields on one grid")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 3:
        raise ValueError("need at least 3 time samples")
    T = float(times[-1])
    if not np.allclose(np.diff(times), times[1] - times[0]):
        raise ValueError("times must be uniform")
    h = grid.h
    v0 = m0.values / integrate(m0)
    vT = mT.values / integrate(mT)
    if cut is None:
        cut = _find_cut(v0, vT, h)
    else:
        (x,) = grid.coordinates()
        near = np.abs(np.mod(x - cut + 0.5, 1.0) - 0.5) <= 1.5 * h
        if np.any(v0[near] > 0) or np.any(vT[near] > 0):
            raise ValueError("densities do not vanish near the requested cut")

    (x,) = grid.coordinates()
    s_coord = np.mod(x - cut, 1.0)
    order = np.argsort(s_coord)
    qs = (np.arange(n_quantiles) + 0.5) / n_quantiles

    def inv_cdf(values: np.ndarray) -> np.ndarray:
        # trapezoid CDF on the cut-open interval; the cut neighborhood holds
        # no mass, so dropping the wrap interval is exact to round-off
        dens = values[order]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[:-1] + dens[1:]) * h)])
        cum /= cum[-1]
        cum = np.maximum.accumulate(cum)  # guard against flat round-off dips
        return np.interp(qs, cum, s_coord[order])

    q0 = inv_cdf(v0)
    qT = inv_cdf(vT)

    slices = []
    for t in times:
        lam = t / T
        pos = np.mod((1.0 - lam) * q0 + lam * qT + cut, 1.0)
        slices.append(_deposit(pos, grid))
    return trajectory_from_arrays(grid, T, np.stack(slices))


def _deposit(pos: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Deposit unit total mass with a raised-cosine kernel of width one cell."""
    n, h = grid.n, grid.h
    rel = pos / h
    base = np.floor(rel).astype(np.int64)
    out = np.zeros(n)
    for off in (-1, 0, 1, 2):
        idx = np.mod(base + off, n)
        r = np.abs(rel - (base + off))
        wgt = np.where(r < 1.0, 0.5 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0))), 0.0)
        np.add.at(out, idx, wgt)
    total = np.sum(out) * h
    return out / total


# -- uniform stationary solution ----------------------------------------------

def uniform_solution(coupling: CouplingSpec, T: float, grid: TorusGrid,
                     K: int) -> Trajectory:
    """m = 1, w = 0, u_k = -(t_k - T/2) g(1): exact for every Hamiltonian with
    H(0) = 0 and every congestion exponent, with zero space-time mean u."""
    if K < 2:
        raise ValueError("need K >= 2")
    g1 = float(coupling.g(np.asarray([1.0]))[0])
    dt = T / K
    shape = grid.shape
    m = np.ones((K + 1,) + shape)
    u = np.stack([np.full(shape, -(k * dt - T / 2.0) * g1) for k in range(K + 1)])
    w = np.zeros((K, grid.dim) + shape)
    return trajectory_from_arrays(grid, T, m, u, w)


# -- manufactured traveling wave for the congestion system --------------------

@dataclass
class TravelingWaveSpec:
    """Strictly positive smooth 1-d profile advected at speed c.

    profile(x) must be periodic with mass 1 and min > 0; speed c != 0;
    congestion exponent alpha >= 0 and Hamiltonian exponent beta > 1.  The
    flux constant is solved so the value function is periodic.
    """

    profile: Callable[[np.ndarray], np.ndarray]
    speed: float
    alpha: float = 0.0
    beta: float = 2.0

    def __post_init__(self):
        if self.speed == 0.0:
            raise ValueError("speed must be nonzero")
        if self.beta <= 1.0 or self.alpha < 0.0:
            raise ValueError("need beta > 1 and alpha >= 0")


def cosine_profile(amplitude: float) -> Callable[[np.ndarray], np.ndarray]:
    """1 + amplitude*cos(2 pi x); strictly positive for |amplitude| < 1."""
    if not abs(amplitude) < 1.0:
        raise ValueError("|amplitude| must be < 1")

    def f(x):
        return 1.0 + amplitude * np.cos(2.0 * np.pi * np.asarray(x, dtype=float))

    return f


class TravelingWaveResult:
    def __init__(self, trajectory, coupling, k0, monotone_margin, residuals,
                 monotone_direction: str):
        self.trajectory = trajectory
        self.coupling = coupling
        self.k0 = k0
        self.monotone_margin = monotone_margin
        self.residuals = residuals
        self.monotone_direction = monotone_direction


def _wave_slope(z, c, k0, alpha, beta):
    """Slope phi(z) of the value profile as a function of the density z:
    solves -z^(1+alpha(1-beta)) phi |phi|^(beta-2) = c z + k0."""
    z = np.asarray(z, dtype=float)
    rhs = -(c * z + k0) / z**(1.0 + alpha * (1.0 - beta))
    return np.sign(rhs) * np.abs(rhs)**(1.0 / (beta - 1.0))


def traveling_wave_congestion(spec: TravelingWaveSpec, grid: TorusGrid, K: int,
                              T: float, table_size: int = 512
                              ) -> TravelingWaveResult:
    """Build m(x,t) = f(x-ct), u(x,t) = psi(x-ct) solving the congestion system.

    The slope psi' is determined pointwise by the density equation with flux
    constant k0, and k0 is found by bisection so that psi' has zero mean (u
    periodic).  The coupling that makes the value equation hold is then read
    off on [min f, max f] and exported as a dense table; the pair is rejected
    when the sampled coupling is not monotone (margin below -1e-10 in both
    orientations).  The detected orientation is reported: for beta = 2 the
    implied coupling is g(z) = (k0^2 - c^2 z^2) z^(alpha-2) / 2, which is
    strictly decreasing whenever the zero-mean condition holds, so these
    waves certify the equality case of the convexity reports (rigid motion)
    while sitting outside the crowd-aversion hypotheses.
    """
    if grid.dim != 1:
        raise ValueError("traveling waves are one-dimensional")
    c, alpha, beta = spec.speed, spec.alpha, spec.beta
    if c < 0:
        raise ValueError("use a positive speed (mirror the profile instead)")
    (x,) = grid.coordinates()
    f_grid = spec.profile(x)
    if np.min(f_grid) <= 0.0:
        raise ValueError("profile must be strictly positive")
    mass = float(np.mean(f_grid))
    if abs(mass - 1.0) > 1e-8:
        raise ValueError("profile must have unit mass")
    fmin, fmax = float(np.min(f_grid)), float(np.max(f_grid))

    if fmax - fmin < 1e-14:  # constant profile: reduces to the uniform solution
        k0 = -c * mass
        coupling = CouplingSpec.zero()
        traj = uniform_solution(coupling, T, grid, K)
        return TravelingWaveResult(traj, coupling, k0, 0.0, (0.0, 0.0),
                                   "constant")

    def mean_slope(k0: float) -> float:
        val, _ = quad(lambda s: float(_wave_slope(spec.profile(np.asarray([s])),
                                                  c, k0, alpha, beta)[0]),
                      0.0, 1.0, epsabs=1e-13, limit=300)
        return val

    lo, hi = -c * fmax, -c * fmin
    # mean_slope is strictly decreasing in k0: positive at lo, negative at hi
    flo, fhi = mean_slope(lo), mean_slope(hi)
    if not (flo > 0.0 > fhi):
        raise ValueError("flux-constant bisection found no sign change")
    k0 = brentq(mean_slope, lo, hi, xtol=1e-15, maxiter=200)
    psi_slope = _wave_slope(f_grid, c, k0, alpha, beta)

    # spectral antiderivative of psi' (its residual mean is removed first)
    slope0 = psi_slope - np.mean(psi_slope)
    spec_hat = sfft.fft(slope0)
    kk = 2.0 * np.pi * sfft.fftfreq(grid.n, d=grid.h)
    kk[0] = 1.0
    psi_hat = spec_hat / (1j * kk)
    psi_hat[0] = 0.0
    psi = sfft.ifft(psi_hat).real

    dt = T / K
    f_hat = sfft.fft(f_grid)
    kk2 = 2.0 * np.pi * sfft.fftfreq(grid.n, d=grid.h)

    def shift(values_hat: np.ndarray, delta: float) -> np.ndarray:
        return sfft.ifft(values_hat * np.exp(-1j * kk2 * delta)).real

    psi_hat_full = sfft.fft(psi)
    m = np.stack([shift(f_hat, c * k * dt) for k in range(K + 1)])
    m = np.maximum(m, 1e-300)
    u = np.stack([shift(psi_hat_full, c * k * dt) for k in range(K + 1)])
    u -= np.mean(u)
    # momentum at half nodes: w = -m^(1+alpha(1-beta)) psi' |psi'|^(beta-2)
    #                           = c f + k0, advected rigidly
    flux_hat = sfft.fft(c * f_grid + k0)
    w = np.stack([shift(flux_hat, c * (k + 0.5) * dt)[None, :] for k in range(K)])

    zt = np.linspace(fmin, fmax, table_size)
    phi = _wave_slope(zt, c, k0, alpha, beta)
    g_t = c * phi + zt**(alpha * (1.0 - beta)) * np.abs(phi)**beta / beta
    diffs = np.diff(g_t)
    margin_inc = float(np.min(diffs))
    margin_dec = float(np.min(-diffs))
    if margin_inc >= -1e-10:
        direction, margin = "non-decreasing", margin_inc
        g_t = np.maximum.accumulate(g_t)  # absorb round-off wiggles only
        coupling = CouplingSpec.table(zt, g_t)
    elif margin_dec >= -1e-10:
        direction, margin = "non-increasing", margin_dec
        g_t = np.minimum.accumulate(g_t)
        coupling = CouplingSpec.table(zt, g_t, check_monotone=False)
    else:
        raise ValueError(
            f"implied coupling is not monotone (margins {margin_inc:.3e} "
            f"increasing, {margin_dec:.3e} decreasing)")

    traj = trajectory_from_arrays(grid, T, m, u, w)
    from .models import CongestionParams, HamiltonianSpec
    from .problem import residual_norms
    prob = PlanningProblem(grid, T, K, traj.m[0], traj.m[-1],
                           HamiltonianSpec(beta), coupling, CongestionParams(alpha))
    residuals = residual_norms(traj, prob)
    return TravelingWaveResult(traj, coupling, k0, margin, residuals, direction)


# -- seeded smooth test densities ---------------------------------------------

def random_smooth_density(grid: TorusGrid, seed: int, amplitude: float = 0.15,
                          max_mode: int = 3) -> ScalarField:
    """Strictly positive band-limited density of exact unit mass (test data)."""
    rng = np.random.default_rng(seed)
    vals = np.ones(grid.shape)
    coords = grid.coordinates()
    for mode in range(1, max_mode + 1):
        decay = amplitude / mode
        for ax in range(grid.dim):
            a, b = rng.normal(size=2) * decay
            vals = vals + a * np.cos(2 * np.pi * mode * coords[ax]) \
                        + b * np.sin(2 * np.pi * mode * coords[ax])
    if grid.dim == 2:
        a, b = rng.normal(size=2) * amplitude * 0.5
        vals = vals + a * np.cos(2 * np.pi * (coords[0] + coords[1])) \
                    + b * np.cos(2 * np.pi * (coords[0] - coords[1]))
    vals = np.maximum(vals, 0.05)
    vals /= np.mean(vals)
    return ScalarField(grid, vals)
