"""Periodic-torus grids, fields, trajectories and spectral calculus.

All fields live on the unit torus [0,1)^d (d = 1 or 2) sampled on a uniform
grid with a power-of-two number of points per axis.  Spatial derivatives are
trigonometric-interpolation (FFT) derivatives, exact on resolved trigonometric
polynomials; the Nyquist mode of a first derivative is zeroed so that the
differentiation matrix is exactly antisymmetric and divergence sums to zero.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft


def _workers() -> int | None:
    """Worker count for batched transforms, capped by MFGDC_THREADS."""
    v = os.environ.get("MFGDC_THREADS")
    if not v:
        return None
    try:
        return max(1, int(v))
    except ValueError:
        return None


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the unit torus: n points per axis, spacing h = 1/n."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or not _is_pow2(self.n):
            raise ValueError("n must be a power of two >= 8")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays x_j = j*h, broadcastable to the grid shape."""
        x = np.arange(self.n) * self.h
        if self.dim == 1:
            return (x,)
        return (x[:, None] + np.zeros((1, self.n)), x[None, :] + np.zeros((self.n, 1)))

    def wavenumbers(self) -> list[np.ndarray]:
        """Angular first-derivative multipliers per axis (Nyquist zeroed)."""
        k = 2.0 * np.pi * sfft.fftfreq(self.n, d=self.h)
        k = k.copy()
        k[self.n // 2] = 0.0  # Nyquist
        if self.dim == 1:
            return [k]
        return [k[:, None], k[None, :]]


def make_grid(dim: int, n: int) -> TorusGrid:
    """Build a torus grid; n must be a power of two >= 8."""
    return TorusGrid(dim, n)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScalarField:
    """Real scalar samples on a TorusGrid (values stored in grid shape)."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape == (self.grid.size,):
            v = v.reshape(self.grid.shape)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.grid, fn(self.values))


@dataclass(frozen=True)
class VectorField:
    """dim scalar components on a common TorusGrid."""

    grid: TorusGrid
    components: tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, ScalarField) else ScalarField(self.grid, c)
            for c in self.components
        )
        if len(comps) != self.grid.dim:
            raise ValueError("one component per grid dimension required")
        for c in comps:
            if c.grid != self.grid:
                raise ValueError("components must share the grid")
        object.__setattr__(self, "components", comps)

    def arrays(self) -> list[np.ndarray]:
        return [c.values for c in self.components]


def constant_field(grid: TorusGrid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(value)))


def field_from_function(grid: TorusGrid, fn) -> ScalarField:
    return ScalarField(grid, fn(*grid.coordinates()))


# -- spectral calculus -------------------------------------------------------

def _deriv(values: np.ndarray, grid: TorusGrid, axis: int) -> np.ndarray:
    spec = sfft.fftn(values, workers=_workers())
    spec *= 1j * grid.wavenumbers()[axis]
    return sfft.ifftn(spec, workers=_workers()).real


def gradient(f: ScalarField) -> VectorField:
    """Spectral gradient; exact for resolved trigonometric polynomials."""
    g = f.grid
    return VectorField(g, tuple(ScalarField(g, _deriv(f.values, g, ax)) for ax in range(g.dim)))


def divergence(v: VectorField) -> ScalarField:
    """Spectral divergence; its grid mean vanishes to round-off."""
    g = v.grid
    out = np.zeros(g.shape)
    for ax, c in enumerate(v.components):
        out += _deriv(c.values, g, ax)
    return ScalarField(g, out)


def laplacian(f: ScalarField) -> ScalarField:
    """divergence(gradient(f)), computed in one transform pass."""
    g = f.grid
    spec = sfft.fftn(f.values, workers=_workers())
    mult = np.zeros(g.shape)
    for k in g.wavenumbers():
        mult = mult - k**2
    return ScalarField(g, sfft.ifftn(spec * mult, workers=_workers()).real)


def integrate(f: ScalarField) -> float:
    """Integral over the unit torus: grid mean (volume is 1)."""
    return float(np.mean(f.values))


def grad_arrays(values: np.ndarray, grid: TorusGrid) -> list[np.ndarray]:
    """Gradient components as plain arrays (helper for hot loops)."""
    return [_deriv(values, grid, ax) for ax in range(grid.dim)]


def div_arrays(comps: list[np.ndarray], grid: TorusGrid) -> np.ndarray:
    out = np.zeros(grid.shape)
    for ax, c in enumerate(comps):
        out += _deriv(c, grid, ax)
    return out


# -- trajectories ------------------------------------------------------------

MASS_TOL = 1e-8


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed density path with optional value and momentum slices.

    Densities m_k sit at the K+1 uniform time nodes t_k = k*T/K; the optional
    value slices u_k share those nodes.  Momentum slices, when present, sit at
    the K half-nodes t_{k+1/2} (one per time interval); consumers interpolate
    them linearly to nodes when needed.
    """

    grid: TorusGrid
    T: float
    m: tuple[ScalarField, ...]
    u: tuple[ScalarField, ...] | None = None
    w: tuple[VectorField, ...] | None = None
    check_mass: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        m = tuple(self.m)
        if len(m) < 3:
            raise ValueError("need K >= 2 time steps (at least 3 density slices)")
        for s in m:
            if s.grid != self.grid:
                raise ValueError("density slices must share the grid")
            if np.min(s.values) < 0.0:
                raise ValueError("densities must be nonnegative")
        if self.check_mass:
            masses = np.array([integrate(s) for s in m])
            if np.max(np.abs(masses - masses[0])) > MASS_TOL:
                raise ValueError("mass is not conserved along the trajectory")
        object.__setattr__(self, "m", m)
        if self.u is not None:
            u = tuple(self.u)
            if len(u) != len(m):
                raise ValueError("u must have one slice per time node")
            object.__setattr__(self, "u", u)
        if self.w is not None:
            w = tuple(self.w)
            if len(w) != len(m) - 1:
                raise ValueError("w must have one slice per time interval (half nodes)")
            object.__setattr__(self, "w", w)

    @property
    def K(self) -> int:
        return len(self.m) - 1

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    @property
    def half_times(self) -> np.ndarray:
        return (np.arange(self.K) + 0.5) * self.dt

    def m_values(self) -> np.ndarray:
        """Densities stacked as (K+1, *grid.shape)."""
        return np.stack([s.values for s in self.m])

    def u_values(self) -> np.ndarray:
        if self.u is None:
            raise ValueError("trajectory carries no value slices")
        return np.stack([s.values for s in self.u])

    def w_values(self) -> np.ndarray:
        """Momentum stacked as (K, dim, *grid.shape)."""
        if self.w is None:
            raise ValueError("trajectory carries no momentum slices")
        return np.stack([np.stack(v.arrays()) for v in self.w])

    def min_density(self) -> float:
        return float(min(np.min(s.values) for s in self.m))

    def reversed(self) -> "Trajectory":
        u = tuple(reversed(self.u)) if self.u is not None else None
        w = None
        if self.w is not None:
            w = tuple(
                VectorField(self.grid, tuple(ScalarField(self.grid, -a) for a in v.arrays()))
                for v in reversed(self.w)
            )
        return Trajectory(self.grid, self.T, tuple(reversed(self.m)), u, w)

    def with_u(self, u_slices) -> "Trajectory":
        return Trajectory(self.grid, self.T, self.m, tuple(u_slices), self.w)


def trajectory_from_arrays(grid: TorusGrid, T: float, m: np.ndarray,
                           u: np.ndarray | None = None,
                           w: np.ndarray | None = None,
                           check_mass: bool = True) -> Trajectory:
    """Build a Trajectory from stacked arrays (m: (K+1,...), w: (K,dim,...))."""
    m_slices = tuple(ScalarField(grid, a) for a in m)
    u_slices = tuple(ScalarField(grid, a) for a in u) if u is not None else None
    w_slices = None
    if w is not None:
        w_slices = tuple(
            VectorField(grid, tuple(ScalarField(grid, w[k, ax]) for ax in range(grid.dim)))
            for k in range(w.shape[0])
        )
    return Trajectory(grid, T, m_slices, u_slices, w_slices, check_mass=check_mass)
