"""Hamiltonians, couplings, internal energies and admissibility predicates.

The power Hamiltonian H(p) = |p|^beta / beta (beta > 1) and its Legendre dual
L(v) = |v|^beta' / beta' with beta' = beta/(beta-1) drive both solver
backends.  Internal energies U carry the derived pressure P(z) = U'(z) z -
U(z), whose sign and growth decide whether the density functional
t -> \\int U(m(.,t)) dx is convex along solutions; those conditions are
certified here by dense sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator

# With beta >= 2 and alpha at the threshold value, the supremum returned by
# congestion_alpha_sup is attained in dimension one (the dimensional fraction
# in the convexity condition vanishes for large q).
ALPHA_SUP_ATTAINED_AT_D1 = True


# -- Hamiltonian -------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianSpec:
    """Power Hamiltonian H(p) = |p|^beta / beta with conjugate L = |v|^beta'/beta'."""

    beta: float

    def __post_init__(self):
        if not self.beta > 1.0:
            raise ValueError("beta must exceed 1")

    @property
    def beta_conj(self) -> float:
        return self.beta / (self.beta - 1.0)

    def H_of_norm(self, pnorm):
        pnorm = np.asarray(pnorm, dtype=float)
        return pnorm**self.beta / self.beta

    def H(self, *p_components):
        return self.H_of_norm(_norm(p_components))

    def Dp_factor(self, pnorm):
        """Scalar s(|p|) with D_pH(p) = s(|p|) * p; finite at p = 0 for beta > 1."""
        pnorm = np.asarray(pnorm, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(pnorm > 0.0, pnorm**(self.beta - 2.0), 0.0)
        if self.beta == 2.0:
            out = np.ones_like(pnorm)
        return out

    def DpH(self, *p_components):
        s = self.Dp_factor(_norm(p_components))
        return [s * np.asarray(p, dtype=float) for p in p_components]

    def L_of_norm(self, vnorm):
        vnorm = np.asarray(vnorm, dtype=float)
        bc = self.beta_conj
        return vnorm**bc / bc

    def L(self, *v_components):
        return self.L_of_norm(_norm(v_components))

    def DL_factor(self, vnorm):
        vnorm = np.asarray(vnorm, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(vnorm > 0.0, vnorm**(self.beta_conj - 2.0), 0.0)
        if self.beta_conj == 2.0:
            out = np.ones_like(vnorm)
        return out


def _norm(components) -> np.ndarray:
    acc = None
    for c in components:
        c = np.asarray(c, dtype=float)
        acc = c * c if acc is None else acc + c * c
    return np.sqrt(acc)


def legendre_pair_check(ham: HamiltonianSpec, n_samples: int = 256,
                        dim: int = 1, seed: int = 0) -> float:
    """Max Fenchel gap |L(v) + H(p*) - p*.v| at the dual point p* = v|v|^{beta'-2}.

    Also verifies the one-sided Fenchel-Young inequality p.v - H(p) - L(v) <= 0
    on random p; a positive excess raises.  Returns the max equality gap.
    """
    rng = np.random.default_rng(seed)
    v = rng.uniform(-10.0, 10.0, size=(n_samples, dim))
    vn = np.sqrt(np.sum(v * v, axis=1))
    p_star = v * ham.DL_factor(vn)[:, None]
    pn = np.sqrt(np.sum(p_star * p_star, axis=1))
    gap = np.abs(ham.L_of_norm(vn) + ham.H_of_norm(pn) - np.sum(p_star * v, axis=1))
    p = rng.uniform(-10.0, 10.0, size=(n_samples, dim))
    pn2 = np.sqrt(np.sum(p * p, axis=1))
    excess = np.sum(p * v, axis=1) - ham.H_of_norm(pn2) - ham.L_of_norm(vn)
    if np.max(excess) > 1e-9 * max(1.0, float(np.max(np.abs(excess)))):
        raise AssertionError("Fenchel-Young inequality violated")
    return float(np.max(gap))


# -- coupling ----------------------------------------------------------------

class CouplingSpec:
    """Non-decreasing coupling g(m) with antiderivative G (G(0) = 0) and g'.

    Kinds: zero, power (g = c m^theta), and tabulated samples interpolated by
    a monotone piecewise cubic with constant-slope linear extension outside
    the table range.
    """

    def __init__(self, kind: str, c: float = 0.0, theta: float = 1.0,
                 z: np.ndarray | None = None, gz: np.ndarray | None = None,
                 check_monotone: bool = True):
        self.kind = kind
        if kind == "zero":
            pass
        elif kind == "power":
            if c < 0 or theta < 0:
                raise ValueError("power coupling needs c >= 0 and theta >= 0")
            self.c, self.theta = float(c), float(theta)
        elif kind == "table":
            z = np.asarray(z, dtype=float)
            gz = np.asarray(gz, dtype=float)
            if z.ndim != 1 or z.shape != gz.shape or z.size < 2:
                raise ValueError("table coupling needs matching 1-d z and g arrays")
            if np.any(np.diff(z) <= 0):
                raise ValueError("table z values must be strictly increasing")
            if check_monotone and np.any(
                    np.diff(gz) < -1e-12 * max(1.0, float(np.max(np.abs(gz))))):
                raise ValueError("table coupling is not non-decreasing")
            self._z, self._gz = z, gz
            self._interp = PchipInterpolator(z, gz, extrapolate=False)
            self._dinterp = self._interp.derivative()
            self._anti = self._interp.antiderivative()
            # constant-slope linear extension outside [z0, z1]
            self._slope_lo = float(self._dinterp(z[0]))
            self._slope_hi = float(self._dinterp(z[-1]))
        else:
            raise ValueError(f"unknown coupling kind {kind!r}")

    @classmethod
    def zero(cls) -> "CouplingSpec":
        return cls("zero")

    @classmethod
    def power(cls, c: float, theta: float) -> "CouplingSpec":
        return cls("power", c=c, theta=theta)

    @classmethod
    def table(cls, z, gz, check_monotone: bool = True) -> "CouplingSpec":
        """Tabulated coupling.  check_monotone=False admits monotone-decreasing
        tables (used by manufactured solutions that fall outside the
        crowd-aversion hypotheses); solvers accept them, the convexity
        theorems' hypotheses do not."""
        return cls("table", z=z, gz=gz, check_monotone=check_monotone)

    @classmethod
    def from_csv(cls, path: str) -> "CouplingSpec":
        """Two-column CSV (z, g(z)) with strictly increasing z; header optional."""
        with open(path) as fh:
            first = fh.readline()
        skip = 0
        try:
            [float(tok) for tok in first.replace(",", " ").split()]
        except ValueError:
            skip = 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        if data.shape[1] != 2:
            raise ValueError("coupling CSV must have exactly two columns")
        return cls.table(data[:, 0], data[:, 1])

    def g(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(m)
        if self.kind == "power":
            if self.theta == 0.0:
                return np.full_like(m, self.c)
            with np.errstate(invalid="ignore"):
                return self.c * np.where(m > 0, m, 0.0)**self.theta
        z0, z1 = self._z[0], self._z[-1]
        out = np.empty_like(m)
        lo = m < z0
        hi = m > z1
        mid = ~(lo | hi)
        out[mid] = self._interp(m[mid])
        out[lo] = self._gz[0] + self._slope_lo * (m[lo] - z0)
        out[hi] = self._gz[-1] + self._slope_hi * (m[hi] - z1)
        return out

    def g_prime(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(m)
        if self.kind == "power":
            if self.theta == 0.0:
                return np.zeros_like(m)
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.where(m > 0, self.c * self.theta * m**(self.theta - 1.0), 0.0)
        z0, z1 = self._z[0], self._z[-1]
        out = np.empty_like(m)
        lo = m < z0
        hi = m > z1
        mid = ~(lo | hi)
        out[mid] = self._dinterp(m[mid])
        out[lo] = self._slope_lo
        out[hi] = self._slope_hi
        return out

    def G(self, m):
        """Antiderivative of g with G(0) = 0 (exact for power/table pieces)."""
        m = np.asarray(m, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(m)
        if self.kind == "power":
            return self.c * m**(self.theta + 1.0) / (self.theta + 1.0)
        z0, z1 = self._z[0], self._z[-1]
        g0, g1 = self._gz[0], self._gz[-1]
        # integral of the linear extension from 0 up to z0
        base = z0 * g0 - 0.5 * self._slope_lo * z0**2
        anti1 = float(self._anti(z1))
        out = np.empty_like(m)
        lo = m < z0
        hi = m > z1
        mid = ~(lo | hi)
        out[mid] = base + self._anti(m[mid])
        d = m[lo] - z0
        out[lo] = base + g0 * d + 0.5 * self._slope_lo * d**2
        d = m[hi] - z1
        out[hi] = base + anti1 + g1 * d + 0.5 * self._slope_hi * d**2
        return out

    def describe(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "power":
            return f"power(c={self.c:g}, theta={self.theta:g})"
        return f"table({self._z.size} points on [{self._z[0]:g}, {self._z[-1]:g}])"


# -- internal energy ---------------------------------------------------------

class InternalEnergy:
    """Internal energy density U(z) with derivative; carries the pressure P."""

    def __init__(self, kind: str, q: float = 2.0, eps: float = 0.0,
                 U: Callable | None = None, dU: Callable | None = None,
                 label: str | None = None):
        self.kind = kind
        self.q = float(q)
        self.eps = float(eps)
        if kind == "power":
            if self.q < 1.0:
                raise ValueError("power energy needs q >= 1")
        elif kind == "entropy":
            pass
        elif kind == "shifted_inverse":
            if self.q <= 0 or self.eps <= 0:
                raise ValueError("shifted_inverse needs q > 0 and eps > 0")
        elif kind == "custom":
            if U is None or dU is None:
                raise ValueError("custom energy needs U and dU callables")
            self._U, self._dU = U, dU
        else:
            raise ValueError(f"unknown energy kind {kind!r}")
        self._label = label

    @classmethod
    def power(cls, q: float) -> "InternalEnergy":
        return cls("power", q=q)

    @classmethod
    def entropy(cls) -> "InternalEnergy":
        return cls("entropy")

    @classmethod
    def shifted_inverse(cls, q: float, eps: float) -> "InternalEnergy":
        return cls("shifted_inverse", q=q, eps=eps)

    @classmethod
    def custom(cls, U: Callable, dU: Callable, label: str = "custom") -> "InternalEnergy":
        return cls("custom", U=U, dU=dU, label=label)

    def describe(self) -> str:
        if self._label:
            return self._label
        if self.kind == "power":
            return f"z^{self.q:g}"
        if self.kind == "entropy":
            return "z*ln(z)"
        if self.kind == "shifted_inverse":
            return f"(z+{self.eps:g})^-{self.q:g}"
        return "custom"

    def U(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "power":
            return z**self.q
        if self.kind == "entropy":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(z > 0, z * np.log(np.where(z > 0, z, 1.0)), 0.0)
        if self.kind == "shifted_inverse":
            return (z + self.eps)**(-self.q)
        return np.asarray(self._U(z), dtype=float)

    def dU(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "power":
            return self.q * z**(self.q - 1.0)
        if self.kind == "entropy":
            return np.log(z) + 1.0
        if self.kind == "shifted_inverse":
            return -self.q * (z + self.eps)**(-self.q - 1.0)
        return np.asarray(self._dU(z), dtype=float)

    def defined_at(self, z_min: float) -> bool:
        """Whether U is evaluable down to z_min (>= 0)."""
        if self.kind in ("power", "entropy"):
            return z_min >= 0.0
        if self.kind == "shifted_inverse":
            return z_min + self.eps > 0.0
        try:
            val = self.U(np.asarray([max(z_min, 0.0)]))
            return bool(np.all(np.isfinite(val)))
        except (ValueError, FloatingPointError, ZeroDivisionError):
            return False

    def pressure_values(self, z):
        return self.dU(z) * np.asarray(z, dtype=float) - self.U(z)

    def pressure_prime(self, z, rel_step: float = 1e-6):
        """P'(z) = U''(z) z, closed form where available, else centered FD on U'."""
        z = np.asarray(z, dtype=float)
        if self.kind == "power":
            return self.q * (self.q - 1.0) * z**(self.q - 1.0)
        if self.kind == "entropy":
            return np.ones_like(z)
        if self.kind == "shifted_inverse":
            return self.q * (self.q + 1.0) * z * (z + self.eps)**(-self.q - 2.0)
        h = rel_step * np.maximum(np.abs(z), 1.0)
        upp = (self.dU(z + h) - self.dU(z - h)) / (2.0 * h)
        return upp * z

    def is_smoothness_certified(self) -> bool:
        """Closed-form kinds are C^1-exact; custom kinds only get sampled checks."""
        return self.kind != "custom"


def pressure(U: InternalEnergy, z: float) -> float:
    """P(z) = U'(z) z - U(z); rejects z <= 0."""
    if z <= 0:
        raise ValueError("pressure requires z > 0")
    return float(U.pressure_values(np.asarray(z, dtype=float)))


def default_z_grid() -> np.ndarray:
    return np.logspace(-4.0, 4.0, 400)


class AdmissibilityResult(NamedTuple):
    admissible: bool
    margin: float
    certificate: str  # "sampled" for custom kinds, "sampled+closed-form" otherwise


def displacement_admissible(U: InternalEnergy, d: int,
                            z_grid: np.ndarray | None = None) -> AdmissibilityResult:
    """Sampled check that P >= 0 and P(z)/z^(1-1/d) is non-decreasing.

    margin is the most negative violation across both checks (pressure values
    and consecutive ratio differences); the pair passes when
    margin >= -1e-10 * scale.
    """
    if d < 1:
        raise ValueError("dimension d must be >= 1")
    z = default_z_grid() if z_grid is None else np.asarray(z_grid, dtype=float)
    if z.ndim != 1 or z.size < 2 or np.any(z <= 0) or np.any(np.diff(z) <= 0):
        raise ValueError("z_grid must be strictly increasing and positive")
    P = U.pressure_values(z)
    ratio = P / z**(1.0 - 1.0 / d)
    diffs = np.diff(ratio)
    margin = float(min(np.min(P), np.min(diffs)))
    scale = max(1.0, float(np.max(np.abs(ratio))))
    tol = 1e-10 * scale
    cert = "sampled" if not U.is_smoothness_certified() else "sampled+closed-form"
    return AdmissibilityResult(margin >= -tol, margin, cert)


def pressure_growth_check(U: InternalEnergy, d: int,
                          z_grid: np.ndarray | None = None) -> float:
    """Max violation of z P'(z) >= (1 - 1/d) P(z); admissible U stay <= ~0."""
    if d < 1:
        raise ValueError("dimension d must be >= 1")
    z = default_z_grid() if z_grid is None else np.asarray(z_grid, dtype=float)
    if z.ndim != 1 or z.size < 2 or np.any(z <= 0) or np.any(np.diff(z) <= 0):
        raise ValueError("z_grid must be strictly increasing and positive")
    P = U.pressure_values(z)
    Pp = U.pressure_prime(z)
    return float(np.max((1.0 - 1.0 / d) * P - z * Pp))


# -- congestion parameter conditions ----------------------------------------

class CongestionCondition(NamedTuple):
    holds: bool
    branch: str  # "beta>=2" or "1<beta<2"
    margin: float


@dataclass(frozen=True)
class CongestionParams:
    """Congestion exponent alpha >= 0; alpha = 0 disables congestion."""

    alpha: float = 0.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def congestion_convexity_condition(q: float, alpha: float, beta: float,
                                   d: int) -> CongestionCondition:
    """Parameter test for convexity of t -> \\int m^q with congestion.

    Requires q + 2 alpha (1-beta) >= 0 together with
      1 - (1 - 1/d)/(q + 2 alpha (1-beta)) - alpha (beta-1)/2 >= 0   (beta >= 2)
      1 - (1 - 1/d)/(q + 2 alpha (1-beta)) - alpha/2         >= 0   (1 < beta < 2).
    The degenerate denominator q + 2 alpha (1-beta) = 0 is accepted only when
    the numerator 1 - 1/d vanishes (d = 1).
    """
    if beta <= 1.0:
        raise ValueError("beta must exceed 1")
    if q < 1.0 or alpha < 0.0 or d < 1:
        raise ValueError("need q >= 1, alpha >= 0, d >= 1")
    branch = "beta>=2" if beta >= 2.0 else "1<beta<2"
    slack = alpha * (beta - 1.0) / 2.0 if beta >= 2.0 else alpha / 2.0
    S = q + 2.0 * alpha * (1.0 - beta)
    numer = 1.0 - 1.0 / d
    if S == 0.0:
        if numer == 0.0:
            V = 1.0 - slack
            return CongestionCondition(S >= 0.0 and V >= 0.0, branch, min(S, V))
        return CongestionCondition(False, branch, S)
    if S < 0.0:
        return CongestionCondition(False, branch, S)
    V = 1.0 - numer / S - slack
    return CongestionCondition(V >= 0.0, branch, min(S, V))


def congestion_alpha_sup(beta: float) -> float:
    """Supremum of alpha keeping the admissible-q set unbounded: 2/(beta-1) for
    beta >= 2, else 2.  In dimension one the bound is attained
    (ALPHA_SUP_ATTAINED_AT_D1)."""
    if beta <= 1.0:
        raise ValueError("beta must exceed 1")
    if beta >= 2.0:
        return 2.0 / (beta - 1.0)
    return 2.0


def admissible_q_threshold(alpha: float, beta: float, d: int,
                           q_max: float = 1e3, n_q: int = 2000) -> float | None:
    """Smallest sampled Q such that the convexity condition holds for every
    sampled q in [Q, q_max]; None when no such Q exists below q_max."""
    qs = np.logspace(0.0, math.log10(q_max), n_q)
    ok = np.array([congestion_convexity_condition(float(q), alpha, beta, d).holds
                   for q in qs])
    if not ok[-1]:
        return None
    idx = np.where(~ok)[0]
    if idx.size == 0:
        return float(qs[0])
    first = idx[-1] + 1
    if first >= qs.size:
        return None
    return float(qs[first])
