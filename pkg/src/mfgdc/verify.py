"""Certification of convexity, norm bounds and matrix/differential identities.

Reports are quantitative: each check carries its margin and tolerance, and
tolerances are scale-aware (tol = tol_abs + tol_rel * max|F|).  Defaults suit
solver-produced curves, where discretization error dominates; oracle-produced
curves warrant tol_rel ~ 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from .core import ScalarField, TorusGrid, Trajectory, grad_arrays, div_arrays, integrate
from .models import HamiltonianSpec, InternalEnergy
from .problem import PlanningProblem

DEFAULT_TOL_ABS = 1e-10
DEFAULT_TOL_REL = 1e-3


# -- functional curves and convexity ------------------------------------------

def functional_curve(traj: Trajectory, U: InternalEnergy
                     ) -> tuple[np.ndarray, np.ndarray]:
    """(t_k, F_k) with F_k the integral of U(m(., t_k)) over the torus."""
    m = traj.m_values()
    for k in range(m.shape[0]):
        mn = float(np.min(m[k]))
        if not U.defined_at(mn):
            raise ValueError(
                f"energy {U.describe()} undefined at slice {k} (min density {mn:g})")
    F = np.array([float(np.mean(U.U(m[k]))) for k in range(m.shape[0])])
    return traj.times.copy(), F


@dataclass
class ConvexityReport:
    """Second-difference and chord tests of a sampled curve t -> F(t)."""

    label: str
    times: np.ndarray
    values: np.ndarray
    second_differences: np.ndarray
    min_second_difference: float
    chord_gap: float
    tolerance: float
    pass_convexity: bool
    pass_chord: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "min_second_difference": self.min_second_difference,
            "chord_gap": self.chord_gap,
            "tolerance": self.tolerance,
            "pass_convexity": self.pass_convexity,
            "pass_chord": self.pass_chord,
        }


def convexity_report(times: np.ndarray, values: np.ndarray,
                     tol_abs: float = DEFAULT_TOL_ABS,
                     tol_rel: float = DEFAULT_TOL_REL,
                     label: str = "F") -> ConvexityReport:
    """Check D2F_k >= -tol and F_k <= chord + tol with tol = tol_abs + tol_rel max|F|.

    The chord is the endpoint interpolant (1 - k/K) F_0 + (k/K) F_K, evaluated
    with the exact node fractions so that time reversal is an exact symmetry.
    """
    t = np.asarray(times, dtype=float)
    F = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.size < 3 or F.shape != t.shape:
        raise ValueError("need matching 1-d arrays with at least 3 samples")
    dt = t[1] - t[0]
    d2 = (F[2:] - 2.0 * F[1:-1] + F[:-2]) / dt**2
    K = t.size - 1
    theta = np.arange(K + 1) / K
    chord = (1.0 - theta) * F[0] + theta * F[-1]
    chord_gap = float(np.max(F - chord))
    tol = tol_abs + tol_rel * float(np.max(np.abs(F)))
    min_d2 = float(np.min(d2))
    return ConvexityReport(label, t, F, d2, min_d2, chord_gap, tol,
                           min_d2 >= -tol, chord_gap <= tol)


# -- Lq norm bounds -------------------------------------------------------------

@dataclass
class NormRecord:
    q: float  # math.inf for the sup norm
    norms: np.ndarray
    gap_interp: float
    gap_log: float | None  # None when the log test is degenerate
    strictness_margin: float | None
    pass_interp: bool
    pass_log: bool | None

    def to_dict(self) -> dict:
        return {
            "q": "inf" if np.isinf(self.q) else self.q,
            "gap_interp": self.gap_interp,
            "gap_log": self.gap_log,
            "strictness_margin": self.strictness_margin,
            "pass_interp": self.pass_interp,
            "pass_log": self.pass_log,
        }


@dataclass
class BoundsReport:
    records: list
    sup_gap: float | None = None
    inf_gap: float | None = None
    pass_sup: bool | None = None
    pass_inf: bool | None = None
    tolerance: float = 0.0

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "sup_gap": self.sup_gap,
            "inf_gap": self.inf_gap,
            "pass_sup": self.pass_sup,
            "pass_inf": self.pass_inf,
            "tolerance": self.tolerance,
        }


def _lq_norms(m: np.ndarray, q: float) -> np.ndarray:
    if np.isinf(q):
        return np.array([float(np.max(sl)) for sl in m])
    return np.array([float(np.mean(sl**q))**(1.0 / q) for sl in m])


def lq_logconvexity_report(traj: Trajectory, q_list,
                           tol_abs: float = DEFAULT_TOL_ABS,
                           tol_rel: float = DEFAULT_TOL_REL) -> BoundsReport:
    """Interpolation bound and log-convexity of the norm curves.

    For each q: gap_interp = max_k [N(t_k) - N(0)^(1-k/K) N(T)^(k/K)] (pass
    when <= tol) and gap_log = min second difference of ln of the curve
    (F = integral of m^q for finite q, the sup norm for q = inf; pass when
    >= -tol).  The log test is skipped, with pass_log = None, when the curve
    is not strictly positive.  The strictness margin chord(T/2) - N(T/2) is
    reported but never asserted.
    """
    m = traj.m_values()
    K = m.shape[0] - 1
    theta = np.arange(K + 1) / K
    dt = traj.dt
    records = []
    for q in q_list:
        q = float(q)
        if not (q >= 1.0):
            raise ValueError("q must satisfy 1 <= q <= inf")
        N = _lq_norms(m, q)
        bound = N[0]**(1.0 - theta) * N[-1]**theta
        gap_interp = float(np.max(N - bound))
        tol = tol_abs + tol_rel * float(np.max(np.abs(N)))
        curve = N if np.isinf(q) else np.array([float(np.mean(sl**q)) for sl in m])
        if np.min(curve) > 0.0:
            lg = np.log(curve)
            d2 = (lg[2:] - 2.0 * lg[1:-1] + lg[:-2]) / dt**2
            gap_log = float(np.min(d2))
            pass_log = gap_log >= -tol
        else:
            gap_log, pass_log = None, None
        mid = K // 2
        strict = float(bound[mid] - N[mid]) if K % 2 == 0 else None
        records.append(NormRecord(q, N, gap_interp, gap_log, strict,
                                  gap_interp <= tol, pass_log))
    rep = BoundsReport(records)
    rep.tolerance = tol_abs + tol_rel
    return rep


def extremum_bounds_report(traj: Trajectory, d: int,
                           tol_abs: float = DEFAULT_TOL_ABS,
                           tol_rel: float = DEFAULT_TOL_REL) -> BoundsReport:
    """Sup bound for any d; infimum quasi-concavity additionally when d = 1.

    sup gap = max_k ||m_k||_inf - max(||m_0||_inf, ||m_K||_inf);
    inf gap = min(min m_0, min m_K) - min_k min m_k (d = 1 only).
    """
    m = traj.m_values()
    sup_curve = np.array([float(np.max(sl)) for sl in m])
    sup_gap = float(np.max(sup_curve) - max(sup_curve[0], sup_curve[-1]))
    tol = tol_abs + tol_rel * float(np.max(sup_curve))
    rep = BoundsReport([], sup_gap=sup_gap, pass_sup=sup_gap <= tol, tolerance=tol)
    if d == 1:
        inf_curve = np.array([float(np.min(sl)) for sl in m])
        inf_gap = float(min(inf_curve[0], inf_curve[-1]) - np.min(inf_curve))
        rep.inf_gap = inf_gap
        rep.pass_inf = inf_gap <= tol
    return rep


# -- matrix trace inequality ----------------------------------------------------

def trace_lemma_check(d: int, n_samples: int, seed: int = 0) -> float:
    """Randomized check of tr((AB)^2) >= tr(AB)^2 / d for A PSD, B symmetric.

    A = M^T M with M entries uniform in [-1,1]; B symmetric with entries
    uniform in [-1,1].  Returns the largest per-sample violation
    (tr(AB)^2/d - tr((AB)^2)) normalized by max(1, |A|_F^2 |B|_F^2); the
    inequality holds, so anything positive is round-off.
    """
    if not (1 <= d <= 8):
        raise ValueError("d must lie in [1, 8]")
    rng = np.random.default_rng(seed)
    M = rng.uniform(-1.0, 1.0, size=(n_samples, d, d))
    A = np.swapaxes(M, 1, 2) @ M
    B = rng.uniform(-1.0, 1.0, size=(n_samples, d, d))
    iu = np.triu_indices(d, k=1)
    B[:, iu[1], iu[0]] = B[:, iu[0], iu[1]]
    AB = A @ B
    tr_ab = np.trace(AB, axis1=1, axis2=2)
    tr_absq = np.trace(AB @ AB, axis1=1, axis2=2)
    violation = tr_ab**2 / d - tr_absq
    scale = np.maximum(1.0, np.sum(A * A, axis=(1, 2)) * np.sum(B * B, axis=(1, 2)))
    return float(np.max(violation / scale))


# -- divergence-trace differential identity --------------------------------------

class DivergenceTraceResult(NamedTuple):
    residual: float
    scale: float

    @property
    def normalized(self) -> float:
        return self.residual / self.scale


def _upsample(values: np.ndarray, grid: TorusGrid, factor: int
              ) -> tuple[np.ndarray, TorusGrid]:
    if factor == 1:
        return values, grid
    n, dim = grid.n, grid.dim
    fine = TorusGrid(dim, n * factor)
    spec = sfft.fftn(values)
    out_spec = np.zeros(fine.shape, dtype=complex)
    half = n // 2
    if dim == 1:
        out_spec[:half] = spec[:half]
        out_spec[-half:] = spec[-half:]
    else:
        for sx in (slice(0, half), slice(-half, None)):
            for sy in (slice(0, half), slice(-half, None)):
                out_spec[sx, sy] = spec[sx, sy]
    return sfft.ifftn(out_spec).real * factor**dim, fine


def _u_derivatives(values: np.ndarray, grid: TorusGrid):
    """Exact spectral derivatives of a band-limited field up to third order."""
    spec = sfft.fftn(values)
    ik = [1j * k for k in grid.wavenumbers()]
    d = grid.dim

    def deriv(axes):
        s = spec
        for ax in axes:
            s = s * ik[ax]
        return sfft.ifftn(s).real

    du = [deriv((a,)) for a in range(d)]
    d2u = [[deriv((a, b)) for b in range(d)] for a in range(d)]
    d3u = [[[deriv((a, b, c)) for c in range(d)] for b in range(d)] for a in range(d)]
    return du, d2u, d3u


def divergence_trace_check(u: ScalarField, beta: float,
                           refine: int = 2) -> DivergenceTraceResult:
    """Residual of div(D^2_pp H . D(H(Du))) = D(div(D_pH)) . D_pH + tr((D(D_pH))^2).

    For beta = 2 both sides are evaluated by direct nested spectral
    differentiation (every composition stays band-limited, so the evaluation
    is exact to round-off).  For beta > 2 the composed fields are merely
    Lipschitz at critical points of u and nested spectral differentiation
    converges too slowly there; each side is instead expanded by the chain
    rule in its own grouping and evaluated pointwise from spectrally exact
    derivatives of u.  The sides still contract the Hamiltonian tensors
    against Du, D2u and D3u differently, so the residual vanishes only
    because the identity holds.  scale is max(1, |lhs|_inf, |rhs|_inf);
    beta < 2 is rejected (the Hessian of H blows up at critical points).
    """
    if beta < 2.0:
        raise ValueError("divergence-trace check requires beta >= 2")
    if beta == 2.0:
        return _divergence_trace_direct(u, refine=max(refine, 2))
    vals, grid = _upsample(u.values, u.grid, refine)
    d = grid.dim
    du, d2u, d3u = _u_derivatives(vals, grid)
    pn = np.sqrt(sum(c * c for c in du))
    pos = pn > 0.0
    safe = np.where(pos, pn, 1.0)

    def pw(gamma):
        # |p|^gamma with the p = 0 limit taken as 0 (gamma > 0 in all uses)
        return np.where(pos, safe**gamma, 0.0)

    s = pw(beta - 2.0) if beta != 2.0 else np.ones(grid.shape)
    t = (beta - 2.0) * pw(beta - 4.0) if beta != 2.0 else np.zeros(grid.shape)
    sp = (beta - 2.0) * pw(beta - 4.0) if beta != 2.0 else np.zeros(grid.shape)
    tp = (beta - 2.0) * (beta - 4.0) * pw(beta - 6.0) if beta != 2.0 else np.zeros(grid.shape)
    P = [s * du[a] for a in range(d)]

    def A(a, b):
        out = t * du[a] * du[b]
        if a == b:
            out = out + s
        return out

    def Aprime(a, b, m):
        # dA_{ab}/dp_m for the power Hamiltonian
        out = tp * du[m] * du[a] * du[b] + t * ((a == m) * du[b] + (b == m) * du[a])
        if a == b:
            out = out + sp * du[m]
        return out

    rng = range(d)
    # lhs = div( A . D(H(Du)) ) with D(H(Du)) = D2u P
    lhs = np.zeros(grid.shape)
    for a in rng:
        for b in rng:
            for l in rng:
                for m in rng:
                    lhs += Aprime(a, b, m) * d2u[m][a] * d2u[b][l] * P[l]
    for a in rng:
        for b in rng:
            for l in rng:
                lhs += A(a, b) * d3u[a][b][l] * P[l]
    for a in rng:
        for b in rng:
            for l in rng:
                for m in rng:
                    lhs += A(a, b) * d2u[b][l] * A(l, m) * d2u[m][a]

    # rhs = D(div D_pH) . D_pH + tr((D(D_pH))^2)
    rhs = np.zeros(grid.shape)
    for a in rng:
        for m in rng:
            for q in rng:
                for b in rng:
                    rhs += Aprime(a, m, q) * d2u[q][b] * d2u[m][a] * P[b]
    for a in rng:
        for m in rng:
            for b in rng:
                rhs += A(a, m) * d3u[m][a][b] * P[b]
    for l in rng:
        for m in rng:
            jp_lm = sum(A(l, q) * d2u[q][m] for q in rng)
            jp_ml = sum(A(m, q) * d2u[q][l] for q in rng)
            rhs += jp_lm * jp_ml

    residual = float(np.max(np.abs(lhs - rhs)))
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return DivergenceTraceResult(residual, scale)


def _divergence_trace_direct(u: ScalarField, refine: int) -> DivergenceTraceResult:
    """Quadratic-Hamiltonian identity div(D2u Du) = D(lap u).Du + tr((D2u)^2),
    both sides by nested spectral differentiation."""
    vals, grid = _upsample(u.values, u.grid, refine)
    du = grad_arrays(vals, grid)
    hval = 0.5 * sum(c * c for c in du)
    dh = grad_arrays(hval, grid)
    lhs = div_arrays(dh, grid)
    divP = div_arrays(du, grid)
    ddivP = grad_arrays(divP, grid)
    rhs = sum(ddivP[ax] * du[ax] for ax in range(grid.dim))
    for i in range(grid.dim):
        row = grad_arrays(du[i], grid)
        for j in range(grid.dim):
            col = grad_arrays(du[j], grid)
            rhs = rhs + row[j] * col[i]
    residual = float(np.max(np.abs(lhs - rhs)))
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return DivergenceTraceResult(residual, scale)


def random_band_limited_field(grid: TorusGrid, seed: int, max_mode: int = 8
                              ) -> ScalarField:
    """Zero-mean random field with modes up to max_mode, normalized to max 1."""
    rng = np.random.default_rng(seed)
    coords = grid.coordinates()
    vals = np.zeros(grid.shape)
    if grid.dim == 1:
        for mode in range(1, max_mode + 1):
            a, b = rng.normal(size=2) / mode
            vals += a * np.cos(2 * np.pi * mode * coords[0]) \
                  + b * np.sin(2 * np.pi * mode * coords[0])
    else:
        for mx in range(0, max_mode + 1):
            for my in range(-max_mode, max_mode + 1):
                if mx == 0 and my <= 0:
                    continue
                if mx * mx + my * my > max_mode * max_mode:
                    continue
                a, b = rng.normal(size=2) / (mx * mx + my * my)
                phase = 2 * np.pi * (mx * coords[0] + my * coords[1])
                vals += a * np.cos(phase) + b * np.sin(phase)
    vals /= np.max(np.abs(vals))
    return ScalarField(grid, vals)


# -- sign of the convexity-estimate integrand -------------------------------------

class EstimateSignResult(NamedTuple):
    min_value: float
    values: np.ndarray
    times: np.ndarray
    scale: float


def estimate_rhs_sign_check(traj: Trajectory, problem: PlanningProblem,
                            U: InternalEnergy) -> EstimateSignResult:
    """Per-slice integral of the convexity lower-bound integrand.

    I(t) = int (P'(m) m - P(m) + P(m)/d) div(D_pH(Du))^2
         + P'(m) g'(m) Dm . D^2_pp H(Du) Dm  dx,
    which is nonnegative for admissible U, non-decreasing g and convex H.
    Returns the minimum over slices; exactly zero when P vanishes (linear U)
    or on slices with vanishing gradients.
    """
    if traj.u is None:
        raise ValueError("estimate check requires value slices u")
    grid = traj.grid
    d = grid.dim
    ham = problem.hamiltonian
    beta = ham.beta
    m = traj.m_values()
    u = traj.u_values()
    out = np.empty(m.shape[0])
    for k in range(m.shape[0]):
        mk = m[k]
        P = U.pressure_values(mk)
        Pp = U.pressure_prime(mk)
        du = grad_arrays(u[k], grid)
        pn = np.sqrt(sum(c * c for c in du))
        sfac = ham.Dp_factor(pn)
        divP = div_arrays([sfac * c for c in du], grid)
        term1 = (Pp * mk - P + P / d) * divP**2
        dm = grad_arrays(mk, grid)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(pn > 0, (beta - 2.0) * pn**(beta - 4.0), 0.0)
        if beta == 2.0:
            t = np.zeros_like(pn)
        quad = sum(dm[ax] * dm[ax] * sfac for ax in range(d))
        cross = sum(dm[ax] * du[ax] for ax in range(d))
        quad = quad + t * cross**2
        term2 = Pp * problem.coupling.g_prime(mk) * quad
        out[k] = float(np.mean(term1 + term2))
    scale = max(1.0, float(np.max(np.abs(out))))
    return EstimateSignResult(float(np.min(out)), out, traj.times.copy(), scale)


# -- report serialization ----------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    margin: float | None
    tolerance: float | None
    details: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "pass": self.passed, "margin": self.margin,
                "tolerance": self.tolerance, "details": self.details}


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)

    def add(self, check: Check):
        self.checks.append(check)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"checks": [c.to_dict() for c in self.checks], "curves": self.curves}
