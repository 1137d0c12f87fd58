"""mfgdc: planning-problem solvers and displacement-convexity certification
for first-order mean-field games on the unit torus."""

from .core import (
    ScalarField,
    TorusGrid,
    Trajectory,
    VectorField,
    constant_field,
    divergence,
    field_from_function,
    gradient,
    integrate,
    laplacian,
    make_grid,
    trajectory_from_arrays,
)
from .fileio import (
    BadMagic,
    FormatError,
    ShapeOverflow,
    TruncatedPayload,
    VersionMismatch,
    read_field,
    read_trajectory,
    write_field,
    write_trajectory,
)
from .models import (
    ALPHA_SUP_ATTAINED_AT_D1,
    CongestionParams,
    CouplingSpec,
    HamiltonianSpec,
    InternalEnergy,
    admissible_q_threshold,
    congestion_alpha_sup,
    congestion_convexity_condition,
    displacement_admissible,
    legendre_pair_check,
    pressure,
    pressure_growth_check,
)
from .newton import solve_planning_newton
from .oracle import (
    BumpSpec,
    TravelingWaveSpec,
    cosine_profile,
    quantile_interpolant_1d,
    random_smooth_density,
    translation_solution,
    traveling_wave_congestion,
    uniform_solution,
)
from .problem import (
    PlanningProblem,
    SolveDiagnostics,
    SolverError,
    SolverParams,
    kinetic_action,
    residual_norms,
    total_action,
)
from .variational import solve_planning_variational
from .verify import (
    BoundsReport,
    Check,
    ConvexityReport,
    VerificationReport,
    convexity_report,
    divergence_trace_check,
    estimate_rhs_sign_check,
    extremum_bounds_report,
    functional_curve,
    lq_logconvexity_report,
    random_band_limited_field,
    trace_lemma_check,
)

__version__ = "0.1.0"
