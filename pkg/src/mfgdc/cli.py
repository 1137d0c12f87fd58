"""Command-line interface: configuration ingestion and experiment orchestration.

Exit codes: 0 success; 2 verification-check failure; 3 solver failure;
4 configuration or usage error.  Every failure also writes a machine-readable
error JSON (error.json in the output directory when one exists, else stderr).
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import math
import os
import sys
import time

import numpy as np

from . import fileio
from .core import ScalarField, Trajectory, constant_field, make_grid
from .models import (
    ALPHA_SUP_ATTAINED_AT_D1,
    CongestionParams,
    CouplingSpec,
    HamiltonianSpec,
    InternalEnergy,
    admissible_q_threshold,
    congestion_alpha_sup,
    displacement_admissible,
)
from .newton import solve_planning_newton
from .oracle import (
    BumpSpec,
    TravelingWaveSpec,
    cosine_profile,
    translation_solution,
    traveling_wave_congestion,
    uniform_solution,
)
from .problem import PlanningProblem, SolverError, SolverParams, total_action
from .variational import solve_planning_variational
from .verify import (
    Check,
    VerificationReport,
    convexity_report,
    divergence_trace_check,
    extremum_bounds_report,
    functional_curve,
    lq_logconvexity_report,
    random_band_limited_field,
    trace_lemma_check,
)

EXIT_OK = 0
EXIT_CHECK_FAILURE = 2
EXIT_SOLVER_FAILURE = 3
EXIT_CONFIG_ERROR = 4


class ConfigError(Exception):
    pass


def _load_schema() -> dict:
    text = importlib.resources.files("mfgdc").joinpath("config.schema.json").read_text()
    return json.loads(text)


def load_config(path: str) -> dict:
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    try:
        jsonschema.validate(cfg, _load_schema())
    except jsonschema.ValidationError as err:
        raise ConfigError(f"config rejected: {err.message}") from err
    return cfg


def _density_from_config(spec: dict, grid) -> ScalarField:
    kind = spec["kind"]
    if kind == "uniform":
        return constant_field(grid, 1.0)
    if kind == "bump":
        if "center" not in spec or "length" not in spec:
            raise ConfigError("bump endpoints need center and length")
        bump = BumpSpec(spec["center"], spec["length"], spec.get("floor", 0.0))
        return bump.field(grid)
    if not os.path.exists(spec.get("path", "")):
        raise ConfigError(f"endpoint field file not found: {spec.get('path')}")
    field = fileio.read_field(spec["path"])
    if field.grid != grid:
        raise ConfigError("endpoint field grid does not match config grid")
    return field


def _coupling_from_config(spec: dict) -> CouplingSpec:
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return CouplingSpec.zero()
    if kind == "power":
        return CouplingSpec.power(spec.get("c", 1.0), spec.get("theta", 1.0))
    path = spec.get("path", "")
    if not os.path.exists(path):
        raise ConfigError(f"coupling table not found: {path}")
    return CouplingSpec.from_csv(path)


def _energy_from_config(spec: dict) -> InternalEnergy:
    kind = spec["kind"]
    if kind == "power":
        return InternalEnergy.power(spec.get("q", 2.0))
    if kind == "entropy":
        return InternalEnergy.entropy()
    return InternalEnergy.shifted_inverse(spec.get("q", 1.0), spec.get("eps", 1e-2))


def build_problem(cfg: dict) -> PlanningProblem:
    try:
        grid = make_grid(cfg["grid"]["dim"], cfg["grid"]["n"])
    except ValueError as err:
        raise ConfigError(str(err)) from err
    m0 = _density_from_config(cfg["endpoints"]["m0"], grid)
    mT = _density_from_config(cfg["endpoints"]["mT"], grid)
    ham = HamiltonianSpec(cfg.get("hamiltonian", {}).get("beta", 2.0))
    coupling = _coupling_from_config(cfg.get("coupling", {"kind": "zero"}))
    alpha = cfg.get("congestion", {}).get("alpha", 0.0)
    try:
        return PlanningProblem(grid, cfg["time"]["T"], cfg["time"]["K"], m0, mT,
                               ham, coupling, CongestionParams(alpha))
    except ValueError as err:
        raise ConfigError(str(err)) from err


def solver_params_from_config(cfg: dict) -> SolverParams:
    s = cfg.get("solver", {})
    return SolverParams(
        backend=s.get("backend", "variational"),
        max_iters=s.get("max_iters", 20000),
        tol_residual=s.get("tol", 1e-5),
        penalty=s.get("penalty", 1.0),
        alpha_step=s.get("alpha_step", 0.1),
        eps_m=s.get("eps_m", 1e-12),
    )


def _verify_trajectory(traj: Trajectory, problem: PlanningProblem,
                       vcfg: dict) -> VerificationReport:
    tol_abs = vcfg.get("tol_abs", 1e-10)
    tol_rel = vcfg.get("tol_rel", 1e-3)
    report = VerificationReport()
    report.curves["t"] = [float(t) for t in traj.times]
    masses = [float(np.mean(s.values)) for s in traj.m]
    mass_gap = max(abs(m - masses[0]) for m in masses)
    report.add(Check("mass_conservation", mass_gap <= 1e-8, mass_gap, 1e-8))

    energies = vcfg.get("U", [{"kind": "power", "q": 2.0}])
    report.curves["F"] = {}
    for uspec in energies:
        U = _energy_from_config(uspec)
        t, F = functional_curve(traj, U)
        rep = convexity_report(t, F, tol_abs, tol_rel, label=U.describe())
        report.curves["F"][U.describe()] = [float(v) for v in F]
        report.add(Check(f"convexity[{U.describe()}]", rep.pass_convexity,
                         rep.min_second_difference, rep.tolerance,
                         "min second difference"))
        report.add(Check(f"chord[{U.describe()}]", rep.pass_chord,
                         rep.chord_gap, rep.tolerance, "endpoint chord gap"))

    q_list = [math.inf if q == "inf" else float(q)
              for q in vcfg.get("q_list", [1, 2, math.inf])]
    bounds = lq_logconvexity_report(traj, q_list, tol_abs, tol_rel)
    report.curves["norms"] = {}
    for rec in bounds.records:
        qs = "inf" if math.isinf(rec.q) else f"{rec.q:g}"
        report.curves["norms"][qs] = [float(v) for v in rec.norms]
        report.add(Check(f"norm_interpolation[q={qs}]", rec.pass_interp,
                         rec.gap_interp, bounds.tolerance))
        if rec.pass_log is not None:
            report.add(Check(f"log_convexity[q={qs}]", rec.pass_log,
                             rec.gap_log, bounds.tolerance))
    ext = extremum_bounds_report(traj, traj.grid.dim, tol_abs, tol_rel)
    report.add(Check("sup_bound", bool(ext.pass_sup), ext.sup_gap, ext.tolerance))
    if ext.pass_inf is not None:
        report.add(Check("inf_bound", bool(ext.pass_inf), ext.inf_gap, ext.tolerance))
    return report


def _write_csv(path: str, times, values) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "value"])
        for t, v in zip(times, values):
            writer.writerow([repr(float(t)), repr(float(v))])


def _emit_report(report: VerificationReport, outdir: str, timestamp: bool) -> None:
    doc = report.to_dict()
    if timestamp:
        doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    curvedir = os.path.join(outdir, "curves")
    os.makedirs(curvedir, exist_ok=True)
    t = report.curves.get("t", [])
    for label, F in report.curves.get("F", {}).items():
        safe = label.replace("/", "_").replace("*", "").replace("(", "").replace(")", "")
        _write_csv(os.path.join(curvedir, f"F_{safe}.csv"), t, F)
    for qs, N in report.curves.get("norms", {}).items():
        _write_csv(os.path.join(curvedir, f"norm_q{qs}.csv"), t, N)


def _fail(outdir: str | None, code: int, kind: str, message: str) -> int:
    doc = {"error": kind, "message": message, "exit_code": code}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if outdir and os.path.isdir(outdir):
        with open(os.path.join(outdir, "error.json"), "w") as fh:
            fh.write(text + "\n")
    print(text, file=sys.stderr)
    return code


def cmd_solve(args) -> int:
    outdir = None
    try:
        cfg = load_config(args.config)
        outdir = cfg.get("output", {}).get("directory", args.output or "mfgdc_out")
        os.makedirs(outdir, exist_ok=True)
        problem = build_problem(cfg)
        params = solver_params_from_config(cfg)
    except ConfigError as err:
        return _fail(outdir, EXIT_CONFIG_ERROR, "config", str(err))

    try:
        if params.backend == "newton":
            traj, diag = solve_planning_newton(problem, params)
        else:
            traj, diag = solve_planning_variational(problem, params)
    except SolverError as err:
        _dump_json(os.path.join(outdir, "diagnostics.json"), err.diagnostics.to_dict())
        return _fail(outdir, EXIT_SOLVER_FAILURE, "solver", str(err))
    except ValueError as err:
        return _fail(outdir, EXIT_CONFIG_ERROR, "config", str(err))

    fileio.write_trajectory(traj, os.path.join(outdir, "trajectory.mfgt"))
    ddoc = diag.to_dict()
    ddoc["action"] = total_action(traj, problem)
    _dump_json(os.path.join(outdir, "diagnostics.json"), ddoc)
    report = _verify_trajectory(traj, problem, cfg.get("verify", {}))
    _emit_report(report, outdir, timestamp=not args.no_timestamp)
    if not report.all_passed:
        print("verification checks FAILED", file=sys.stderr)
        return EXIT_CHECK_FAILURE
    print(f"solve: converged={diag.converged} iterations={diag.iterations} "
          f"checks={len(report.checks)} all passed; artifacts in {outdir}")
    return EXIT_OK


def _dump_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def cmd_verify(args) -> int:
    try:
        cfg = load_config(args.config)
        traj = fileio.read_trajectory(args.trajectory)
        grid = traj.grid
        if (grid.dim, grid.n) != (cfg["grid"]["dim"], cfg["grid"]["n"]):
            raise ConfigError("trajectory grid does not match config grid")
        problem = build_problem(cfg)
    except (ConfigError, fileio.FormatError, OSError, ValueError) as err:
        return _fail(None, EXIT_CONFIG_ERROR, "config", str(err))
    outdir = args.output or "mfgdc_out"
    os.makedirs(outdir, exist_ok=True)
    report = _verify_trajectory(traj, problem, cfg.get("verify", {}))
    _emit_report(report, outdir, timestamp=not args.no_timestamp)
    for check in report.checks:
        status = "pass" if check.passed else "FAIL"
        print(f"{status:4s}  {check.name}  margin={check.margin:.3e}")
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILURE


def _parse_energy_spec(text: str) -> InternalEnergy:
    parts = text.split(":")
    kind = parts[0]
    if kind == "power":
        return InternalEnergy.power(float(parts[1]))
    if kind == "entropy":
        return InternalEnergy.entropy()
    if kind == "shifted_inverse":
        return InternalEnergy.shifted_inverse(float(parts[1]), float(parts[2]))
    raise ConfigError(f"unknown energy spec {text!r} "
                      "(use power:q | entropy | shifted_inverse:q:eps)")


def cmd_admissible(args) -> int:
    try:
        U = _parse_energy_spec(args.energy)
        d = int(args.d)
        res = displacement_admissible(U, d)
    except (ConfigError, ValueError, IndexError) as err:
        return _fail(None, EXIT_CONFIG_ERROR, "usage", str(err))
    print(f"energy {U.describe()} in dimension {d}: "
          f"{'admissible' if res.admissible else 'NOT admissible'} "
          f"(margin {res.margin:.3e}, certificate: {res.certificate})")
    return EXIT_OK if res.admissible else EXIT_CHECK_FAILURE


def cmd_thresholds(args) -> int:
    try:
        beta = float(args.beta)
        d = int(args.d)
        sup = congestion_alpha_sup(beta)
    except ValueError as err:
        return _fail(None, EXIT_CONFIG_ERROR, "usage", str(err))
    print(f"beta = {beta:g}, d = {d}")
    print(f"sup alpha with unbounded admissible q: {sup:g} "
          f"(attained at d = 1: {ALPHA_SUP_ATTAINED_AT_D1})")
    print(f"{'alpha':>8s}  {'admissible q':>20s}")
    for frac in (0.25, 0.5, 0.75, 0.9, 1.1, 1.25):
        alpha = sup * frac
        Q = admissible_q_threshold(alpha, beta, d)
        desc = f"unbounded (q >= {Q:.3g})" if Q is not None else "bounded / empty"
        print(f"{alpha:8.3f}  {desc:>20s}")
    return EXIT_OK


def cmd_identities(args) -> int:
    seed = args.seed
    worst_trace = 0.0
    for d in range(1, 9):
        worst_trace = max(worst_trace, trace_lemma_check(d, 10_000, seed + d))
    print(f"trace inequality, 10^4 samples per dimension 1..8: "
          f"max normalized violation {worst_trace:.3e}")
    worst_div = 0.0
    for dim in (1, 2):
        grid = make_grid(dim, 64)
        for beta in (2.0, 3.0):
            for s in range(5):
                u = random_band_limited_field(grid, seed=seed + 100 * dim + s)
                res = divergence_trace_check(u, beta)
                worst_div = max(worst_div, res.normalized)
    print(f"divergence-trace identity, beta in {{2,3}}, d in {{1,2}}: "
          f"max normalized residual {worst_div:.3e}")
    ok = worst_trace <= 1e-10 and worst_div <= 1e-4
    return EXIT_OK if ok else EXIT_CHECK_FAILURE


def cmd_oracle(args) -> int:
    try:
        spec = json.loads(args.spec)
    except json.JSONDecodeError as err:
        return _fail(None, EXIT_CONFIG_ERROR, "usage", f"oracle spec is not JSON: {err}")
    outdir = args.output or "mfgdc_out"
    os.makedirs(outdir, exist_ok=True)
    try:
        grid = make_grid(spec.get("dim", 1), spec.get("n", 128))
        T = spec.get("T", 1.0)
        K = spec.get("K", 64)
        if args.kind == "uniform":
            coupling = _coupling_from_config(spec.get("coupling", {"kind": "zero"}))
            traj = uniform_solution(coupling, T, grid, K)
        elif args.kind == "translation":
            bump = BumpSpec(spec.get("center", 0.3), spec.get("length", 0.3),
                            spec.get("floor", 0.0))
            traj = translation_solution(bump, spec.get("shift", 0.25), T, grid, K)
        elif args.kind == "wave":
            wspec = TravelingWaveSpec(cosine_profile(spec.get("amplitude", 0.3)),
                                      spec.get("speed", 0.4),
                                      spec.get("alpha", 0.0), spec.get("beta", 2.0))
            result = traveling_wave_congestion(wspec, grid, K, T)
            traj = result.trajectory
            table = result.coupling
            with open(os.path.join(outdir, "coupling.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["z", "g"])
                for z in np.linspace(np.min(traj.m_values()), np.max(traj.m_values()), 512):
                    writer.writerow([repr(float(z)), repr(float(table.g(np.asarray([z]))[0]))])
            print(f"wave: k0={result.k0:.12g} coupling {result.monotone_direction}, "
                  f"margin {result.monotone_margin:.3e}, residuals {result.residuals}")
        else:
            return _fail(None, EXIT_CONFIG_ERROR, "usage",
                         f"unknown oracle kind {args.kind!r}")
    except ValueError as err:
        return _fail(outdir, EXIT_CONFIG_ERROR, "oracle", str(err))
    path = os.path.join(outdir, f"{args.kind}.mfgt")
    fileio.write_trajectory(traj, path)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfgdc",
        description="Mean-field-game planning solvers and displacement-convexity "
                    "certification on the unit torus")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("solve", help="solve a planning problem and verify the result")
    p.add_argument("config")
    p.add_argument("--output", default=None)
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="verify a stored trajectory against a config")
    p.add_argument("trajectory")
    p.add_argument("config")
    p.add_argument("--output", default=None)
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("admissible", help="certify an internal energy (power:q | "
                                          "entropy | shifted_inverse:q:eps)")
    p.add_argument("energy")
    p.add_argument("d")
    p.set_defaults(func=cmd_admissible)

    p = sub.add_parser("oracle", help="emit a reference trajectory "
                                      "(uniform | translation | wave)")
    p.add_argument("kind")
    p.add_argument("spec", help="JSON parameter object")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("identities", help="run the matrix and differential identity suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_identities)

    p = sub.add_parser("thresholds", help="tabulate congestion parameter thresholds")
    p.add_argument("beta")
    p.add_argument("d")
    p.set_defaults(func=cmd_thresholds)

    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        return args.func(args)
    except SolverError as err:
        return _fail(None, EXIT_SOLVER_FAILURE, "solver", str(err))


if __name__ == "__main__":
    sys.exit(main())
