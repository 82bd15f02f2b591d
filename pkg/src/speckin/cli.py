"""Command line front end producing deterministic output bundles.

Subcommands: simulate-linear (independent confined paths under the catalog
drift), simulate-mckean (interacting ensemble whose drift is the conditional
expectation of the running empirical law), solve-vfp (nonlinear grid solve by
fixed-point iteration), validate (grid and particle runs cross-checked into a
pass/fail diagnostics report).

Every run writes a bundle directory: a canonical config.json, data files in
CSV or JSON with a fixed column order and 17-significant-digit floats, and a
manifest recording the scenario hash, the seed, library versions, and the
SHA-256 of every file.  Bundle bytes are a pure function of (config bytes,
seed, subcommand); the --threads flag caps worker threads without changing
any output.  Exit codes: 0 success, 1 execution error, 2 a diagnostic pass
flag came back false, 64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from .config import (
    ScenarioConfig,
    build_domain,
    build_envelopes,
    build_estimator,
    build_grid,
    build_model,
    build_step_params,
    build_weight,
    default_config,
    initial_density,
    parse_config,
    sample_initial,
    serialize_config,
)
from .diagnostics import (
    DiagnosticsReport,
    flux_balance_particles,
    mc_grid_distance,
    no_permeability_residual,
    sandwich_check,
    semigroup_l2_check,
    shell_flux_estimate,
)
from .errors import NotConverged, SpeckinError
from .langevin import ensemble_confined_step
from .maxwellian import maxwellian_eval
from .mckean import run_mckean
from .vfp import picard_nonlinear

SUBCOMMANDS = ("simulate-linear", "simulate-mckean", "solve-vfp", "validate")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIAGNOSTIC = 2
EXIT_USAGE = 64

# fixed gates of the validate report; scenario-dependent ones are derived
NO_PERMEABILITY_TOL = 1e-10
ENERGY_RESIDUAL_SCALE = 0.3  # of dx + du + dt; the balance is first order
FLUX_ANTISYMMETRY_TOL = 1e-12
SHELL_FLUX_SIGMAS = 4.0


def _package_version() -> str:
    from . import __version__

    return __version__


@dataclass
class OutputBundle:
    """Where a run landed and whether every pass flag held."""

    path: Path
    manifest: dict
    passed: bool
    report: object | None = None


# --- deterministic writers ---------------------------------------------------


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(
                ",".join(cell if isinstance(cell, str) else _fmt(cell) for cell in row)
            )
            handle.write("\n")


def _write_json(path: Path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _vector_columns(name: str, dimension: int):
    if dimension == 1:
        return [name]
    return [f"{name}{i}" for i in range(dimension)]


def _components(value, dimension: int):
    if dimension == 1:
        return (float(value),)
    return tuple(float(v) for v in np.asarray(value))


def _output_times(cfg: ScenarioConfig):
    return sorted(set(cfg.run.snapshot_times) | {0.0, cfg.run.T})


def _write_paths_csv(path: Path, snapshots: dict, dimension: int):
    header = ["path_id", "t"] + _vector_columns("x", dimension) + _vector_columns(
        "u", dimension
    )

    def rows():
        for t in sorted(snapshots):
            X, U = snapshots[t]
            for i in range(X.shape[0]):
                yield (str(i), t, *_components(X[i], dimension), *_components(U[i], dimension))

    _write_csv(path, header, rows())


def _write_hits_csv(path: Path, hits, dimension: int):
    header = (
        ["path_id", "tau"]
        + _vector_columns("x", dimension)
        + _vector_columns("u_pre", dimension)
        + _vector_columns("u_post", dimension)
    )

    def rows():
        for rec in hits:
            yield (
                str(rec.path_id),
                rec.time,
                *_components(rec.location, dimension),
                *_components(rec.pre_velocity, dimension),
                *_components(rec.post_velocity, dimension),
            )

    _write_csv(path, header, rows())


def _write_field_csv(path: Path, solution, times):
    grid = solution.grid

    def rows():
        for t in times:
            k = int(np.argmin(np.abs(solution.times - t)))
            values = solution.fields[k]
            t_k = float(solution.times[k])
            for i in range(grid.n_x):
                for j in range(grid.n_u):
                    yield (t_k, grid.x[i], grid.u[j], values[i, j])

    _write_csv(path, ["t", "x", "u", "rho"], rows())


def _write_traces_csv(path: Path, solution, times):
    grid = solution.grid

    def rows():
        for t in times:
            k = int(np.argmin(np.abs(solution.times - t)))
            gamma = solution.traces[k]
            t_k = float(solution.times[k])
            for wall in (0, 1):
                for j in range(grid.n_u):
                    yield (t_k, str(wall), grid.u[j], gamma[wall, j])

    _write_csv(path, ["t", "wall", "u", "gamma"], rows())


def _write_drift_csv(path: Path, drift_fields: dict):
    def rows():
        for t in sorted(drift_fields):
            xs, values = drift_fields[t]
            for x, b in zip(xs, values):
                yield (t, x, b)

    _write_csv(path, ["t", "x", "B"], rows())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _finalize_bundle(out_dir: Path, cfg: ScenarioConfig, subcommand: str,
                     passed: bool, report=None) -> OutputBundle:
    """Hash every data file and write the manifest last."""
    config_bytes = serialize_config(cfg).encode("utf-8")
    files = {
        p.name: _sha256(p)
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "subcommand": subcommand,
        "scenario": cfg.scenario,
        "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
        "seed": cfg.run.seed,
        "passed": bool(passed),
        "versions": {
            "speckin": _package_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "files": files,
    }
    _write_json(out_dir / "manifest.json", manifest)
    return OutputBundle(path=out_dir, manifest=manifest, passed=passed, report=report)


# --- scenario runners ----------------------------------------------------------


def _march_linear(cfg: ScenarioConfig, threads: int):
    """Independent confined paths; the catalog drift kicks each velocity."""
    domain = build_domain(cfg)
    model = build_model(cfg)
    params = build_step_params(cfg)
    X, U = sample_initial(cfg, cfg.run.N, cfg.run.seed)
    X = np.array(X, dtype=float)
    U = np.array(U, dtype=float)
    T, h = cfg.run.T, params.h
    drift = model.drift
    kick = model.b_norm > 0
    hits: list = []
    wanted = {round(t / h): t for t in _output_times(cfg)}
    snapshots = {}
    if 0 in wanted:
        snapshots[wanted[0]] = (X.copy(), U.copy())
    n_steps = max(1, math.ceil(T / h - 1e-12))
    for k in range(n_steps):
        t0 = k * h
        dt = min(h, T - t0)
        if kick:
            U = U + dt * drift(U)
        X, U = ensemble_confined_step(
            domain, X, U, k, params, model.sigma, cfg.run.seed,
            h=dt, time_offset=t0, hit_sink=hits, threads=threads,
        )
        if (k + 1) in wanted:
            snapshots[wanted[k + 1]] = (X.copy(), U.copy())
    return snapshots, hits, domain.dimension


def _run_simulate_linear(cfg: ScenarioConfig, out_dir: Path, threads: int):
    snapshots, hits, dimension = _march_linear(cfg, threads)
    _write_paths_csv(out_dir / "paths.csv", snapshots, dimension)
    _write_hits_csv(out_dir / "hits.csv", hits, dimension)
    return True, None


def _run_simulate_mckean(cfg: ScenarioConfig, out_dir: Path, threads: int):
    domain = build_domain(cfg)
    result = run_mckean(
        domain,
        lambda n, seed: sample_initial(cfg, n, seed),
        build_model(cfg),
        build_estimator(cfg),
        cfg.run.T,
        build_step_params(cfg),
        cfg.run.N,
        cfg.run.seed,
        snapshot_times=tuple(_output_times(cfg)),
        threads=threads,
    )
    snapshots = {
        t: (ens.positions, ens.velocities) for t, ens in result.snapshots.items()
    }
    _write_paths_csv(out_dir / "paths.csv", snapshots, domain.dimension)
    _write_hits_csv(out_dir / "hits.csv", result.hits, domain.dimension)
    if result.drift_fields:
        _write_drift_csv(out_dir / "drift.csv", result.drift_fields)
    return True, None


def _solve_picard(cfg: ScenarioConfig):
    """Shared nonlinear solve; returns (solution, report, grid, envelopes)."""
    lower, upper = build_envelopes(cfg)
    grid = build_grid(cfg, upper)
    rho0 = initial_density(cfg, grid)
    model = build_model(cfg)
    weight = build_weight(cfg)
    try:
        result = picard_nonlinear(
            grid, rho0, model,
            tol=cfg.picard.tol, max_iter=cfg.picard.max_iter,
            weight=weight, lower=lower, upper=upper,
        )
        solution, report = result.solution, result.report
    except NotConverged as exc:
        solution, report = exc.history, exc.report
    return solution, report, grid, lower, upper


def _run_solve_vfp(cfg: ScenarioConfig, out_dir: Path, threads: int):
    solution, report, grid, lower, upper = _solve_picard(cfg)
    times = _output_times(cfg)
    _write_field_csv(out_dir / "field.csv", solution, times)
    _write_traces_csv(out_dir / "traces.csv", solution, times)
    payload = report.to_dict()
    payload["grid"] = {
        "n_x": grid.n_x,
        "n_u": grid.n_u,
        "v_max": grid.v_max,
        "dt": grid.dt,
        "n_steps": grid.n_steps,
    }
    _write_json(out_dir / "picard.json", payload)
    return bool(report.converged), report


def _grid_tolerance(grid, upper) -> float:
    """Resolution-scaled slack: 10 (dx + du + dt) times the envelope peak."""
    peak = 0.0
    for t in np.linspace(0.0, grid.horizon, 9):
        peak = max(peak, float(maxwellian_eval(upper, float(t), grid.u).max()))
    return 10.0 * (grid.dx + grid.du + grid.dt) * peak


def _block_edge(n: int, target: int = 8) -> int:
    b = max(1, n // target)
    while n % b:
        b -= 1
    return b


def _run_validate(cfg: ScenarioConfig, out_dir: Path, threads: int):
    """Grid and particle runs cross-checked into one pass/fail report."""
    solution, picard_report, grid, lower, upper = _solve_picard(cfg)
    model = build_model(cfg)
    tol_grid = _grid_tolerance(grid, upper)
    report = DiagnosticsReport(scenario=cfg.scenario)

    report.add(
        "picard_converged",
        float(picard_report.iterates),
        passed=bool(picard_report.converged),
        detail=f"{picard_report.iterates} sweeps, tol {cfg.picard.tol:g}",
    )
    trace_fields = [solution.trace(k) for k in range(len(solution.times))]
    report.add(
        "no_permeability_residual",
        no_permeability_residual(trace_fields, grid),
        tolerance=NO_PERMEABILITY_TOL,
    )
    report.add(
        "energy_residual",
        solution.energy_residual(model.sigma),
        tolerance=max(1e-3, ENERGY_RESIDUAL_SCALE * (grid.dx + grid.du + grid.dt)),
        detail="weighted L2 balance over the full horizon",
    )
    sandwich = sandwich_check(solution, None, None, lower, upper, tol=tol_grid)
    report.add(
        "sandwich_violation",
        sandwich.absolute,
        tolerance=tol_grid,
        detail=f"relative {sandwich.relative:.3e} of envelope peak",
    )

    psi = initial_density(cfg, grid)
    psi = 0.5 * (psi + psi[:, ::-1])  # even in u: wall-compatible start
    semi = semigroup_l2_check(psi, grid, model.sigma)
    report.add(
        "semigroup_l2_margin",
        semi.margin,
        passed=semi.margin >= -tol_grid,
        detail=f"split residual {semi.split_residual:.3e}",
    )

    particles = run_mckean(
        build_domain(cfg),
        lambda n, seed: sample_initial(cfg, n, seed),
        model,
        build_estimator(cfg),
        cfg.run.T,
        build_step_params(cfg),
        cfg.run.N,
        cfg.run.seed,
        threads=threads,
    )
    block = (_block_edge(grid.n_x), _block_edge(grid.n_u))
    distance = mc_grid_distance(particles.final, solution.field(-1), grid, block=block)
    rho_T = solution.fields[-1] * grid.dx * grid.du
    coarse = rho_T.reshape(
        grid.n_x // block[0], block[0], grid.n_u // block[1], block[1]
    ).sum(axis=(1, 3))
    total = float(coarse.sum())
    noise = 0.0
    if total > 0:
        p = np.clip(coarse / total, 0.0, None)
        noise = math.sqrt(2.0 / (math.pi * cfg.run.N)) * float(np.sqrt(p).sum())
    report.add(
        "mc_grid_L1",
        distance,
        tolerance=0.05 + 3.0 * noise,
        detail=f"N={cfg.run.N}, block={block}, sampling floor {noise:.3e}",
    )

    domain = build_domain(cfg)
    detail = "no wall hits"
    hit_passed = True
    if particles.hits:
        flux = flux_balance_particles(particles.hits, domain)
        shell = shell_flux_estimate(
            domain, [(particles.final.positions, particles.final.velocities)]
        )
        detail = f"antisymmetry {flux.antisymmetry_residual:.3e}"
        hit_passed = flux.antisymmetry_residual <= FLUX_ANTISYMMETRY_TOL
        if not shell.skipped and shell.stderr > 0:
            z = abs(shell.mean) / shell.stderr
            detail += f", near-wall flux z={z:.2f} ({shell.count} states)"
            hit_passed = hit_passed and z <= SHELL_FLUX_SIGMAS
    report.add(
        "hit_count_stats",
        float(len(particles.hits)),
        passed=hit_passed,
        detail=detail,
    )

    _write_json(out_dir / "diagnostics.json", report.to_dict())
    print(report.table())
    return report.passed, report


_RUNNERS = {
    "simulate-linear": _run_simulate_linear,
    "simulate-mckean": _run_simulate_mckean,
    "solve-vfp": _run_solve_vfp,
    "validate": _run_validate,
}


def run_scenario(cfg: ScenarioConfig, subcommand: str,
                 out_dir=None, threads: int = 1) -> OutputBundle:
    """Run one subcommand and write its output bundle.

    Bundle bytes depend only on (canonical config, seed, subcommand); threads
    caps worker threads without entering any result.
    """
    if subcommand not in _RUNNERS:
        raise ValueError(f"unknown subcommand: {subcommand!r}")
    out = Path(out_dir) if out_dir is not None else Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(serialize_config(cfg), encoding="utf-8")
    passed, report = _RUNNERS[subcommand](cfg, out, max(1, int(threads)))
    return _finalize_bundle(out, cfg, subcommand, passed, report)


# --- argument handling ---------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 64
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="speckin",
        description="Confined kinetic Langevin simulation and verification toolkit.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_text in (
        ("simulate-linear", "independent confined Langevin paths"),
        ("simulate-mckean", "interacting ensemble with empirical-law drift"),
        ("solve-vfp", "nonlinear kinetic Fokker-Planck solve on a grid"),
        ("validate", "cross-check grid and particle runs into a report"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", metavar="PATH", default=None,
                         help="scenario JSON (defaults apply when omitted)")
        cmd.add_argument("--seed", metavar="U64", type=int, default=None,
                         help="override run.seed")
        cmd.add_argument("--out", metavar="DIR", default=None,
                         help="override run.out bundle directory")
        cmd.add_argument("--threads", metavar="N", type=int, default=1,
                         help="cap worker threads (never changes results)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("usage error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed < (1 << 64):
        print("usage error: --seed must lie in [0, 2**64)", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
        # --out stays outside the config so bundle bytes never depend on
        # where the bundle lands
        bundle = run_scenario(cfg, args.command, out_dir=args.out, threads=args.threads)
    except SpeckinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"bundle: {bundle.path}")
    if not bundle.passed:
        print("diagnostics failed", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
