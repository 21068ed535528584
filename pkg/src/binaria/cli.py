"""Scenario orchestration: config ingestion, runs, and artifact export.

Subcommands: single-star, binary, wasserstein, rearrange, audit.
Configs are flat text with dotted keys::

    scenario = binary
    eos.kind = polytrope
    eos.K = 1.0
    eos.gamma = 2.0
    problem.m = 0.5
    problem.J = 1.12

Every run that parses writes a report.json (status "failed" reports still
land on disk), a summary.csv of scalars with units, field files in the
raw+JSON-sidecar format, and the scenario's figures.  Exit status is 0 iff
the scenario's audit passes.  Physical quantities are in code units
(G = 1, total mass 1); `scale.mass`/`scale.length` only relabel reports.

The --deterministic flag pins the worker count to one and strips wall-clock
fields from the report so reruns are byte-identical on the same machine.
Env var BINARIA_THREADS caps data-parallel width otherwise.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plots, suites
from .diagnostics import (el_residual, lane_emden_reference, multiplier_audit)
from .eos import Polytrope, Tabulated, load_tabulated_csv
from .errors import BinariaError, ConfigurationError
from .fields import DensityField, Grid3, load_field, save_field
from .solver import (SolverConfig, binary_grid, build_problem,
                     single_star_grid, solve, solve_single_star)
from .wasserstein import (DiscreteMeasure, check_lemma_properties,
                          rearrange_to_bounded, winf_distance)

SCENARIOS = ("single-star", "binary", "wasserstein", "rearrange", "audit")

_REQUIRED = object()


def _bool(s):
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default_or_REQUIRED, validator, scenarios)
_ALL = set(SCENARIOS)
_SOLVER_SCENARIOS = {"single-star", "binary"}
_EOS_SCENARIOS = {"single-star", "binary"}

KEYSPECS = {
    "scenario": (str, None, lambda v: v in SCENARIOS or f"must be one of {SCENARIOS}", _ALL),
    "output.dir": (str, "out", None, _ALL),
    "deterministic": (_bool, False, None, _ALL),
    "scale.mass": (float, 1.0, lambda v: v > 0 or "must be > 0", _ALL),
    "scale.length": (float, 1.0, lambda v: v > 0 or "must be > 0", _ALL),

    "eos.kind": (str, "polytrope",
                 lambda v: v in ("polytrope", "tabulated")
                 or "must be polytrope or tabulated", _EOS_SCENARIOS),
    "eos.K": (float, 1.0, lambda v: v > 0 or "must be > 0", _EOS_SCENARIOS),
    "eos.gamma": (float, 2.0,
                  lambda v: v > 4.0 / 3.0 or "gamma > 4/3 required",
                  _EOS_SCENARIOS),
    "eos.table": (str, None, None, _EOS_SCENARIOS),
    "eos.rho_ceiling": (float, 1e6, lambda v: v > 0 or "must be > 0",
                        _EOS_SCENARIOS),

    "problem.mass": (float, 1.0, lambda v: v > 0 or "must be > 0",
                     {"single-star"}),
    "problem.m": (float, _REQUIRED,
                  lambda v: 0.0 < v < 1.0 or "m must lie in (0,1)", {"binary"}),
    "problem.J": (float, _REQUIRED, lambda v: v > 0 or "J must be > 0",
                  {"binary"}),

    "grid.n": (int, 64, lambda v: v >= 8 or "need >= 8 cells", {"single-star"}),
    "grid.half_extent": (float, 2.0, lambda v: v > 0 or "must be > 0",
                         {"single-star"}),
    "grid.nx": (int, 96, lambda v: v >= 8 or "need >= 8 cells", {"binary"}),
    "grid.ny": (int, 64, lambda v: v >= 8 or "need >= 8 cells", {"binary"}),
    "grid.nz": (int, 64, lambda v: v >= 8 or "need >= 8 cells", {"binary"}),
    "grid.pad": (float, 1.10, lambda v: v >= 1.0 or "must be >= 1", {"binary"}),
    "grid.spacing": (float, None, lambda v: v > 0 or "must be > 0", {"binary"}),

    "solver.theta": (float, 0.5,
                     lambda v: 0.0 < v <= 1.0 or "theta must be in (0,1]",
                     _SOLVER_SCENARIOS),
    "solver.max_iters": (int, 500, lambda v: v >= 1 or "must be >= 1",
                         _SOLVER_SCENARIOS),
    "solver.tol_el": (float, 1e-6, lambda v: v > 0 or "must be > 0",
                      _SOLVER_SCENARIOS),
    "solver.tol_mass": (float, 1e-10, lambda v: v > 0 or "must be > 0",
                        _SOLVER_SCENARIOS),
    "solver.initial_guess": (str, "parabolic",
                             lambda v: v in ("parabolic", "uniform")
                             or "must be parabolic or uniform",
                             _SOLVER_SCENARIOS),
    "solver.domain_radius": (float, None, lambda v: v > 0 or "must be > 0",
                             {"single-star"}),
    "report.lane_emden": (_bool, True, None, {"single-star"}),

    "wasserstein.cloud_a": (str, None, None, {"wasserstein"}),
    "wasserstein.cloud_b": (str, None, None, {"wasserstein"}),
    "wasserstein.n_atoms": (int, 32, lambda v: v >= 1 or "must be >= 1",
                            {"wasserstein"}),
    "wasserstein.seed": (int, 0, None, {"wasserstein"}),
    "wasserstein.delta": (float, 0.5, lambda v: v > 0 or "must be > 0",
                          {"wasserstein"}),

    "rearrange.field": (str, None, None, {"rearrange"}),
    "rearrange.epsilon": (float, None, lambda v: v > 0 or "must be > 0",
                          {"rearrange"}),
    "rearrange.seed": (int, 0, None, {"rearrange"}),
    "rearrange.n": (int, 24, lambda v: v >= 8 or "need >= 8 cells",
                    {"rearrange"}),
    "rearrange.spacing": (float, 0.1, lambda v: v > 0 or "must be > 0",
                          {"rearrange"}),
    "rearrange.n_atoms": (int, 256, lambda v: v >= 0 or "must be >= 0",
                          {"rearrange"}),

    "audit.seed": (int, 0, None, {"audit"}),
}


@dataclass
class RunConfig:
    """Validated scenario configuration with defaults filled."""

    scenario: str
    values: dict
    config_dir: Path

    def __getitem__(self, key):
        return self.values[key]

    def echo(self):
        lines = [f"scenario = {self.scenario}"]
        lines += [f"{k} = {v}" for k, v in sorted(self.values.items())
                  if k != "scenario" and v is not None]
        return "\n".join(lines)


def _read_pairs(path):
    pairs = []
    errors = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, value = line.split("=", 1)
        pairs.append((lineno, key.strip(), value.strip()))
    return pairs, errors


def parse_config(path, scenario: str | None = None) -> RunConfig:
    """Validate a dotted-key config file; all violations reported at once.

    `scenario` (from the subcommand) must agree with the file's scenario key
    when both are present.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    pairs, errors = _read_pairs(path)

    raw = {}
    for lineno, key, value in pairs:
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)

    file_scenario = raw.pop("scenario", (0, None))[1]
    if file_scenario is not None and file_scenario not in SCENARIOS:
        errors.append(f"scenario must be one of {SCENARIOS}, got {file_scenario!r}")
        file_scenario = None
    if scenario is None:
        scenario = file_scenario
    elif file_scenario is not None and file_scenario != scenario:
        errors.append(f"config says scenario = {file_scenario!r} but the "
                      f"subcommand is {scenario!r}")
    if scenario is None:
        errors.append("no scenario: pass a subcommand or a scenario key")
        raise ConfigurationError("invalid configuration:\n  "
                                 + "\n  ".join(errors))

    values = {}
    for key, (lineno, text) in raw.items():
        spec = KEYSPECS.get(key)
        if spec is None:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        parser, _default, validator, scopes = spec
        if scenario not in scopes:
            errors.append(f"line {lineno}: key {key!r} does not apply to "
                          f"scenario {scenario!r}")
            continue
        try:
            v = parser(text)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key} = {text!r}: {exc}")
            continue
        if validator is not None:
            verdict = validator(v)
            if verdict is not True:
                errors.append(f"line {lineno}: {key} = {text!r}: {verdict}")
                continue
        values[key] = v

    for key, (parser, default, validator, scopes) in KEYSPECS.items():
        if key == "scenario" or scenario not in scopes or key in values:
            continue
        if default is _REQUIRED:
            if key not in raw:  # present-but-invalid is already reported
                errors.append(f"missing required key {key!r} for scenario "
                              f"{scenario!r}")
        else:
            values[key] = default

    if values.get("eos.kind") == "tabulated" and not values.get("eos.table"):
        errors.append("eos.kind = tabulated requires eos.table = <csv path>")

    if errors:
        raise ConfigurationError("invalid configuration:\n  "
                                 + "\n  ".join(errors))
    return RunConfig(scenario=scenario, values=values,
                     config_dir=path.resolve().parent)


def _build_eos(config: RunConfig):
    if config["eos.kind"] == "polytrope":
        return Polytrope(K=config["eos.K"], gamma=config["eos.gamma"])
    table = Path(config["eos.table"])
    if not table.is_absolute():
        table = config.config_dir / table
    return load_tabulated_csv(table, rho_ceiling=config["eos.rho_ceiling"])


def _workers(deterministic):
    if deterministic:
        return 1
    try:
        return max(1, min(int(os.environ.get("BINARIA_THREADS", "1")),
                          os.cpu_count() or 1))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# summary export

def export_summary(solution, path=None):
    """Scalar rows (name, value, units) for one solution; optionally written
    as CSV.  The exported energies reproduce E_J = U - G/2 + T_J exactly
    because the stored floats are written in full repr precision.
    """
    led = solution.ledger
    rows = [
        ("status", solution.status, "-"),
        ("iterations", solution.iterations, "-"),
        ("mass", led.mass, "mass"),
        ("U", led.internal, "energy"),
        ("G", led.interaction, "energy"),
        ("T_J", led.rotational, "energy"),
        ("E_J", led.total, "energy"),
        ("I", led.moment_of_inertia, "mass*length^2"),
        ("omega", led.omega, "1/time"),
        ("com_x", led.center_of_mass[0], "length"),
        ("com_y", led.center_of_mass[1], "length"),
        ("com_z", led.center_of_mass[2], "length"),
        ("el_residual_sup", solution.el_residual_sup, "energy/mass"),
        ("ep_residual_sup", solution.ep_residual_sup, "force density"),
        ("support_margin", solution.support_margin, "length"),
        ("n_components", solution.n_components, "-"),
    ]
    for k, lam in enumerate(solution.lambda_i):
        rows.append((f"lambda_{k}", lam, "energy/mass"))
    for k, m in enumerate(solution.component_masses):
        rows.append((f"component_mass_{k}", m, "mass"))
    if solution.problem is not None:
        rows += [
            ("m", solution.problem.m, "mass"),
            ("J", solution.problem.J, "mass*length^2/time"),
            ("eta", solution.problem.eta, "length"),
            ("dist", solution.problem.separation, "length"),
            ("diam", solution.problem.union_diameter, "length"),
            ("ball_radius", solution.problem.ball_radius, "length"),
        ]
    else:
        rows.append(("total_mass_target", solution.total_mass_target, "mass"))
    if path is not None:
        with open(path, "w") as fh:
            fh.write("name,value,units\n")
            for name, value, unit in rows:
                fh.write(f"{name},{value!r},{unit}\n")
    return rows


def _write_report(out_dir: Path, payload: dict, deterministic: bool):
    if deterministic:
        payload.pop("wall_time_s", None)
    text = json.dumps(payload, sort_keys=True, indent=1, default=_json_default)
    (out_dir / "report.json").write_text(text + "\n")
    return out_dir / "report.json"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _shell_profile(rho: DensityField, r_max: float, n_bins: int = 48):
    grid = rho.grid
    r = np.sqrt(grid.radius2((0.0, 0.0, 0.0))).ravel()
    v = rho.values.ravel()
    edges = np.linspace(0.0, r_max, n_bins + 1)
    idx = np.digitize(r, edges) - 1
    rs, vs = [], []
    for b in range(n_bins):
        sel = idx == b
        if sel.any():
            rs.append(float(r[sel].mean()))
            vs.append(float(v[sel].mean()))
    return np.array(rs), np.array(vs)


# ---------------------------------------------------------------------------
# scenario runners

def _run_single_star(config, out_dir, deterministic, verbose):
    eos_obj = _build_eos(config)
    grid = single_star_grid(n=config["grid.n"],
                            half_extent=config["grid.half_extent"])
    scfg = SolverConfig(grid=grid, theta=config["solver.theta"],
                        max_iters=config["solver.max_iters"],
                        tol_el=config["solver.tol_el"],
                        tol_mass=config["solver.tol_mass"],
                        initial_guess_kind=config["solver.initial_guess"],
                        domain_radius=config["solver.domain_radius"],
                        workers=_workers(deterministic))
    sol = solve_single_star(eos_obj, config["problem.mass"], scfg)

    save_field(sol.rho, out_dir / "density")
    export_summary(sol, out_dir / "summary.csv")
    plots.density_slice_figure(sol.rho, out_dir / "density_slice.png")
    plots.energy_trace_figure(sol.energy_trace, out_dir / "energy_trace.png")

    audit = multiplier_audit(eos_obj, sol, tol_el=scfg.tol_el,
                             workers=scfg.workers)
    payload = {
        "scenario": "single-star",
        "solution": sol.to_dict(),
        "multiplier_audit": audit,
        "e0": sol.ledger.total,
    }

    if config["report.lane_emden"] and config["eos.kind"] == "polytrope":
        prof = lane_emden_reference(config["eos.gamma"], config["eos.K"],
                                    config["problem.mass"])
        rs, vs = _shell_profile(sol.rho, prof.r[-1] * 1.05)
        ref = prof.interp_rho(rs)
        sup_err = float(np.max(np.abs(vs - ref)) / prof.rho_c)
        with open(out_dir / "lane_emden.csv", "w") as fh:
            fh.write("r,rho_numeric,rho_reference,abs_err\n")
            for r, v, q in zip(rs, vs, ref):
                fh.write(f"{r!r},{v!r},{q!r},{abs(v - q)!r}\n")
        plots.radial_profile_figure(rs, vs, prof,
                                    out_dir / "radial_profile.png")
        payload["lane_emden"] = {"sup_profile_error_rel_central": sup_err,
                                 "xi1": prof.xi1, "rho_c": prof.rho_c,
                                 "radius": float(prof.r[-1])}

    ok = sol.status == "converged" and audit["passed"]
    return payload, ok


def _run_binary(config, out_dir, deterministic, verbose):
    eos_obj = _build_eos(config)
    problem = build_problem(config["problem.m"], config["problem.J"])
    dims = (config["grid.nx"], config["grid.ny"], config["grid.nz"])
    if config["grid.spacing"] is not None:
        grid = Grid3.centered(dims, config["grid.spacing"])
    else:
        grid = binary_grid(problem, dims=dims, pad=config["grid.pad"])
    scfg = SolverConfig(grid=grid, theta=config["solver.theta"],
                        max_iters=config["solver.max_iters"],
                        tol_el=config["solver.tol_el"],
                        tol_mass=config["solver.tol_mass"],
                        initial_guess_kind=config["solver.initial_guess"],
                        workers=_workers(deterministic))
    sol = solve(eos_obj, problem, scfg)

    save_field(sol.rho, out_dir / "density")
    export_summary(sol, out_dir / "summary.csv")
    plots.density_slice_figure(sol.rho, out_dir / "density_slice.png")
    plots.energy_trace_figure(sol.energy_trace, out_dir / "energy_trace.png")
    audit = multiplier_audit(eos_obj, sol, tol_el=scfg.tol_el,
                             workers=scfg.workers)
    payload = {
        "scenario": "binary",
        "solution": sol.to_dict(),
        "multiplier_audit": audit,
    }
    ok = sol.status == "converged" and audit["passed"]
    return payload, ok


def _load_or_generate_cloud(config, key, rng, n):
    path = config[key]
    if path is not None:
        p = Path(path)
        if not p.is_absolute():
            p = config.config_dir / p
        return DiscreteMeasure.from_csv(p)
    return DiscreteMeasure(rng.normal(size=(n, 3)))


def _run_wasserstein(config, out_dir, deterministic, verbose):
    rng = np.random.default_rng(config["wasserstein.seed"])
    n = config["wasserstein.n_atoms"]
    a = _load_or_generate_cloud(config, "wasserstein.cloud_a", rng, n)
    b = _load_or_generate_cloud(config, "wasserstein.cloud_b", rng, n)
    result = winf_distance(a, b)
    report = check_lemma_properties(a, b, config["wasserstein.delta"])
    a.to_csv(out_dir / "cloud_a.csv")
    b.to_csv(out_dir / "cloud_b.csv")
    plots.cloud_figure(a, b, result.matching, out_dir / "matching.png")
    payload = {
        "scenario": "wasserstein",
        "n_atoms": a.n,
        "distance": result.distance,
        "certificate_max_distance": result.certificate_max_distance,
        "properties": report.entries,
    }
    return payload, report.all_passed()


def _spiked_field(rng, n, spacing):
    g = Grid3.centered((n, n, n), spacing=spacing)
    vals = np.zeros(g.dims)
    core = slice(n // 4, 3 * n // 4)
    vals[core, core, core] = rng.random((n // 2, n // 2, n // 2)) * 0.8
    V4 = (4 * spacing) ** 3 / 4.0
    spike_value = 0.9 * V4 / g.cell_volume
    i = n // 2
    vals[i, i, i] = spike_value
    return DensityField(g, vals)


def _run_rearrange(config, out_dir, deterministic, verbose):
    if config["rearrange.field"] is not None:
        p = Path(config["rearrange.field"])
        if not p.is_absolute():
            p = config.config_dir / p
        rho = load_field(p)
    else:
        rng = np.random.default_rng(config["rearrange.seed"])
        rho = _spiked_field(rng, config["rearrange.n"],
                            config["rearrange.spacing"])
    epsilon = config["rearrange.epsilon"]
    if epsilon is None:
        epsilon = 8.0 * np.sqrt(3.0) * rho.grid.spacing
    sigma, R, audit = rearrange_to_bounded(rho, epsilon,
                                           n_atoms=config["rearrange.n_atoms"])
    save_field(rho, out_dir / "input")
    save_field(sigma, out_dir / "capped")
    plots.rearrange_figure(rho, sigma, out_dir / "rearrange.png")
    payload = {"scenario": "rearrange", "audit": audit.to_dict()}
    from .fields import mass as field_mass
    ok = (audit.sup_sigma <= audit.bound
          and audit.global_mass_delta <= 1e-12 * field_mass(rho)
          and audit.max_cube_mass_delta <= 1e-12
          and (audit.distance_within_epsilon is not False))
    return payload, ok


def _run_audit(config, out_dir, deterministic, verbose):
    results, passed = suites.run_all_suites(seed=config["audit.seed"])
    plots.suite_figure(results, out_dir / "suites.png")
    with open(out_dir / "summary.csv", "w") as fh:
        fh.write("name,value,units\n")
        for r in results:
            for c in r["checks"]:
                fh.write(f"{r['suite']}.{c['name']},{int(c['passed'])},bool\n")
    payload = {"scenario": "audit", "suites": results, "passed": passed}
    return payload, passed


_RUNNERS = {
    "single-star": _run_single_star,
    "binary": _run_binary,
    "wasserstein": _run_wasserstein,
    "rearrange": _run_rearrange,
    "audit": _run_audit,
}


def run(config: RunConfig, out_dir=None, deterministic=None,
        verbose: bool = False) -> int:
    """Execute a validated config; artifacts land in the output directory.

    Returns the process exit status: 0 iff the scenario's audit passed.
    Solver and diagnostic failures still produce a report.json with
    status "failed".
    """
    if deterministic is None:
        deterministic = config.values.get("deterministic", False)
    out = Path(out_dir) if out_dir is not None else Path(config["output.dir"])
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)

    if verbose:
        print(config.echo())

    import time
    t0 = time.monotonic()
    try:
        payload, ok = _RUNNERS[config.scenario](config, out, deterministic,
                                                verbose)
        payload["status"] = "passed" if ok else "failed"
        payload["config"] = {k: v for k, v in sorted(config.values.items())
                             if v is not None}
        payload["deterministic"] = deterministic
        payload["wall_time_s"] = time.monotonic() - t0
        _write_report(out, payload, deterministic)
        if verbose:
            print(f"report: {out / 'report.json'} ({payload['status']})")
        return 0 if ok else 1
    except BinariaError as exc:
        payload = {
            "scenario": config.scenario,
            "status": "failed",
            "error": {"type": type(exc).__name__, "message": str(exc)},
            "config": {k: v for k, v in sorted(config.values.items())
                       if v is not None},
            "deterministic": deterministic,
            "wall_time_s": time.monotonic() - t0,
        }
        _write_report(out, payload, deterministic)
        if verbose:
            print(f"error: {exc}", file=sys.stderr)
        return 2


def report_hash(out_dir) -> str:
    """SHA-256 over report.json; the determinism contract's witness."""
    return hashlib.sha256((Path(out_dir) / "report.json").read_bytes()).hexdigest()


def build_arg_parser():
    parser = argparse.ArgumentParser(
        prog="binaria",
        description="Rotating self-gravitating equilibria: solve, verify, export.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", required=(name != "audit"),
                       help="path to the dotted-key config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="byte-identical artifacts across reruns")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        if args.config is not None:
            config = parse_config(args.config, scenario=args.command)
        else:
            config = RunConfig(scenario=args.command,
                               values={k: spec[1] for k, spec in KEYSPECS.items()
                                       if args.command in spec[3]
                                       and spec[1] is not _REQUIRED
                                       and k != "scenario"},
                               config_dir=Path.cwd())
    except ConfigurationError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    deterministic = args.deterministic or config.values.get("deterministic",
                                                            False)
    return run(config, out_dir=args.out, deterministic=deterministic,
               verbose=args.verbose)


if __name__ == "__main__":
    raise SystemExit(main())
