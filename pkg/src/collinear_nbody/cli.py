"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 input error,
3 non-convergence, 4 non-regularizable collision event.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
from pathlib import Path

import numpy as np

from .core import from_sorted_frame, validate_spec
from .errors import (
    ConfigError,
    NBodyError,
    NonRegularizableEvent,
    NotConverged,
    SolutionFormatError,
    SpecError,
)
from .fileio import (
    SolutionFile,
    dumps,
    load_config,
    load_solution,
    report_to_dict,
    save_solution,
    write_atomic,
)
from .integrator import BOUNCE, REGULARIZED, extend_by_symmetry, periodicity_check
from .minimizer import minimize
from .plotting import orbit_figure, save_figure
from .verifier import VerifierOptions, full_report

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_EVENT = 4

EXPORT_FORMATS = ("csv", "plotdata")


class InputError(Exception):
    """Bad command-line arguments (exit 2)."""


def _stem(path: Path) -> Path:
    name = path.name
    for suffix in (".solution.json", ".json", ".cfg", ".ini"):
        if name.endswith(suffix):
            return path.with_name(name[: -len(suffix)])
    return path.with_name(path.stem)


def _fmt(x) -> str:
    return repr(float(x))


def _labelled(rows, sigma):
    """Sorted-frame rows reordered to original body labels."""
    return np.array(from_sorted_frame(list(rows), sigma))


# ------------------------------------------------------------------- solve


def _solve_spec(spec, config, initial_path=None):
    return minimize(spec, config.optimizer, initial_path=initial_path)


def solve_summary(sol: SolutionFile) -> str:
    spec = sol.spec
    c = sol.convergence
    lines = [
        f"bodies: n={spec.n} masses={list(spec.masses)} sigma={list(spec.sigma)}",
        f"half period T={spec.half_period} symmetric={spec.symmetric_mode}",
        f"action: total={_fmt(sol.action.total)} kinetic={_fmt(sol.action.kinetic_part)} potential={_fmt(sol.action.potential_part)}",
    ]
    for s in c["stages"]:
        lines.append(
            f"  stage M={s['M']}: action={_fmt(s['action'])} gradient={s['gradient_norm']:.3e} "
            f"iterations={s['iterations']} converged={s['converged']}"
        )
    lines.append(f"converged: {c['converged']} (gradient norm {c['gradient_norm']:.3e})")
    return "\n".join(lines)


def cmd_solve(args) -> int:
    config = load_config(args.config)
    out = Path(args.out) if args.out else (config.solution_path or _stem(Path(args.config)).with_suffix(".solution.json"))
    result = _solve_spec(config.spec, config)
    sol = SolutionFile.from_result(config.spec, result, config.optimizer, config.integrator)
    save_solution(sol, out)
    print(solve_summary(sol))
    print(f"solution written to {out}")
    if not result.converged:
        print("error: minimizer did not reach the gradient tolerance", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


# ------------------------------------------------------------------ verify


def _verify(sol: SolutionFile):
    opts = VerifierOptions(integrator=sol.integrator)
    return full_report(sol.path, sol.spec, opts, coarse=sol.coarse)


def report_lines(report) -> list:
    lines = []
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{status} {c.name}: margin={c.margin:.3e} tolerance={c.tolerance:.1e}")
    return lines


def cmd_verify(args) -> int:
    sol_path = Path(args.solution)
    sol = load_solution(sol_path)
    report = _verify(sol)
    out = Path(args.out) if args.out else _stem(sol_path).with_suffix(".report.json")
    write_atomic(out, dumps(report_to_dict(report, sol)))
    for line in report_lines(report):
        print(line)
    print(f"report written to {out}")
    if not report.passed:
        print("failing checks: " + ", ".join(report.failing()), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# --------------------------------------------------------------- integrate


def trajectory_csv(times, positions, velocities, sigma) -> str:
    n = positions.shape[0]
    x = _labelled(positions, sigma)
    v = _labelled(velocities, sigma)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x_{i}" for i in range(1, n + 1)] + [f"v_{i}" for i in range(1, n + 1)])
    for k, t in enumerate(times):
        w.writerow([_fmt(t)] + [_fmt(val) for val in x[:, k]] + [_fmt(val) for val in v[:, k]])
    return buf.getvalue()


def _event_dict(ev) -> dict:
    return {
        "time": ev.time,
        "pairs": [list(p) for p in ev.pairs],
        "pre": [dataclasses.asdict(p) for p in ev.pre],
        "post": [dataclasses.asdict(p) for p in ev.post],
        "energy_before": ev.energy_before,
        "energy_after": ev.energy_after,
        "mode": ev.mode,
        "switch_radius": ev.switch_radius,
    }


def cmd_integrate(args) -> int:
    sol_path = Path(args.solution)
    sol = load_solution(sol_path)
    if not args.periods > 0:
        raise InputError(f"--periods must be positive, got {args.periods}")
    opts = dataclasses.replace(sol.integrator, collision_mode=args.mode)
    tolerance = args.tolerance if args.tolerance is not None else 1e-4 * max(1.0, args.periods)
    try:
        rep = periodicity_check(sol.path, sol.spec.sorted_masses, opts, periods=args.periods, coarse=sol.coarse)
    except NonRegularizableEvent as exc:
        print(f"error: non-regularizable event at t={exc.time!r}: {exc}", file=sys.stderr)
        return EXIT_EVENT
    traj = rep.trajectory
    prefix = Path(args.out) if args.out else _stem(sol_path).with_name(_stem(sol_path).name + f".{args.mode}")
    csv_path = prefix.with_name(prefix.name + ".trajectory.csv")
    json_path = prefix.with_name(prefix.name + ".integrate.json")
    write_atomic(csv_path, trajectory_csv(traj.times, traj.positions, traj.velocities, sol.spec.sigma))
    doc = {
        "format": "collinear-nbody-integration",
        "version": 1,
        "mode": args.mode,
        "periods": args.periods,
        "tolerance": tolerance,
        "passed": rep.defect < tolerance,
        "report": rep.as_dict(),
        "switch_radius": traj.switch_radius,
        "events": [_event_dict(ev) for ev in traj.events],
    }
    write_atomic(json_path, dumps(doc))
    print(f"mode={args.mode} periods={args.periods} events={rep.events}")
    print(f"periodicity defect={rep.defect:.3e} (position {rep.position_defect:.3e}, velocity {rep.velocity_defect:.3e}) tolerance={tolerance:.1e}")
    print(f"energy drift={rep.energy_drift:.3e}")
    print(f"trajectory written to {csv_path}")
    return EXIT_OK if rep.defect < tolerance else EXIT_VERIFY


# ------------------------------------------------------------------ export


def path_csv(sol: SolutionFile, velocities=False) -> str:
    path = sol.path
    n = path.n
    x = _labelled(path.positions, sol.spec.sigma)
    header = ["t"] + [f"x_{i}" for i in range(1, n + 1)]
    if velocities:
        v = _labelled(np.gradient(path.positions, path.times, axis=1, edge_order=2), sol.spec.sigma)
        header += [f"v_{i}" for i in range(1, n + 1)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k, t in enumerate(path.times):
        row = [_fmt(t)] + [_fmt(val) for val in x[:, k]]
        if velocities:
            row += [_fmt(val) for val in v[:, k]]
        w.writerow(row)
    return buf.getvalue()


def path_plotdata(sol: SolutionFile) -> str:
    """One whitespace-separated ``t x`` block per body over the full period."""
    table = extend_by_symmetry(sol.path)
    x = _labelled(table.positions, sol.spec.sigma)
    lines = [f"# n={sol.spec.n} T={_fmt(sol.spec.half_period)} period={_fmt(table.times[-1])}"]
    for i, row in enumerate(x, start=1):
        lines.append(f"# body {i} mass {_fmt(sol.spec.masses[i - 1])}")
        lines.append("t x")
        lines.extend(f"{_fmt(t)} {_fmt(val)}" for t, val in zip(table.times, row))
        lines.append("")
        lines.append("")
    return "\n".join(lines)


def export_figure(sol: SolutionFile, path) -> Path:
    table = extend_by_symmetry(sol.path)
    x = _labelled(table.positions, sol.spec.sigma)
    masses = ", ".join(f"{m:g}" for m in sol.spec.masses)
    fig = orbit_figure(
        table.times,
        x,
        labels=[f"body {i}" for i in range(1, sol.spec.n + 1)],
        title=f"n={sol.spec.n}, m=({masses})",
        half_period=sol.spec.half_period,
    )
    return save_figure(fig, path)


def cmd_export(args) -> int:
    if args.format not in EXPORT_FORMATS:
        raise InputError(f"unknown export format {args.format!r}; choose from {', '.join(EXPORT_FORMATS)}")
    sol_path = Path(args.solution)
    sol = load_solution(sol_path)
    prefix = Path(args.out) if args.out else _stem(sol_path)
    if args.format == "csv":
        data = prefix.with_name(prefix.name + ".csv")
        write_atomic(data, path_csv(sol, args.velocities))
    else:
        data = prefix.with_name(prefix.name + ".plotdata")
        write_atomic(data, path_plotdata(sol))
    print(f"{args.format} written to {data}")
    if not args.no_figure:
        fig = export_figure(sol, prefix.with_name(prefix.name + ".png"))
        print(f"figure written to {fig}")
    return EXIT_OK


# ------------------------------------------------------------------- sweep


def _parse_range(text):
    a, sep, b = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return float(a), float(b)
    except ValueError as exc:
        raise InputError(f"--range expects A:B, got {text!r}") from exc


def sweep_rows(config, index, values):
    """Solve and verify each mass value, warm-starting from the previous row."""
    rows = []
    previous = None
    for value in values:
        masses = list(config.spec.masses)
        masses[index - 1] = float(value)
        row = {"mass": float(value), "action": float("nan"), "converged": False, "all_checks_pass": False, "failing": "", "error": ""}
        try:
            spec = validate_spec(dataclasses.replace(config.spec, masses=tuple(masses)))
            result = _solve_spec(spec, config, initial_path=previous)
            previous = result.path
            row["action"] = result.action.total
            row["converged"] = bool(result.converged)
            report = full_report(result.path, spec, VerifierOptions(integrator=config.integrator), coarse=result.coarse_path)
            row["all_checks_pass"] = report.passed
            row["failing"] = " ".join(report.failing())
        except NBodyError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def sweep_table(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mass", "action", "converged", "all_checks_pass", "failing", "error"])
    for r in rows:
        w.writerow([_fmt(r["mass"]), _fmt(r["action"]), r["converged"], r["all_checks_pass"], r["failing"], r["error"]])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    if not 1 <= args.mass_index <= config.spec.n:
        raise InputError(f"--mass-index must lie in 1..{config.spec.n}, got {args.mass_index}")
    if args.steps < 1:
        raise InputError(f"--steps must be positive, got {args.steps}")
    a, b = _parse_range(args.range)
    if not (a > 0 and b > 0):
        raise InputError(f"mass range {args.range} must be positive")
    values = np.linspace(a, b, args.steps)
    rows = sweep_rows(config, args.mass_index, values)
    table = sweep_table(rows)
    out = Path(args.out) if args.out else _stem(Path(args.config)).with_suffix(".sweep.csv")
    write_atomic(out, table)
    sys.stdout.write(table)
    actions = [r["action"] for r in rows]
    for i in range(1, len(actions)):
        if abs(actions[i] - actions[i - 1]) > 0.1 * abs(actions[i - 1]):
            change = abs(actions[i] - actions[i - 1]) / abs(actions[i - 1])
            print(f"note: action changes by {change:.0%} between rows {i} and {i + 1} (continuity heuristic flags > 10%)")
    print(f"sweep written to {out}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_CONVERGENCE


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbody-orbits", description="Collinear periodic orbits with simultaneous binary collisions.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="minimize the action for a configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("verify", help="check a solution and write a report")
    s.add_argument("--solution", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("integrate", help="integrate a solution over whole periods")
    s.add_argument("--solution", required=True)
    s.add_argument("--periods", type=float, default=1.0)
    s.add_argument("--mode", choices=(REGULARIZED, BOUNCE), default=REGULARIZED)
    s.add_argument("--tolerance", type=float)
    s.add_argument("--out", help="output prefix")
    s.set_defaults(func=cmd_integrate)

    s = sub.add_parser("export", help="write plot-ready data and a figure")
    s.add_argument("--solution", required=True)
    s.add_argument("--format", required=True)
    s.add_argument("--velocities", action="store_true", help="add v_i columns to csv")
    s.add_argument("--no-figure", action="store_true")
    s.add_argument("--out", help="output prefix")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("sweep", help="solve across a range of one mass")
    s.add_argument("--config", required=True)
    s.add_argument("--mass-index", type=int, required=True)
    s.add_argument("--range", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError, SolutionFormatError, SpecError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except NonRegularizableEvent as exc:
        print(f"error: non-regularizable event at t={exc.time!r}: {exc}", file=sys.stderr)
        return EXIT_EVENT


if __name__ == "__main__":
    sys.exit(main())
