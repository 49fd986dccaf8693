"""Command-line front end: scenario files in, trajectory tables out.

Scenario files are TOML (schema below, validated with key-path errors on
unknown entries).  Exports are a CSV trajectory table with a fixed header
plus a JSON summary sidecar.  Exit codes: 0 Optimal, 2 Infeasible (or
Unbounded), 3 IterLimit, 4 invalid input.
"""

from __future__ import annotations

import json
import math
import sys

try:
    import tomllib
except ModuleNotFoundError:          # python < 3.11
    import tomli as tomllib

import click
import numpy as np

from .mip import MinSpeedRegion, MipSettings, RectObstacle
from .mpc import (MpcScenario, Trajectory, plan as plan_scenario,
                  receding_horizon, round_trajectory)
from .numerics import InvalidInput
from .cones import project_to_SOn
from .solver import Settings, Status

EXIT_OPTIMAL = 0
EXIT_INFEASIBLE = 2
EXIT_ITER_LIMIT = 3
EXIT_INVALID = 4

_STATUS_EXIT = {
    Status.OPTIMAL: EXIT_OPTIMAL,
    Status.INFEASIBLE: EXIT_INFEASIBLE,
    Status.UNBOUNDED: EXIT_INFEASIBLE,
    Status.ITER_LIMIT: EXIT_ITER_LIMIT,
}

_SCENARIO_KEYS = {
    "n", "order", "T", "h", "V", "R0", "s0", "W0", "p0", "goal",
    "goal_mode", "zero_terminal_velocity", "state_weight", "input_weight",
    "terminal_weight", "input_bounds", "big_M",
}
_MIN_SPEED_KEYS = {"min_det", "faces"}
_OBSTACLE_KEYS = {"x_min", "y_min", "x_max", "y_max"}
_SOLVER_KEYS = {"tol", "max_iters", "alpha"}
_MIP_KEYS = {"node_limit", "abs_gap", "rel_gap"}
_RHC_KEYS = {"lookahead", "max_steps", "capture_radius",
             "goal_center", "amplitude", "omega"}
_TOP_KEYS = {"scenario", "min_speed", "obstacles", "solver", "mip", "rhc"}


def _reject_unknown(table: dict, allowed: set, path: str):
    for key in table:
        if key not in allowed:
            raise InvalidInput(f"unknown key {path}.{key!r} in scenario file")


def load_scenario(path):
    """Parse a TOML scenario file into (MpcScenario, solver Settings,
    MipSettings, rhc dict)."""
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InvalidInput(f"cannot read scenario file {path}: {exc}")

    _reject_unknown(doc, _TOP_KEYS, path="<top>")
    raw = doc.get("scenario", {})
    _reject_unknown(raw, _SCENARIO_KEYS, path="scenario")
    kwargs = dict(raw)
    for key in ("V", "s0", "goal", "p0"):
        if key in kwargs:
            kwargs[key] = np.asarray(kwargs[key], dtype=float)
    for key in ("R0", "W0", "state_weight", "input_weight", "terminal_weight"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = np.asarray(kwargs[key], dtype=float)
    if "input_bounds" in kwargs:
        lo, hi = kwargs["input_bounds"]
        kwargs["input_bounds"] = (float(lo), float(hi))

    if "min_speed" in doc:
        _reject_unknown(doc["min_speed"], _MIN_SPEED_KEYS, path="min_speed")
        kwargs["min_speed"] = MinSpeedRegion(**doc["min_speed"])
    obstacles = []
    for k, tbl in enumerate(doc.get("obstacles", [])):
        _reject_unknown(tbl, _OBSTACLE_KEYS, path=f"obstacles[{k}]")
        obstacles.append(RectObstacle(**tbl))
    if obstacles:
        kwargs["obstacles"] = obstacles

    try:
        scen = MpcScenario(**kwargs)
    except TypeError as exc:
        raise InvalidInput(f"bad scenario table: {exc}")

    solver_tbl = doc.get("solver", {})
    _reject_unknown(solver_tbl, _SOLVER_KEYS, path="solver")
    settings = Settings(**solver_tbl)
    mip_tbl = doc.get("mip", {})
    _reject_unknown(mip_tbl, _MIP_KEYS, path="mip")
    mip_settings = MipSettings(tol=settings.tol, **mip_tbl)
    rhc_tbl = dict(doc.get("rhc", {}))
    _reject_unknown(rhc_tbl, _RHC_KEYS, path="rhc")
    return scen, settings, mip_settings, rhc_tbl


# ---------------------------------------------------------------------------
# Export.


def _header(n: int, order: str) -> list:
    cols = ["t", "time"]
    cols += [f"R{i}{j}" for i in range(n) for j in range(n)]
    cols += [f"s{i}" for i in range(n)]
    if order == "second":
        cols += [f"W{i}{j}" for i in range(n) for j in range(n)]
        cols += [f"p{i}" for i in range(n)]
    nu = n * n if order == "second" else n
    cols += [f"u{i}" for i in range(nu)]
    cols += ["det", "solve_time"]
    return cols


def write_trajectory_csv(traj: Trajectory, path):
    scen = traj.scenario
    n = scen.n
    cols = _header(n, scen.order)
    steps = len(traj.positions)
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for t in range(steps):
            row = [t, traj.times[t]]
            row += list(traj.rotations[t].reshape(-1))
            row += list(traj.positions[t])
            if scen.order == "second":
                row += list(traj.rot_rates[t].reshape(-1))
                row += list(traj.velocities[t])
            nu = n * n if scen.order == "second" else n
            if t < len(traj.inputs):
                row += list(np.asarray(traj.inputs[t]).reshape(-1))
            else:
                row += [0.0] * nu
            row.append(traj.dets[t])
            if traj.solve_times is not None and t < len(traj.solve_times):
                row.append(traj.solve_times[t])
            else:
                row.append(0.0)
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_summary(traj: Trajectory, path, extra: dict | None = None):
    summary = {
        "status": traj.status.value,
        "objective": None if not np.isfinite(traj.objective) else traj.objective,
        "min_det": float(np.min(traj.dets)),
        "wall_time": traj.wall_time,
        "steps": len(traj.positions) - 1,
        "terminal_position": list(map(float, traj.positions[-1])),
    }
    if traj.solve_times is not None and len(traj.solve_times):
        summary["mean_solve_time"] = float(np.mean(traj.solve_times))
    if extra:
        summary.update(extra)
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def _finish(traj: Trajectory, out_prefix: str, extra: dict | None = None) -> int:
    write_trajectory_csv(traj, out_prefix + ".csv")
    write_summary(traj, out_prefix + ".json", extra)
    click.echo(f"status: {traj.status.value}")
    click.echo(f"min det: {np.min(traj.dets):.6f}")
    click.echo(f"wrote {out_prefix}.csv and {out_prefix}.json")
    return _STATUS_EXIT[traj.status]


# ---------------------------------------------------------------------------
# Commands.


@click.group()
def main():
    """Trajectory optimization over the convex hull of SO(2)/SO(3)."""


@main.command("plan")
@click.argument("scenario_path", type=click.Path())
@click.option("--out", default="plan", show_default=True,
              help="Output prefix (writes PREFIX.csv and PREFIX.json).")
@click.option("--tol", type=float, default=None, help="Override solver tolerance.")
@click.option("--max-iters", type=int, default=None, help="Override iteration cap.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Recorded in the summary; solves are deterministic.")
@click.option("--round/--no-round", "do_round", default=False,
              help="Also project every rotation state onto SO(n).")
def plan_cmd(scenario_path, out, tol, max_iters, seed, do_round):
    """One-shot open-loop plan from a scenario file."""
    try:
        scen, settings, mip_settings, _ = load_scenario(scenario_path)
        if tol is not None:
            settings.tol = tol
            mip_settings.tol = tol
        if max_iters is not None:
            settings.max_iters = max_iters
        traj = plan_scenario(scen, settings, mip_settings)
    except InvalidInput as exc:
        click.echo(f"invalid input: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    extra = {"seed": seed}
    if do_round and traj.status == Status.OPTIMAL:
        traj = round_trajectory(traj)
        extra["max_projection_distance"] = float(np.max(traj.projection_distances))
        extra["rounding_residual"] = traj.rounding_residual
    sys.exit(_finish(traj, out, extra))


@main.command("rhc")
@click.argument("scenario_path", type=click.Path())
@click.option("--out", default="rhc", show_default=True,
              help="Output prefix (writes PREFIX.csv and PREFIX.json).")
@click.option("--lookahead", type=int, default=None, help="Override planning horizon.")
@click.option("--max-steps", type=int, default=None, help="Override step budget.")
@click.option("--tol", type=float, default=None, help="Override solver tolerance.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Recorded in the summary; solves are deterministic.")
def rhc_cmd(scenario_path, out, lookahead, max_steps, tol, seed):
    """Closed-loop receding-horizon run with a moving goal.

    The goal oscillates around rhc.goal_center with the configured
    amplitude and angular frequency; defaults reduce to the static
    scenario goal when amplitude is 0.
    """
    try:
        scen, settings, mip_settings, rhc_tbl = load_scenario(scenario_path)
        if tol is not None:
            settings.tol = tol
            mip_settings.tol = tol
        lookahead = lookahead if lookahead is not None else rhc_tbl.get("lookahead", 5)
        max_steps = max_steps if max_steps is not None else rhc_tbl.get("max_steps", 40)
        capture = rhc_tbl.get("capture_radius", 0.1)
        center = np.asarray(rhc_tbl.get("goal_center", scen.goal), dtype=float)
        amplitude = float(rhc_tbl.get("amplitude", 0.0))
        omega = float(rhc_tbl.get("omega", 2.0 * math.pi / 20.0))
        if max_steps < 0:
            raise InvalidInput("max_steps must be >= 0")

        def goal_process(step):
            return center + amplitude * np.array(
                [math.sin(omega * step), math.cos(omega * step)])

        traj = receding_horizon(scen, goal_process, lookahead, max_steps,
                                capture, settings, mip_settings)
    except InvalidInput as exc:
        click.echo(f"invalid input: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    extra = {"seed": seed, "captured": traj.captured,
             "capture_step": traj.capture_step}
    sys.exit(_finish(traj, out, extra))


def _parse_matrix(text: str) -> np.ndarray:
    """Parse 'a,b;c,d' (rows ; separated) or a whitespace matrix file."""
    import os

    if os.path.exists(text):
        with open(text) as f:
            rows = [[float(v) for v in line.split()]
                    for line in f if line.strip()]
    else:
        rows = [[float(v) for v in row.split(",")]
                for row in text.split(";") if row.strip()]
    if not rows or any(len(r) != len(rows) for r in rows):
        raise InvalidInput("matrix must be square (rows 'a,b;c,d' or a file)")
    return np.array(rows)


@main.command("project")
@click.argument("matrix")
def project_cmd(matrix):
    """Print the nearest rotation to MATRIX (literal 'a,b;c,d' or file)."""
    try:
        S = _parse_matrix(matrix)
        if S.shape[0] not in (2, 3):
            raise InvalidInput("projection supports 2x2 and 3x3 matrices")
        pr = project_to_SOn(S)
    except InvalidInput as exc:
        click.echo(f"invalid input: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    for row in pr.rotation:
        click.echo("  ".join(f"{v:+.12f}" for v in row))
    click.echo(f"distance: {pr.distance:.12e}")
    if not pr.unique:
        click.echo("warning: nearest rotation is not unique")
    sys.exit(EXIT_OPTIMAL)


if __name__ == "__main__":
    main()
