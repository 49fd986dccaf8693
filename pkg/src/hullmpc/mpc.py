"""MPC program builders over the rotation hull, plus the closed-loop
receding-horizon driver and trajectory rounding.

First-order vehicles (n = 2): state is a rotation R(t) in conv(SO(2)) and
a position s(t), with forward-Euler dynamics

    R(t+1) = R(t) + h u(t),        s(t+1) = s(t) + h R(t) V.

Second-order spacecraft (n = 3): adds angular velocity W and translational
velocity p,

    W(t+1) = W(t) + h u(t),        X(t+1) = X(t) + h W(t),
    p(t+1) = p(t) + h X(t) V,      s(t+1) = s(t) + h p(t),

with the hull constraint applied to X(t) only.  Costs are squared weighted
norms: input effort every step, optional state tracking for steps
1..T-1, and either a hard terminal equality or a quadratic terminal
penalty.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import mip as mip_mod
from .cones import project_to_SOn, so2_hull_rows, so3_hull_rows
from .mip import MinSpeedRegion, MipSettings, RectObstacle
from .numerics import InvalidInput
from .program import ConicProgram
from .solver import Settings, SolveResult, Status, solve, warm_start


@dataclass
class MpcScenario:
    n: int = 2
    order: str = "first"                  # "first" or "second"
    T: int = 20
    h: float = 1.0
    V: np.ndarray = None
    R0: np.ndarray = None
    s0: np.ndarray = None
    W0: np.ndarray = None                 # second order: initial angular velocity
    p0: np.ndarray = None                 # second order: initial translational velocity
    goal: np.ndarray = None
    goal_mode: str = "terminal"           # "terminal" (hard) or "soft" (quadratic penalty)
    zero_terminal_velocity: bool = True   # second order, terminal mode
    state_weight: object = 0.0            # Q
    input_weight: object = 1.0            # R_w
    terminal_weight: object = 100.0       # M_w (soft mode)
    obstacles: list = field(default_factory=list)
    min_speed: MinSpeedRegion | None = None
    input_bounds: tuple | None = None     # (lo, hi) box on every input entry
    big_M: float = 100.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise InvalidInput("n must be 2 or 3")
        if self.order not in ("first", "second"):
            raise InvalidInput("order must be 'first' or 'second'")
        if self.T < 2:
            raise InvalidInput("horizon T must be >= 2")
        if self.h <= 0:
            raise InvalidInput("time step h must be positive")
        n = self.n
        self.V = np.array([1.0] + [0.0] * (n - 1)) if self.V is None \
            else np.asarray(self.V, dtype=float)
        if self.V.shape != (n,):
            raise InvalidInput(f"V must have length {n}")
        self.R0 = np.eye(n) if self.R0 is None else np.asarray(self.R0, dtype=float)
        if self.R0.shape != (n, n):
            raise InvalidInput(f"R0 must be {n}x{n}")
        # the initial orientation may be any hull point (closed-loop states
        # drift into the interior), not only a proper rotation
        if n == 2:
            a, b = self.R0[0, 0], self.R0[1, 0]
            if (np.abs(self.R0 - np.array([[a, -b], [b, a]])).max() > 1e-6
                    or a * a + b * b > 1.0 + 1e-6):
                raise InvalidInput("R0 must lie in conv(SO(2)) (within 1e-6)")
        else:
            from .cones import so3_hull_lmi
            if np.linalg.eigvalsh(so3_hull_lmi(self.R0)).min() < -1e-6:
                raise InvalidInput("R0 must lie in conv(SO(3)) (within 1e-6)")
        self.s0 = np.zeros(n) if self.s0 is None else np.asarray(self.s0, dtype=float)
        if self.s0.shape != (n,):
            raise InvalidInput(f"s0 must have length {n}")
        if self.goal is not None:
            self.goal = np.asarray(self.goal, dtype=float)
            if self.goal.shape != (n,):
                raise InvalidInput(f"goal must have length {n}")
        if self.order == "second":
            self.W0 = np.zeros((n, n)) if self.W0 is None else np.asarray(self.W0, dtype=float)
            self.p0 = np.zeros(n) if self.p0 is None else np.asarray(self.p0, dtype=float)
        _check_weight(self.state_weight, "state_weight", pd=False)
        _check_weight(self.input_weight, "input_weight", pd=True)
        _check_weight(self.terminal_weight, "terminal_weight", pd=False)


def _check_weight(w, name, pd):
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        ev = np.linalg.eigvalsh(0.5 * (w + w.T))
        bad = ev.min() <= 0 if pd else ev.min() < -1e-12
    else:
        bad = np.any(w <= 0) if pd else np.any(w < 0)
    if bad:
        kind = "positive definite" if pd else "positive semidefinite"
        raise InvalidInput(f"{name} must be {kind}")


def _add_weighted_sq(prog: ConicProgram, idxs, W, center=None):
    """Add (x_I - c)' W (x_I - c) to the objective."""
    idxs = list(idxs)
    k = len(idxs)
    W = np.asarray(W, dtype=float)
    c = np.zeros(k) if center is None else np.asarray(center, dtype=float)
    if W.ndim < 2:
        prog.add_squared_term(idxs, W, c)
        return
    Wc = W @ c
    for a in range(k):
        if W[a, a] != 0.0:
            prog.add_quadratic(idxs[a], idxs[a], W[a, a])
        for b in range(a + 1, k):
            if W[a, b] != 0.0:
                prog.add_quadratic(idxs[a], idxs[b], 2.0 * W[a, b])
        if Wc[a] != 0.0:
            prog.add_linear(idxs[a], -2.0 * Wc[a])
    prog.objective_offset += float(c @ Wc)


@dataclass
class Layout:
    """Variable index map of a built program."""
    n: int
    order: str
    T: int
    rot: list          # per t: array of rotation-entry indices (row-major)
    pos: list          # per t: array of position indices
    inputs: list       # per t in 0..T-1
    rot_rate: list = None     # second order: W indices per t
    vel: list = None          # second order: p indices per t


def build_first_order(scen: MpcScenario):
    """Assemble the conic program of a first-order SO(2) vehicle.

    Returns (program, layout).  Variables per step: rotation pair
    (a, b) = first column of R, position (x, y); inputs (ua, ub).
    """
    if scen.order != "first" or scen.n != 2:
        raise InvalidInput("build_first_order requires order='first', n=2")
    T, h = scen.T, scen.h
    V1, V2 = scen.V
    prog = ConicProgram()
    rot, pos, inputs = [], [], []
    for t in range(T + 1):
        rot.append(np.array(prog.add_vars(2)))
        pos.append(np.array(prog.add_vars(2)))
    for t in range(T):
        inputs.append(np.array(prog.add_vars(2)))
    layout = Layout(n=2, order="first", T=T, rot=rot, pos=pos, inputs=inputs)

    # initial state: a = R0[0,0], b = R0[1,0] (column convention R=[a -b; b a])
    prog.add_equality({rot[0][0]: 1.0}, float(scen.R0[0, 0]))
    prog.add_equality({rot[0][1]: 1.0}, float(scen.R0[1, 0]))
    prog.add_equality({pos[0][0]: 1.0}, float(scen.s0[0]))
    prog.add_equality({pos[0][1]: 1.0}, float(scen.s0[1]))

    for t in range(T):
        a, b = rot[t]
        an, bn = rot[t + 1]
        ua, ub = inputs[t]
        prog.add_equality({an: 1.0, a: -1.0, ua: -h}, 0.0)
        prog.add_equality({bn: 1.0, b: -1.0, ub: -h}, 0.0)
        # s(t+1) = s(t) + h R(t) V, R V = (V1 a - V2 b, V2 a + V1 b)
        prog.add_equality({pos[t + 1][0]: 1.0, pos[t][0]: -1.0,
                           a: -h * V1, b: h * V2}, 0.0)
        prog.add_equality({pos[t + 1][1]: 1.0, pos[t][1]: -1.0,
                           a: -h * V2, b: -h * V1}, 0.0)

    # t = 0 is pinned by the initial-state equalities; constraining it again
    # would reject slightly drifted closed-loop states
    for t in range(1, T + 1):
        trip, bvec, cone = so2_hull_rows(int(rot[t][0]), int(rot[t][1]), prog.n)
        prog.add_block(trip, bvec, cone)

    _add_goal_and_costs(prog, scen, layout)
    _add_mixed_integer(prog, scen, layout)
    _add_input_bounds(prog, scen, layout)
    return prog, layout


def build_second_order(scen: MpcScenario):
    """Assemble the conic program of a second-order SE(3) spacecraft.

    Returns (program, layout).  Rotation state X(t) is a full 3x3 matrix
    (row-major variables) constrained to conv(SO(3)); W(t) and u(t) are
    3x3, p(t) and s(t) are translational velocity and position.
    """
    if scen.order != "second" or scen.n != 3:
        raise InvalidInput("build_second_order requires order='second', n=3")
    T, h = scen.T, scen.h
    V = scen.V
    prog = ConicProgram()
    rot, rate, vel, pos, inputs = [], [], [], [], []
    for t in range(T + 1):
        rot.append(np.array(prog.add_vars(9)))
        rate.append(np.array(prog.add_vars(9)))
        vel.append(np.array(prog.add_vars(3)))
        pos.append(np.array(prog.add_vars(3)))
    for t in range(T):
        inputs.append(np.array(prog.add_vars(9)))
    layout = Layout(n=3, order="second", T=T, rot=rot, pos=pos,
                    inputs=inputs, rot_rate=rate, vel=vel)

    for k in range(9):
        prog.add_equality({rot[0][k]: 1.0}, float(scen.R0.reshape(9)[k]))
        prog.add_equality({rate[0][k]: 1.0}, float(scen.W0.reshape(9)[k]))
    for k in range(3):
        prog.add_equality({vel[0][k]: 1.0}, float(scen.p0[k]))
        prog.add_equality({pos[0][k]: 1.0}, float(scen.s0[k]))

    for t in range(T):
        for k in range(9):
            prog.add_equality({rate[t + 1][k]: 1.0, rate[t][k]: -1.0,
                               inputs[t][k]: -h}, 0.0)
            prog.add_equality({rot[t + 1][k]: 1.0, rot[t][k]: -1.0,
                               rate[t][k]: -h}, 0.0)
        # p(t+1) = p(t) + h X(t) V ; row i of X V is sum_j X_ij V_j
        for i in range(3):
            coeffs = {vel[t + 1][i]: 1.0, vel[t][i]: -1.0}
            for j in range(3):
                if V[j] != 0.0:
                    coeffs[rot[t][3 * i + j]] = -h * V[j]
            prog.add_equality(coeffs, 0.0)
        for i in range(3):
            prog.add_equality({pos[t + 1][i]: 1.0, pos[t][i]: -1.0,
                               vel[t][i]: -h}, 0.0)

    for t in range(1, T + 1):
        trip, bvec, cone = so3_hull_rows([int(i) for i in rot[t]], prog.n)
        prog.add_block(trip, bvec, cone)

    _add_goal_and_costs(prog, scen, layout)
    _add_mixed_integer(prog, scen, layout)
    _add_input_bounds(prog, scen, layout)
    return prog, layout


def _add_goal_and_costs(prog, scen, layout):
    T = layout.T
    if scen.goal is None:
        raise InvalidInput("scenario has no goal")
    if scen.goal_mode == "terminal":
        for k in range(len(scen.goal)):
            prog.add_equality({layout.pos[T][k]: 1.0}, float(scen.goal[k]))
        if layout.order == "second" and scen.zero_terminal_velocity:
            for k in range(scen.n):
                prog.add_equality({layout.vel[T][k]: 1.0}, 0.0)
    elif scen.goal_mode == "soft":
        _add_weighted_sq(prog, layout.pos[T], scen.terminal_weight, scen.goal)
    else:
        raise InvalidInput(f"unknown goal mode {scen.goal_mode!r}")

    for t in range(T):
        _add_weighted_sq(prog, layout.inputs[t], scen.input_weight)
    Q = np.asarray(scen.state_weight, dtype=float)
    if np.any(Q):
        for t in range(1, T):
            _add_weighted_sq(prog, layout.pos[t], scen.state_weight, scen.goal)


def _add_mixed_integer(prog, scen, layout):
    for t in range(1, layout.T + 1):
        for obs in scen.obstacles:
            mip_mod.add_obstacle(prog, obs,
                                 (int(layout.pos[t][0]), int(layout.pos[t][1])),
                                 scen.big_M)
        if scen.min_speed is not None:
            if layout.n != 2:
                # SO(3) min-speed would act on det(X); not part of the model
                raise InvalidInput("min_speed regions apply to n=2 scenarios")
            # (a, b) lies in the unit disk, so M = inradius + 1 already
            # deactivates a relaxed face; a tighter M gives far stronger
            # continuous relaxations than the generic constant
            M = min(scen.big_M, scen.min_speed.half_width + 1.0)
            mip_mod.add_min_speed(prog, scen.min_speed,
                                  (int(layout.rot[t][0]), int(layout.rot[t][1])),
                                  M)


def _add_input_bounds(prog, scen, layout):
    if scen.input_bounds is None:
        return
    lo, hi = scen.input_bounds
    for t in range(layout.T):
        for i in layout.inputs[t]:
            prog.set_bounds(int(i), lo, hi)


# ---------------------------------------------------------------------------
# Trajectories.


@dataclass
class Trajectory:
    scenario: MpcScenario
    times: np.ndarray
    rotations: np.ndarray          # (T+1, n, n)
    positions: np.ndarray          # (T+1, n)
    inputs: np.ndarray
    dets: np.ndarray
    rot_rates: np.ndarray | None = None    # second order: W(t)
    velocities: np.ndarray | None = None   # second order: p(t)
    status: Status = Status.OPTIMAL
    objective: float = np.nan
    wall_time: float = 0.0
    solve_times: np.ndarray | None = None  # RHC: per-iteration solve time
    captured: bool = False
    capture_step: int = -1
    projection_distances: np.ndarray | None = None  # set by round_trajectory
    rounding_residual: float = 0.0
    non_unique: list = None
    x: np.ndarray | None = None
    result: SolveResult | None = None


def rotation_from_pair(a: float, b: float) -> np.ndarray:
    return np.array([[a, -b], [b, a]])


def extract_trajectory(scen: MpcScenario, layout: Layout,
                       result: SolveResult) -> Trajectory:
    T = layout.T
    x = result.x
    n = layout.n
    rotations = np.empty((T + 1, n, n))
    for t in range(T + 1):
        if n == 2:
            a, b = x[layout.rot[t][0]], x[layout.rot[t][1]]
            rotations[t] = rotation_from_pair(a, b)
        else:
            rotations[t] = x[layout.rot[t]].reshape(3, 3)
    positions = np.array([x[layout.pos[t]] for t in range(T + 1)])
    inputs = np.array([x[layout.inputs[t]] for t in range(T)])
    # step 0 is pinned by equality rows; report the exact data, not the
    # solver's approximation of it
    rotations[0] = scen.R0
    positions[0] = scen.s0
    dets = np.array([np.linalg.det(R) for R in rotations])
    traj = Trajectory(
        scenario=scen, times=scen.h * np.arange(T + 1),
        rotations=rotations, positions=positions, inputs=inputs, dets=dets,
        status=result.status, objective=result.objective,
        wall_time=result.wall_time, x=x, result=result)
    if layout.order == "second":
        traj.rot_rates = np.array([x[layout.rot_rate[t]].reshape(3, 3)
                                   for t in range(T + 1)])
        traj.velocities = np.array([x[layout.vel[t]] for t in range(T + 1)])
        traj.rot_rates[0] = scen.W0
        traj.velocities[0] = scen.p0
    return traj


def plan(scen: MpcScenario, settings: Settings | None = None,
         mip_settings: MipSettings | None = None) -> Trajectory:
    """One-shot open-loop plan.  Dispatches to branch-and-bound when the
    scenario carries obstacles or a minimum-speed region."""
    builder = build_first_order if scen.order == "first" else build_second_order
    prog, layout = builder(scen)
    t0 = time.perf_counter()
    if prog.binary_vars:
        ms = mip_settings or MipSettings(tol=(settings or Settings()).tol)
        result, _ = mip_mod.solve_mip(prog, ms)
    else:
        result = solve(prog, settings)
    traj = extract_trajectory(scen, layout, result)
    traj.wall_time = time.perf_counter() - t0
    return traj


def trajectory_cost(scen: MpcScenario, traj: Trajectory) -> float:
    """Recompute the objective from a trajectory (input effort every step,
    state tracking over 1..T-1, terminal penalty in soft mode)."""
    def wsq(z, Wt):
        W = np.asarray(Wt, dtype=float)
        z = np.asarray(z).ravel()
        if W.ndim == 2:
            return float(z @ W @ z)
        return float(np.sum(np.broadcast_to(W, z.shape) * z * z))

    T = scen.T
    val = sum(wsq(traj.inputs[t], scen.input_weight) for t in range(T))
    if np.any(np.asarray(scen.state_weight, dtype=float)):
        for t in range(1, T):
            val += wsq(traj.positions[t] - scen.goal, scen.state_weight)
    if scen.goal_mode == "soft":
        val += wsq(traj.positions[T] - scen.goal, scen.terminal_weight)
    return val


# ---------------------------------------------------------------------------
# Closed-loop receding horizon.


def simulate_first_order_step(R, s, u, h, V):
    """One exact forward-Euler step; used by the RHC loop and by replay so
    a recorded trajectory reproduces bitwise."""
    R_next = R + h * np.array([[u[0], -u[1]], [u[1], u[0]]])
    s_next = s + h * (R @ V)
    return R_next, s_next


@dataclass
class RhcAbort(RuntimeError):
    step: int
    status: Status
    trajectory: "Trajectory"

    def __str__(self):
        return f"RHC solve failed at step {self.step} with status {self.status.value}"


def receding_horizon(scen: MpcScenario, goal_process, lookahead: int,
                     max_steps: int, capture_radius: float,
                     settings: Settings | None = None,
                     mip_settings: MipSettings | None = None) -> Trajectory:
    """Closed-loop RHC for first-order SO(2) scenarios.

    Each step reads the current goal, solves a soft-goal program of
    horizon ``lookahead`` (warm-started from the previous step), applies
    the first input, and advances the true state by the same discrete
    dynamics.  Terminates on capture or after ``max_steps`` steps.
    """
    if scen.order != "first" or scen.n != 2:
        raise InvalidInput("receding_horizon supports first-order n=2 scenarios")
    if lookahead < 2:
        raise InvalidInput("lookahead must be >= 2")
    settings = settings or Settings()

    R = scen.R0.copy()
    s = scen.s0.copy()
    rotations, positions, applied, solve_times = [R.copy()], [s.copy()], [], []
    prev_result = None
    captured = False
    capture_step = -1

    step = 0
    while True:
        goal_now = np.asarray(goal_process(step), dtype=float)
        if np.linalg.norm(s - goal_now) <= capture_radius:
            captured = True
            capture_step = step
            break
        if step >= max_steps:
            break
        sub = replace(scen, T=lookahead, R0=R.copy(), s0=s.copy(),
                      goal=goal_now, goal_mode="soft")
        prog, layout = build_first_order(sub)
        t0 = time.perf_counter()
        if prog.binary_vars:
            ms = mip_settings or MipSettings(tol=settings.tol)
            result, _ = mip_mod.solve_mip(prog, ms)
        else:
            warm = warm_start(prev_result, prog) if prev_result is not None else None
            result = solve(prog, settings, warm)
        solve_times.append(time.perf_counter() - t0)
        if result.status != Status.OPTIMAL:
            partial = _closed_loop_trajectory(
                scen, rotations, positions, applied, solve_times,
                captured=False, capture_step=-1, status=result.status)
            raise RhcAbort(step=step, status=result.status, trajectory=partial)
        prev_result = result
        u0 = np.asarray(result.x[layout.inputs[0]], dtype=float)
        # the solve satisfies the hull row only to solver accuracy; nudge the
        # input so the fed-back state stays exactly inside the disk (replay
        # from the recorded input then reproduces the clipped state bitwise)
        a_next = R[0, 0] + scen.h * u0[0]
        b_next = R[1, 0] + scen.h * u0[1]
        nrm = np.hypot(a_next, b_next)
        if nrm > 1.0:
            u0 = np.array([(a_next / nrm - R[0, 0]) / scen.h,
                           (b_next / nrm - R[1, 0]) / scen.h])
        R, s = simulate_first_order_step(R, s, u0, scen.h, scen.V)
        applied.append(u0)
        rotations.append(R.copy())
        positions.append(s.copy())
        step += 1

    return _closed_loop_trajectory(scen, rotations, positions, applied,
                                   solve_times, captured, capture_step,
                                   Status.OPTIMAL)


def _closed_loop_trajectory(scen, rotations, positions, applied, solve_times,
                            captured, capture_step, status) -> Trajectory:
    rotations = np.array(rotations)
    positions = np.array(positions)
    dets = np.array([np.linalg.det(R) for R in rotations])
    return Trajectory(
        scenario=scen, times=scen.h * np.arange(len(rotations)),
        rotations=rotations, positions=positions,
        inputs=(np.array(applied).reshape(len(applied), -1) if applied
                else np.zeros((0, 2))), dets=dets,
        status=status, objective=np.nan,
        solve_times=np.array(solve_times),
        captured=captured, capture_step=capture_step)


def replay_first_order(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Re-simulate a closed-loop trajectory from its recorded inputs;
    states must reproduce bitwise."""
    scen = traj.scenario
    R = scen.R0.copy()
    s = scen.s0.copy()
    rotations, positions = [R.copy()], [s.copy()]
    for u in traj.inputs:
        R, s = simulate_first_order_step(R, s, u, scen.h, scen.V)
        rotations.append(R.copy())
        positions.append(s.copy())
    return np.array(rotations), np.array(positions)


# ---------------------------------------------------------------------------
# Rounding a relaxed trajectory onto SO(n).


def round_trajectory(traj: Trajectory) -> Trajectory:
    """Replace every rotation state by its nearest proper rotation.

    Reports the per-step projection distance, which steps had a
    non-unique nearest rotation, and the worst translation-dynamics
    residual the rounding introduces.
    """
    scen = traj.scenario
    h, V = scen.h, scen.V
    rounded = np.empty_like(traj.rotations)
    distances = np.empty(len(traj.rotations))
    non_unique = []
    for t, R in enumerate(traj.rotations):
        pr = project_to_SOn(R)
        rounded[t] = pr.rotation
        distances[t] = pr.distance
        if not pr.unique:
            non_unique.append(t)

    worst = 0.0
    if traj.scenario.order == "first":
        for t in range(len(traj.inputs)):
            pred = traj.positions[t] + h * (rounded[t] @ V)
            worst = max(worst, float(np.linalg.norm(traj.positions[t + 1] - pred)))
    elif traj.velocities is not None:
        for t in range(len(traj.inputs)):
            pred = traj.velocities[t] + h * (rounded[t] @ V)
            worst = max(worst, float(np.linalg.norm(traj.velocities[t + 1] - pred)))

    out = replace(traj)
    out.rotations = rounded
    out.dets = np.array([np.linalg.det(R) for R in rounded])
    out.projection_distances = distances
    out.rounding_residual = worst
    out.non_unique = non_unique
    return out
