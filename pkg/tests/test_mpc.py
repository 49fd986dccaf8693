"""MPC builders, planning, receding horizon, and rounding."""

import numpy as np
import pytest

from hullmpc.cones import project_to_SOn, so3_hull_lmi
from hullmpc.mip import MinSpeedRegion, RectObstacle
from hullmpc.mpc import (MpcScenario, Trajectory, build_first_order,
                         build_second_order, extract_trajectory, plan,
                         receding_horizon, replay_first_order,
                         rotation_from_pair, round_trajectory,
                         simulate_first_order_step, trajectory_cost)
from hullmpc.numerics import InvalidInput, svd
from hullmpc.solver import Settings, Status


def rot2(th):
    return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])


class TestScenarioValidation:
    def test_defaults(self):
        s = MpcScenario(goal=[1.0, 2.0])
        assert np.allclose(s.V, [1.0, 0.0])
        assert np.allclose(s.R0, np.eye(2))
        assert np.allclose(s.s0, 0.0)

    def test_bad_horizon(self):
        with pytest.raises(InvalidInput):
            MpcScenario(T=1, goal=[1.0, 0.0])
        with pytest.raises(InvalidInput):
            MpcScenario(h=0.0, goal=[1.0, 0.0])

    def test_bad_shapes(self):
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], V=[1.0, 0.0, 0.0])
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0, 0.0])
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], R0=np.eye(3))

    def test_r0_must_be_hull_point(self):
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], R0=2.0 * np.eye(2))
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], R0=np.array([[1.0, 0.5], [0.0, 1.0]]))
        # interior hull points are allowed (closed-loop feedback states)
        MpcScenario(goal=[1.0, 0.0], R0=0.5 * np.eye(2))
        with pytest.raises(InvalidInput):
            MpcScenario(n=3, order="second", goal=[1.0, 0.0, 0.0],
                        R0=np.diag([1.0, 1.0, -1.0]))

    def test_bad_weights(self):
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], input_weight=0.0)
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], state_weight=-1.0)

    def test_bad_mode_and_order(self):
        with pytest.raises(InvalidInput):
            MpcScenario(goal=[1.0, 0.0], order="third")
        with pytest.raises(InvalidInput):
            MpcScenario(n=4, goal=[0.0] * 4)
        with pytest.raises(InvalidInput):
            plan(MpcScenario(goal=[1.0, 0.0], goal_mode="medium"))

    def test_min_speed_requires_n2(self):
        scen = MpcScenario(n=3, order="second", goal=[1.0, 0.0, 0.0],
                           min_speed=MinSpeedRegion(0.5))
        with pytest.raises(InvalidInput):
            build_second_order(scen)

    def test_builder_order_mismatch(self):
        with pytest.raises(InvalidInput):
            build_first_order(MpcScenario(n=3, order="second",
                                          goal=[0.0, 0.0, 1.0]))
        with pytest.raises(InvalidInput):
            build_second_order(MpcScenario(goal=[1.0, 0.0]))


class TestFirstOrderBuilder:
    def test_variable_count(self):
        scen = MpcScenario(T=5, goal=[1.0, 1.0])
        prog, layout = build_first_order(scen)
        # 4 per step t=0..5 plus 2 inputs per step t=0..4
        assert prog.n == 4 * 6 + 2 * 5
        assert layout.T == 5
        assert not prog.binary_vars

    def test_t2_closed_form(self):
        # T=2: s(2) = s0 + h R0 V + h R1 V with R1 = R0 + h u0, so u0 is
        # pinned by the goal and u1 = 0 is optimal
        g = np.array([1.8, 0.6])
        scen = MpcScenario(T=2, h=1.0, goal=g)
        traj = plan(scen, Settings(tol=1e-9))
        assert traj.status is Status.OPTIMAL
        a1, b1 = g - np.array([1.0, 0.0])    # R1 V = g - s0 - h R0 V
        u0_expected = np.array([a1 - 1.0, b1 - 0.0])
        assert np.allclose(traj.inputs[0], u0_expected, atol=1e-6)
        assert np.allclose(traj.inputs[1], 0.0, atol=1e-6)
        assert traj.objective == pytest.approx(float(u0_expected @ u0_expected),
                                               abs=1e-6)

    def test_t2_infeasible_goal(self):
        # would need ||R1 V|| = 3 > 1: outside the hull
        scen = MpcScenario(T=2, h=1.0, goal=[4.0, 0.0])
        traj = plan(scen)
        assert traj.status is Status.INFEASIBLE

    def test_dynamics_residuals(self):
        scen = MpcScenario(T=8, goal=[2.0, 3.0])
        traj = plan(scen)
        h, V = scen.h, scen.V
        for t in range(scen.T):
            R_next = traj.rotations[t] + h * np.array(
                [[traj.inputs[t][0], -traj.inputs[t][1]],
                 [traj.inputs[t][1], traj.inputs[t][0]]])
            assert np.abs(traj.rotations[t + 1] - R_next).max() < 1e-5
            s_next = traj.positions[t] + h * traj.rotations[t] @ V
            assert np.abs(traj.positions[t + 1] - s_next).max() < 1e-5

    def test_hull_membership_and_speed_identity(self):
        scen = MpcScenario(T=8, goal=[2.0, 3.0])
        traj = plan(scen)
        for t in range(scen.T + 1):
            a, b = traj.rotations[t][0, 0], traj.rotations[t][1, 0]
            assert a * a + b * b <= 1.0 + 1e-6
            if t < scen.T:
                step = np.linalg.norm(traj.positions[t + 1] - traj.positions[t])
                assert step == pytest.approx(scen.h * np.hypot(a, b), abs=1e-5)

    def test_cost_correctness(self):
        scen = MpcScenario(T=6, goal=[1.5, 2.0], state_weight=0.5,
                           input_weight=2.0)
        traj = plan(scen)
        recomputed = trajectory_cost(scen, traj)
        assert traj.objective == pytest.approx(
            recomputed, rel=1e-8, abs=1e-8)

    def test_soft_goal_cost_correctness(self):
        scen = MpcScenario(T=6, goal=[3.0, 1.0], goal_mode="soft",
                           terminal_weight=50.0)
        traj = plan(scen)
        assert traj.status is Status.OPTIMAL
        assert traj.objective == pytest.approx(
            trajectory_cost(scen, traj), rel=1e-6, abs=1e-6)

    def test_nonidentity_start(self):
        R0 = rot2(0.8)
        s0 = np.array([1.0, -1.0])
        scen = MpcScenario(T=6, goal=[3.0, 1.0], R0=R0, s0=s0)
        traj = plan(scen)
        assert traj.status is Status.OPTIMAL
        assert np.allclose(traj.rotations[0], R0)
        assert np.allclose(traj.positions[0], s0)
        assert np.allclose(traj.positions[-1], scen.goal, atol=1e-5)

    def test_input_bounds_respected(self):
        scen = MpcScenario(T=10, goal=[2.0, 2.0], input_bounds=(-0.2, 0.2))
        traj = plan(scen)
        assert traj.status is Status.OPTIMAL
        assert np.abs(traj.inputs).max() <= 0.2 + 1e-5

    def test_mixed_integer_dispatch(self):
        scen = MpcScenario(T=6, goal=[2.0, 2.0],
                           obstacles=[RectObstacle(0.5, 0.5, 1.5, 1.5)])
        prog, _ = build_first_order(scen)
        assert len(prog.binary_vars) == 4 * 6   # per step t=1..T
        traj = plan(scen)
        assert traj.status is Status.OPTIMAL
        for p in traj.positions:
            inside = (0.5 + 1e-4 < p[0] < 1.5 - 1e-4
                      and 0.5 + 1e-4 < p[1] < 1.5 - 1e-4)
            assert not inside


class TestSecondOrderBuilder:
    def test_variable_count(self):
        scen = MpcScenario(n=3, order="second", T=3, goal=[1.0, 0.0, 0.0])
        prog, layout = build_second_order(scen)
        assert prog.n == (9 + 9 + 3 + 3) * 4 + 9 * 3
        assert layout.order == "second"

    def test_small_spacecraft(self):
        scen = MpcScenario(n=3, order="second", T=8, h=1.0,
                           goal=[1.0, 1.0, 2.0])
        traj = plan(scen, Settings(tol=1e-7))
        assert traj.status is Status.OPTIMAL
        assert np.allclose(traj.positions[-1], scen.goal, atol=1e-4)
        assert np.linalg.norm(traj.velocities[-1]) < 1e-4
        for X in traj.rotations:
            assert np.linalg.eigvalsh(so3_hull_lmi(X)).min() >= -1e-5

    def test_second_order_dynamics_residuals(self):
        # soft goal keeps the instance feasible regardless of reach: the
        # zero initial angular velocity pins X(1) = X(0), which makes short
        # horizons with hard terminal equalities infeasible
        scen = MpcScenario(n=3, order="second", T=5, goal=[0.5, 0.5, 1.0],
                           goal_mode="soft")
        traj = plan(scen, Settings(tol=1e-7))
        assert traj.status is Status.OPTIMAL
        h, V = scen.h, scen.V
        for t in range(scen.T):
            u = traj.inputs[t].reshape(3, 3)
            assert np.abs(traj.rot_rates[t + 1]
                          - traj.rot_rates[t] - h * u).max() < 1e-4
            assert np.abs(traj.rotations[t + 1]
                          - traj.rotations[t] - h * traj.rot_rates[t]).max() < 1e-4
            assert np.abs(traj.velocities[t + 1] - traj.velocities[t]
                          - h * traj.rotations[t] @ V).max() < 1e-4
            assert np.abs(traj.positions[t + 1] - traj.positions[t]
                          - h * traj.velocities[t]).max() < 1e-4


class TestRecedingHorizon:
    def test_static_goal_converges(self):
        scen = MpcScenario(T=8, goal=[2.0, 1.0], goal_mode="soft",
                           terminal_weight=100.0)
        # the first step necessarily overshoots (position advances with the
        # pre-update heading at full speed), so allow time to circle back
        traj = receding_horizon(scen, lambda step: np.array([2.0, 1.0]),
                                lookahead=8, max_steps=35, capture_radius=0.05)
        assert traj.captured
        assert traj.capture_step <= 35
        g = np.array([2.0, 1.0])
        assert np.linalg.norm(traj.positions[-1] - g) <= 0.05

    def test_replay_bitwise(self):
        scen = MpcScenario(T=8, goal=[2.0, 1.0], goal_mode="soft")
        traj = receding_horizon(scen, lambda step: np.array([2.0, 1.0]),
                                lookahead=5, max_steps=10, capture_radius=0.05)
        R, S = replay_first_order(traj)
        assert np.array_equal(R, traj.rotations)
        assert np.array_equal(S, traj.positions)

    def test_max_steps_zero(self):
        scen = MpcScenario(T=8, goal=[2.0, 1.0], goal_mode="soft")
        traj = receding_horizon(scen, lambda step: np.array([2.0, 1.0]),
                                lookahead=5, max_steps=0, capture_radius=0.05)
        assert not traj.captured
        assert len(traj.positions) == 1
        assert traj.inputs.shape[0] == 0

    def test_capture_at_start(self):
        scen = MpcScenario(T=8, goal=[0.0, 0.0], goal_mode="soft")
        traj = receding_horizon(scen, lambda step: np.array([0.0, 0.0]),
                                lookahead=5, max_steps=10, capture_radius=0.5)
        assert traj.captured and traj.capture_step == 0

    def test_requires_first_order(self):
        scen = MpcScenario(n=3, order="second", goal=[1.0, 0.0, 0.0])
        with pytest.raises(InvalidInput):
            receding_horizon(scen, lambda step: np.zeros(3), 5, 10, 0.1)
        with pytest.raises(InvalidInput):
            receding_horizon(MpcScenario(goal=[1.0, 0.0]),
                             lambda step: np.zeros(2), 1, 10, 0.1)

    def test_states_remain_in_hull(self):
        scen = MpcScenario(T=8, goal=[2.0, 1.0], goal_mode="soft")
        traj = receding_horizon(scen, lambda step: np.array([2.0, 1.0]),
                                lookahead=5, max_steps=15, capture_radius=0.01)
        for R in traj.rotations:
            a, b = R[0, 0], R[1, 0]
            assert a * a + b * b <= 1.0 + 1e-12


class TestRounding:
    def test_already_rotation_unchanged(self):
        scen = MpcScenario(T=4, goal=[0.5, 0.5])
        traj = plan(scen)
        # overwrite with exact rotations
        for t in range(len(traj.rotations)):
            traj.rotations[t] = rot2(0.1 * t)
        traj.dets = np.ones(len(traj.rotations))
        rounded = round_trajectory(traj)
        assert np.abs(rounded.rotations - traj.rotations).max() < 1e-9
        assert np.max(rounded.projection_distances) < 1e-9
        assert rounded.non_unique == []

    def test_dubins_rounding(self):
        scen = MpcScenario(T=10, goal=[2.5, 5.0])
        traj = plan(scen)
        assert traj.dets.min() < 0.99    # actually dips into the hull
        rounded = round_trajectory(traj)
        assert np.allclose(rounded.dets, 1.0, atol=1e-9)
        # distances match an independent SVD recomputation
        for t, S in enumerate(traj.rotations):
            U, sig, V = svd(S)
            d = np.sign(np.linalg.det(U @ V.T)) or 1.0
            D = np.diag([1.0, d])
            R = U @ D @ V.T
            assert rounded.projection_distances[t] == pytest.approx(
                np.linalg.norm(S - R), abs=1e-9)
        assert rounded.rounding_residual > 0.0

    def test_zero_rotation_flagged(self):
        scen = MpcScenario(T=4, goal=[0.5, 0.5])
        traj = plan(scen)
        traj.rotations[2] = np.zeros((2, 2))
        rounded = round_trajectory(traj)
        assert 2 in rounded.non_unique


class TestHelpers:
    def test_rotation_from_pair(self):
        R = rotation_from_pair(0.6, 0.8)
        assert np.allclose(R, [[0.6, -0.8], [0.8, 0.6]])
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_simulate_step(self):
        R, s = simulate_first_order_step(np.eye(2), np.zeros(2),
                                         np.array([0.1, 0.2]), 0.5,
                                         np.array([1.0, 0.0]))
        assert np.allclose(R, [[1.05, -0.1], [0.1, 1.05]])
        assert np.allclose(s, [0.5, 0.0])

    def test_trajectory_cost_matrix_weights(self):
        scen = MpcScenario(T=4, goal=[1.0, 1.0],
                           input_weight=np.diag([2.0, 3.0]))
        traj = plan(scen)
        assert traj.objective == pytest.approx(trajectory_cost(scen, traj),
                                               rel=1e-7, abs=1e-7)
