"""Trajectory optimization over the convex hull of SO(2)/SO(3).

Model predictive control for vehicles whose orientation state lives in a
rotation group, relaxed to the group's convex hull (a disk for SO(2), a
4x4 linear matrix inequality for SO(3)), solved with an internal
operator-splitting conic solver and an optional branch-and-bound layer
for obstacle and minimum-speed constraints.
"""

from .cones import (Cone, ConeKind, RotationProjection, nonneg_cone, project_cone,
                    project_to_SOn, psd_cone, so2_hull_rows, so3_hull_lmi,
                    so3_hull_rows, soc_cone, svec, smat, zero_cone)
from .mip import (MinSpeedRegion, MipSettings, NodeStats, RectObstacle,
                  add_min_speed, add_obstacle, solve_mip)
from .mpc import (Layout, MpcScenario, Trajectory, build_first_order,
                  build_second_order, plan, receding_horizon, round_trajectory,
                  trajectory_cost)
from .numerics import EigenDecomposition, InvalidInput, svd, sym_eig
from .program import ConicProgram
from .solver import Settings, SolveResult, Status, WarmStart, solve, warm_start

__version__ = "0.1.0"
