"""Mixed-integer layer: big-M constraint builders and branch-and-bound.

Obstacle avoidance and minimum-determinant ("minimum speed") regions are
encoded with the classic big-M disjunction: binary k relaxes face k of a
convex region that the point must leave through at least one face.  The
branch-and-bound loop solves conic continuous relaxations, branching on
the most fractional binary (ties to the lowest index) and selecting nodes
best-bound first.

Both builders also record their disjunction structure on the program;
B&B uses it to harvest incumbents (a relaxation point whose continuous
part already clears every region can be completed to a feasible integer
assignment for free) and to run a diving heuristic at the root.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import InvalidInput
from .program import ConicProgram, DisjunctionGroup
from .solver import Settings, SolveResult, Status, WarmStart, Workspace


@dataclass(frozen=True)
class RectObstacle:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidInput("obstacle must have x_min < x_max and y_min < y_max")


@dataclass(frozen=True)
class MinSpeedRegion:
    """Excluded regular N-gon around the origin of the (a, b) disk.

    ``min_det`` is the determinant floor; the polygon's inradius is
    sqrt(min_det), so for min_det = 1/2 and faces = 4 this is the square
    of half-width sqrt(2)/2.
    """

    min_det: float
    faces: int = 4

    def __post_init__(self):
        if not (0.0 < self.min_det < 1.0):
            raise InvalidInput("min_det must lie in (0, 1)")
        if self.faces < 4 or self.faces % 2 != 0:
            raise InvalidInput("faces must be an even integer >= 4")

    @property
    def half_width(self) -> float:
        return math.sqrt(self.min_det)


def add_obstacle(prog: ConicProgram, obstacle: RectObstacle,
                 point_vars: tuple[int, int], M: float | None = None):
    """Add the five big-M rows keeping (x, y) outside a rectangle.

    Returns the four new binary indices.  Face order: left, right,
    bottom, top; binary a_k = 1 relaxes face k.  When ``M`` is omitted,
    a tight per-face constant is derived from the point variables' box
    bounds (falling back to 100 for unbounded variables); loose big-M
    values slow down the continuous relaxations considerably.
    """
    if M is not None and M <= 0:
        raise InvalidInput("big-M constant must be positive")
    x_idx, y_idx = point_vars
    bins = list(prog.add_vars(4))
    for i in bins:
        prog.mark_binary(i)
    faces = [
        ({x_idx: 1.0}, obstacle.x_min),     # x <= x_min + M a1
        ({x_idx: -1.0}, -obstacle.x_max),   # -x <= -x_max + M a2
        ({y_idx: 1.0}, obstacle.y_min),     # y <= y_min + M a3
        ({y_idx: -1.0}, -obstacle.y_max),   # -y <= -y_max + M a4
    ]
    if M is None:
        # face k is slack when its binary is 1 iff M_k >= max(coeffs.x) - rhs
        reach = [prog.upper[x_idx] - obstacle.x_min,
                 obstacle.x_max - prog.lower[x_idx],
                 prog.upper[y_idx] - obstacle.y_min,
                 obstacle.y_max - prog.lower[y_idx]]
        face_M = [r if np.isfinite(r) and r > 0.0 else
                  (1.0 if np.isfinite(r) else 100.0) for r in reach]
    else:
        face_M = [M] * 4
    for k, (coeffs, rhs) in enumerate(faces):
        row = dict(coeffs)
        row[bins[k]] = -face_M[k]
        prog.add_inequality(row, rhs)
    prog.add_inequality({i: 1.0 for i in bins}, 3.0)

    # enforced face k means coeffs . x <= rhs, i.e. -coeffs . x >= -rhs
    prog.disjunctions.append(DisjunctionGroup(
        binaries=bins,
        face_coeffs=[{v: -cv for v, cv in coeffs.items()} for coeffs, _ in faces],
        face_rhs=[-rhs for _, rhs in faces],
        max_relaxed=3,
    ))
    return bins


def add_min_speed(prog: ConicProgram, region: MinSpeedRegion,
                  rot_vars: tuple[int, int], M: float = 100.0):
    """Exclude the open regular N-gon of inradius sqrt(min_det) around the
    origin of the (a, b) rotation variables.

    Face k (k = 0..N-1) requires cos(th_k) a + sin(th_k) b >= w - M c_k
    with th_k = 2 pi k / N and w the inradius; at most N-1 faces may be
    relaxed.  Returns the N new binary indices.
    """
    if M <= 0:
        raise InvalidInput("big-M constant must be positive")
    a_idx, b_idx = rot_vars
    N = region.faces
    w = region.half_width
    bins = list(prog.add_vars(N))
    for i in bins:
        prog.mark_binary(i)
    coeffs_list, rhs_list = [], []
    for k in range(N):
        th = 2.0 * math.pi * k / N
        ca, sb = math.cos(th), math.sin(th)
        # -(ca*a + sb*b) - M c_k <= -w
        prog.add_inequality({a_idx: -ca, b_idx: -sb, bins[k]: -M}, -w)
        coeffs_list.append({a_idx: ca, b_idx: sb})
        rhs_list.append(w)
    prog.add_inequality({i: 1.0 for i in bins}, float(N - 1))

    prog.disjunctions.append(DisjunctionGroup(
        binaries=bins, face_coeffs=coeffs_list, face_rhs=rhs_list,
        max_relaxed=N - 1,
    ))
    return bins


# ---------------------------------------------------------------------------
# Branch and bound.


def _enforced_conflict(prog: ConicProgram, fixed: dict) -> bool:
    """Detect a node whose enforced faces are infeasible by inspection.

    A binary fixed to 0 enforces its face  coeffs . x >= rhs.  Two such
    faces with opposing proportional normals, or a single face that cannot
    be met anywhere in the variable box, make the node infeasible without
    a solve.  This matters because the splitting solver certifies these
    conflicts very slowly: the sum-row and pinned-binary rows add dual
    null directions that mask the certificate.
    """
    faces = []
    for grp in prog.disjunctions:
        for k, i in enumerate(grp.binaries):
            if fixed.get(i) == 0:
                faces.append((grp.face_coeffs[k], grp.face_rhs[k]))
    for coeffs, rhs in faces:
        sup = sum(c * (prog.upper[v] if c > 0 else prog.lower[v])
                  for v, c in coeffs.items() if c != 0.0)
        if sup < rhs - 1e-9:
            return True
    for (c1, r1), (c2, r2) in itertools.combinations(faces, 2):
        if set(c1) != set(c2):
            continue
        v0 = next(iter(c1))
        if c1[v0] == 0.0 or c2[v0] * c1[v0] >= 0.0:
            continue
        lam = -c2[v0] / c1[v0]            # c2 == -lam * c1, lam > 0
        scale = max(abs(c) for c in c1.values())
        if any(abs(c2[v] + lam * c1[v]) > 1e-9 * scale for v in c1):
            continue
        # c1.x >= r1 and c1.x <= -r2/lam must overlap
        if r1 > -r2 / lam + 1e-9:
            return True
    return False


@dataclass
class BnbNode:
    bound: float
    depth: int
    seq: int
    fixed: dict                      # binary index -> 0 or 1
    warm: tuple | None = None        # parent embedding iterate (u, v)

    def __lt__(self, other):
        return (self.bound, self.depth, self.seq) < (other.bound, other.depth, other.seq)


@dataclass
class NodeStats:
    nodes: int = 0
    best_bound: float = -np.inf
    incumbent_objective: float = np.inf
    log: list = field(default_factory=list)   # (node, depth, bound, incumbent, event)


@dataclass
class MipSettings:
    tol: float = 1e-6
    node_limit: int = 20000
    abs_gap: float = 1e-6
    rel_gap: float = 1e-6
    binary_tol: float = 1e-6
    feas_tol: float = 1e-6
    root_dive: bool = True
    log_stream: object = None    # writable text stream for per-node records


class _BnbState:
    def __init__(self, prog, settings: MipSettings):
        self.prog = prog
        self.settings = settings
        self.ws = Workspace(prog, Settings(tol=settings.tol))
        self.binaries = sorted(prog.binary_vars)
        self.incumbent_x = None
        self.incumbent_obj = np.inf
        self.stats = NodeStats()

    def solve_relaxation(self, fixed: dict, state=None) -> SolveResult:
        for i in self.binaries:
            if i in fixed:
                self.ws.set_bound(i, float(fixed[i]), float(fixed[i]))
            else:
                self.ws.set_bound(i, 0.0, 1.0)
        return self.ws.solve(state=state)

    # -- incumbent helpers --------------------------------------------------

    def completion(self, x: np.ndarray, fixed: dict):
        """Try to complete a relaxation point to a feasible binary
        assignment without moving the continuous variables."""
        tol = self.settings.feas_tol
        assign = {}
        grouped = set()
        for grp in self.prog.disjunctions:
            grouped.update(grp.binaries)
            # keep fixings; pick the best-satisfied face among unfixed ones.
            # A face whose binary is fixed to 0 is enforced by the solver
            # itself, so the group is covered regardless of the (solver
            # accuracy sized) residual at x.
            ok = any(fixed.get(i) == 0 for i in grp.binaries)
            free = [k for k, i in enumerate(grp.binaries) if i not in fixed]
            choice = None
            if not ok and free:
                resid = []
                for k in free:
                    val = sum(c * x[vi] for vi, c in grp.face_coeffs[k].items())
                    resid.append((val - grp.face_rhs[k], -k))
                best_resid, nk = max(resid)
                if best_resid >= -tol:
                    choice = -nk
                    ok = True
            if not ok:
                return None
            for k, i in enumerate(grp.binaries):
                if i in fixed:
                    assign[i] = fixed[i]
                elif k == choice:
                    assign[i] = 0
                else:
                    assign[i] = 1
            nrelaxed = sum(assign[i] for i in grp.binaries)
            if nrelaxed > grp.max_relaxed:
                return None
        for i in self.binaries:
            if i in grouped:
                continue
            if i in fixed:
                assign[i] = fixed[i]
            elif min(x[i], 1.0 - x[i]) <= self.settings.binary_tol:
                assign[i] = int(round(x[i]))
            else:
                return None
        xc = x.copy()
        for i, vi in assign.items():
            xc[i] = float(vi)
        if self.prog.max_violation(xc) > 100 * max(tol, self.settings.tol):
            return None
        return xc

    def offer_incumbent(self, xc: np.ndarray, event: str):
        obj = self.prog.objective_value(xc)
        if obj < self.incumbent_obj - 1e-12:
            self.incumbent_obj = obj
            self.incumbent_x = xc
            self.stats.incumbent_objective = obj
            self.log_event(-1, 0, obj, event)

    def log_event(self, node_id, depth, bound, event):
        rec = (node_id, depth, bound, self.incumbent_obj, event)
        self.stats.log.append(rec)
        if self.settings.log_stream is not None:
            print(f"{node_id},{depth},{bound},{self.incumbent_obj},{event}",
                  file=self.settings.log_stream)

    # -- root dive heuristic ---------------------------------------------------

    def dive(self, fixed: dict, state=None, max_rounds: int = 200):
        """Greedy sequential fixing of one disjunction group at a time."""
        fixed = dict(fixed)
        for _ in range(max_rounds):
            if _enforced_conflict(self.prog, fixed):
                return
            res = self.solve_relaxation(fixed, state)
            if res.status not in (Status.OPTIMAL, Status.ITER_LIMIT):
                return
            state = res.state
            xc = self.completion(res.x, fixed)
            if xc is not None:
                self.offer_incumbent(xc, "dive")
                return
            # most nearly satisfied unresolved group; enforce its best face
            best = None
            for grp in self.prog.disjunctions:
                if all(i in fixed for i in grp.binaries):
                    continue
                if any(fixed.get(i) == 0 for i in grp.binaries):
                    continue   # a face is already enforced in the program
                resid = []
                for k, i in enumerate(grp.binaries):
                    if fixed.get(i) == 1:
                        continue
                    val = sum(c * res.x[vi] for vi, c in grp.face_coeffs[k].items())
                    resid.append((val - grp.face_rhs[k], -k))
                if not resid:
                    continue
                r, nk = max(resid)
                if r >= -self.settings.feas_tol:
                    continue   # group already satisfied through an enforced face
                if best is None or r > best[0]:
                    best = (r, grp, -nk)
            if best is None:
                return
            _, grp, k = best
            for kk, i in enumerate(grp.binaries):
                if i not in fixed:
                    fixed[i] = 0 if kk == k else 1


def solve_mip(prog: ConicProgram, settings: MipSettings | None = None):
    """Branch-and-bound over the binary variables of a conic program.

    Returns (SolveResult, NodeStats).  With no binaries this is exactly
    one convex solve.
    """
    settings = settings or MipSettings()
    if not prog.binary_vars:
        from .solver import solve as _solve
        ws = Workspace(prog, Settings(tol=settings.tol))
        return ws.solve(), NodeStats(nodes=1)

    state = _BnbState(prog, settings)
    root = state.solve_relaxation({})
    state.stats.nodes = 1
    if root.status == Status.INFEASIBLE:
        state.log_event(0, 0, np.inf, "root-infeasible")
        return root, state.stats
    if root.status == Status.UNBOUNDED:
        return root, state.stats
    state.log_event(0, 0, root.objective, "root")

    xc = state.completion(root.x, {})
    if xc is not None:
        state.offer_incumbent(xc, "root-completion")
    elif settings.root_dive:
        state.dive({}, state=root.state)

    seq = itertools.count(1)
    heap = [BnbNode(root.objective, 0, 0, {}, root.state)]
    any_feasible_leaf = xc is not None or state.incumbent_x is not None
    hit_limit = False

    def gap_ok(bound):
        inc = state.incumbent_obj
        if not np.isfinite(inc):
            return False
        return (inc - bound <= settings.abs_gap
                or inc - bound <= settings.rel_gap * max(1.0, abs(inc)))

    while heap:
        if state.stats.nodes >= settings.node_limit:
            hit_limit = True
            break
        node = heapq.heappop(heap)
        state.stats.best_bound = node.bound
        if gap_ok(node.bound):
            # everything remaining is within gap of the incumbent
            state.log_event(node.seq, node.depth, node.bound, "gap-close")
            heap = []
            break

        if _enforced_conflict(prog, node.fixed):
            state.stats.nodes += 1
            state.log_event(node.seq, node.depth, np.inf, "conflict")
            continue
        res = state.solve_relaxation(node.fixed, node.warm)
        state.stats.nodes += 1
        if res.status == Status.INFEASIBLE:
            state.log_event(node.seq, node.depth, np.inf, "infeasible")
            continue
        if res.status == Status.UNBOUNDED:
            return res, state.stats
        bound = res.objective - settings.tol * (1.0 + abs(res.objective))
        if np.isfinite(state.incumbent_obj) and gap_ok(bound):
            state.log_event(node.seq, node.depth, res.objective, "pruned")
            continue

        xc = state.completion(res.x, node.fixed)
        if xc is not None:
            any_feasible_leaf = True
            state.offer_incumbent(xc, "completion")
            obj = state.prog.objective_value(xc)
            if obj <= res.objective + settings.abs_gap:
                # node solved exactly; nothing below can beat it
                state.log_event(node.seq, node.depth, res.objective, "exact")
                continue

        warm = res.state

        # branch on a disjunction first: pick the group whose point sits
        # deepest inside its excluded region and make one child per face,
        # each child enforcing that face and relaxing the others (any
        # integer-feasible point enforces some face, so this is exhaustive)
        branch_grp, worst_depth = None, -np.inf
        for grp in state.prog.disjunctions:
            if any(node.fixed.get(i) == 0 for i in grp.binaries):
                continue
            choices = [k for k, i in enumerate(grp.binaries)
                       if node.fixed.get(i) != 1]
            if not choices:
                continue
            depth_in = -max(
                sum(c * res.x[vi] for vi, c in grp.face_coeffs[k].items())
                - grp.face_rhs[k] for k in choices)
            if depth_in > settings.feas_tol and depth_in > worst_depth:
                worst_depth = depth_in
                branch_grp = (grp, choices)
        if branch_grp is not None:
            grp, choices = branch_grp
            for k in choices:
                child_fixed = dict(node.fixed)
                for kk, i in enumerate(grp.binaries):
                    child_fixed[i] = 0 if kk == k else 1
                heapq.heappush(heap, BnbNode(res.objective, node.depth + 1,
                                             next(seq), child_fixed, warm))
            state.log_event(node.seq, node.depth, res.objective,
                            f"branch-group x{grp.binaries[0]}")
            continue

        # otherwise: most fractional free binary, ties by lowest index
        frac_best, branch_var = -1.0, None
        for i in state.binaries:
            if i in node.fixed:
                continue
            f = min(res.x[i], 1.0 - res.x[i])
            if f > frac_best + 1e-15:
                frac_best = f
                branch_var = i
        if branch_var is None or frac_best <= settings.binary_tol:
            # integral (or fixable) at this relaxation
            xi = res.x.copy()
            for i in state.binaries:
                xi[i] = float(node.fixed.get(i, round(res.x[i])))
            if state.prog.max_violation(xi) <= 100 * settings.feas_tol:
                any_feasible_leaf = True
                state.offer_incumbent(xi, "leaf")
            continue
        for val in (0, 1):
            child_fixed = dict(node.fixed)
            child_fixed[branch_var] = val
            heapq.heappush(heap, BnbNode(res.objective, node.depth + 1,
                                         next(seq), child_fixed, warm))
        state.log_event(node.seq, node.depth, res.objective,
                        f"branch x{branch_var}")

    # assemble result
    if state.incumbent_x is not None:
        x = state.incumbent_x
        # polish: re-solve the incumbent's assignment at a tighter tolerance
        # so the reported point meets cone constraints well below the B&B
        # feasibility slack
        assign = {i: int(round(x[i])) for i in state.binaries}
        old_tol = state.ws.settings.tol
        state.ws.settings.tol = min(settings.tol * 1e-2, 1e-8)
        polished = state.solve_relaxation(assign)
        state.ws.settings.tol = old_tol
        if (polished.status == Status.OPTIMAL
                and polished.objective <= state.incumbent_obj
                + settings.abs_gap * (1.0 + abs(state.incumbent_obj))):
            x = polished.x.copy()
            for i, vi in assign.items():
                x[i] = float(vi)
            state.incumbent_x = x
            state.incumbent_obj = prog.objective_value(x)
            state.stats.incumbent_objective = state.incumbent_obj
            state.log_event(-1, 0, polished.objective, "polish")
        status = Status.ITER_LIMIT if hit_limit and heap else Status.OPTIMAL
        result = SolveResult(
            status=status, x=x, objective=state.prog.objective_value(x),
            primal_residual=state.prog.max_violation(x),
            dual_residual=0.0, gap=0.0, iterations=state.stats.nodes)
        state.stats.best_bound = min(
            [n.bound for n in heap], default=state.stats.incumbent_objective)
        return result, state.stats
    if hit_limit:
        return SolveResult(status=Status.ITER_LIMIT, x=root.x,
                           objective=root.objective,
                           primal_residual=np.inf, dual_residual=np.inf,
                           gap=np.inf, iterations=state.stats.nodes), state.stats
    return SolveResult(status=Status.INFEASIBLE, x=root.x, objective=np.nan,
                       primal_residual=np.inf, dual_residual=np.inf,
                       gap=np.inf, iterations=state.stats.nodes), state.stats
