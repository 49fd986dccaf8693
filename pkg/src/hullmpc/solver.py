"""First-order conic solver.

Operator splitting (ADMM) on the homogeneous self-dual embedding of

    minimize    c'x
    subject to  Ax + s = b,  s in K,

the classic alternation between a cached linear-system solve and a cone
projection.  Quadratic objectives are lowered to this form with a
second-order-cone epigraph: 0.5 x'Px <= t becomes ||(sqrt(2) Wx, t-1)|| <=
t+1 for any W with W'W = P.  Infeasibility and unboundedness fall out of
the embedding's certificate variables.

The embedding solves, for u = (x, y, tau) and v = (0, s, kappa),

    find u in C, v = Qu in C*,   Q = [[0, A', c], [-A, 0, b], [-c', -b', 0]]

with C = R^n x K* x R+.  Each iteration applies (I + Q)^{-1} (cached LU of
the (n+m) core plus a rank-one update for the (c, b) border) followed by a
projection onto C.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeKind, nonneg_cone, soc_cone, svec_indices
from .numerics import InvalidInput
from .program import ConicProgram

SQRT2 = np.sqrt(2.0)


class Status(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass
class Settings:
    tol: float = 1e-6
    max_iters: int = 50000
    alpha: float = 1.5          # over-relaxation
    check_interval: int = 25
    scaling_iters: int = 10
    verbose: bool = False


@dataclass
class WarmStart:
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None
    fallback: bool = False      # set when a layout mismatch forced cold start


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    wall_time: float = 0.0
    warm_start_fallback: bool = False
    # full transformed-space vectors, used for warm starting
    x_full: np.ndarray | None = None
    y_full: np.ndarray | None = None
    s_full: np.ndarray | None = None
    # raw embedding iterate (u, v); restart-quality warm start for a
    # workspace with identical structure
    state: tuple | None = None


def warm_start(prev: SolveResult, prog: ConicProgram) -> WarmStart:
    """Warm-start fragment from a previous result on the same layout.

    Falls back to a (flagged) cold start when the variable layout differs.
    """
    if prev.x is None or len(prev.x) != prog.n:
        return WarmStart(fallback=True)
    return WarmStart(x=prev.x_full, y=prev.y_full, s=prev.s_full)


class Workspace:
    """Assembled solver workspace; reusable across b-only modifications
    (variable bound updates), which is what branch-and-bound needs."""

    def __init__(self, prog: ConicProgram, settings: Settings | None = None):
        if prog.n == 0:
            raise InvalidInput("program has no variables")
        self.prog = prog
        self.settings = settings or Settings()
        self._assemble()
        self._equilibrate()
        self._factorize()

    # -- assembly ------------------------------------------------------------

    def _assemble(self):
        prog = self.prog
        self.n_orig = prog.n
        P = prog.dense_P() if prog.P_triplets else None
        self.has_epigraph = P is not None and np.any(P)
        self.n = prog.n + (1 if self.has_epigraph else 0)
        self.t_idx = prog.n if self.has_epigraph else None

        c = np.zeros(self.n)
        c[: prog.n] = prog.q
        if self.has_epigraph:
            c[self.t_idx] = 1.0

        rows = []        # (triplets in global cols, b, cone)
        order = {ConeKind.ZERO: 0, ConeKind.NONNEGATIVE: 1,
                 ConeKind.SECOND_ORDER: 2, ConeKind.PSD: 3}
        blocks = sorted(prog.blocks, key=lambda blk: order[blk.cone.kind])
        for blk in blocks:
            rows.append((blk.triplets, blk.b, blk.cone))

        # variable-bound rows, one nonneg block; remember row slot per bound
        self.bound_rows = {}     # (var, 'lo'|'hi') -> local row in bound block
        btrip, bvals = [], []
        for i in range(prog.n):
            if np.isfinite(prog.lower[i]):
                self.bound_rows[(i, "lo")] = len(bvals)
                btrip.append((len(bvals), i, -1.0))
                bvals.append(-prog.lower[i])
            if np.isfinite(prog.upper[i]):
                self.bound_rows[(i, "hi")] = len(bvals)
                btrip.append((len(bvals), i, 1.0))
                bvals.append(prog.upper[i])
        self.bound_block_rows = len(bvals)
        if bvals:
            # insert after the other nonneg blocks to keep kind grouping
            pos = 0
            for k, (_, _, cone) in enumerate(rows):
                if order[cone.kind] <= 1:
                    pos = k + 1
            rows.insert(pos, (btrip, np.array(bvals), nonneg_cone(len(bvals))))

        if self.has_epigraph:
            # eigenfactor W of P keeping only nonzero curvature directions
            w, Q = np.linalg.eigh(P)
            keep = w > 1e-12 * max(1.0, float(w.max()))
            W = (np.sqrt(w[keep])[:, None] * Q.T[keep])
            k = W.shape[0]
            trip = [(0, self.t_idx, -1.0), (k + 1, self.t_idx, -1.0)]
            for r in range(k):
                for cidx in np.nonzero(W[r])[0]:
                    trip.append((r + 1, int(cidx), -SQRT2 * W[r, cidx]))
            bep = np.zeros(k + 2)
            bep[0] = 1.0
            bep[k + 1] = -1.0
            rows.append((trip, bep, soc_cone(k + 2)))

        # global assembly
        self.cones = []
        self.block_slices = []
        data, ri, ci = [], [], []
        boff = []
        m = 0
        self.bound_row_offset = None
        for trip, b, cone in rows:
            self.block_slices.append(slice(m, m + cone.dim))
            self.cones.append(cone)
            for r, col, val in trip:
                ri.append(m + r)
                ci.append(col)
                data.append(val)
            boff.append(np.asarray(b, dtype=float))
            if len(btrip) and trip is btrip:
                self.bound_row_offset = m
            m += cone.dim
        self.m = m
        self.A = sp.csc_matrix((data, (ri, ci)), shape=(m, self.n))
        self.b = np.concatenate(boff) if boff else np.zeros(0)
        self.c = c

        self.zero_dim = sum(cn.dim for cn in self.cones if cn.kind is ConeKind.ZERO)

        # projection plan: batch nonneg rows, same-dim SOC blocks, same-side
        # PSD blocks
        nn = [np.arange(sl.start, sl.stop) for sl, cn in
              zip(self.block_slices, self.cones) if cn.kind is ConeKind.NONNEGATIVE]
        self.nonneg_idx = np.concatenate(nn) if nn else np.zeros(0, dtype=int)
        # the bound rows of a pinned variable (lb == ub) are re-typed on the
        # fly: the upper row becomes an equality (dual free) and the lower row
        # is disabled (dual forced to zero, slack free).  Cone kinds only
        # enter the projection step, so no refactorization is needed; keeping
        # both rows as opposing inequalities stalls the splitting iteration
        # and the duplicated pair adds a null direction of A^T that masks
        # infeasibility certificates
        self._nonneg_base = self.nonneg_idx
        self._nonneg_active = np.ones(len(self._nonneg_base), dtype=bool)
        self._nonneg_pos = {int(r): k for k, r in enumerate(self._nonneg_base)}
        self._disabled_rows: set[int] = set()
        self._disabled_idx = np.zeros(0, dtype=int)
        soc_groups = {}
        for sl, cn in zip(self.block_slices, self.cones):
            if cn.kind is ConeKind.SECOND_ORDER:
                soc_groups.setdefault(cn.dim, []).append(sl)
        self._soc_plan = [
            np.array([np.arange(sl.start, sl.stop) for sl in slices])
            for slices in soc_groups.values()]
        psd_groups = {}
        for sl, cn in zip(self.block_slices, self.cones):
            if cn.kind is ConeKind.PSD:
                psd_groups.setdefault(cn.side, []).append(sl)
        self._psd_plan = {}
        for side, slices in psd_groups.items():
            tri_i, tri_j = svec_indices(side)
            scale = np.where(tri_i == tri_j, 1.0, SQRT2)
            idx = np.array([np.arange(sl.start, sl.stop) for sl in slices])
            self._psd_plan[side] = (idx, tri_i, tri_j, scale)

    def _equilibrate(self):
        """Ruiz equilibration of A with per-cone-block uniform row scaling."""
        A = self.A.tocsr(copy=True)
        m, n = A.shape
        d = np.ones(m)
        e = np.ones(n)
        for _ in range(self.settings.scaling_iters):
            absA = abs(A)
            rnorm = absA.max(axis=1).toarray().ravel()
            for sl, cn in zip(self.block_slices, self.cones):
                if cn.kind in (ConeKind.SECOND_ORDER, ConeKind.PSD):
                    rnorm[sl] = rnorm[sl].max()
            cnorm = absA.max(axis=0).toarray().ravel()
            dr = 1.0 / np.sqrt(np.where(rnorm > 1e-12, rnorm, 1.0))
            dc = 1.0 / np.sqrt(np.where(cnorm > 1e-12, cnorm, 1.0))
            A = sp.diags(dr) @ A @ sp.diags(dc)
            d *= dr
            e *= dc
        self.D = d
        self.E = e
        # balance the embedding: unit-norm scaled b and c
        self.sigma_b = 1.0 / max(np.linalg.norm(d * self.b), 1e-6)
        self.sigma_c = 1.0 / max(np.linalg.norm(e * self.c), 1e-6)
        self.A_s = A.tocsc()
        self.b_s = self.sigma_b * (d * self.b)
        self.c_s = self.sigma_c * (e * self.c)

    def _factorize(self):
        N = self.n + self.m
        M = sp.bmat([[sp.eye(self.n), self.A_s.T],
                     [-self.A_s, sp.eye(self.m)]], format="csc")
        self.lu = spla.splu(M)
        self._refresh_border()

    def _refresh_border(self):
        self.zeta = np.concatenate([self.c_s, self.b_s])
        self.mz = self.lu.solve(self.zeta)
        self.denom = 1.0 + self.zeta @ self.mz

    # -- b-only updates (variable bounds) -------------------------------------

    def set_bound(self, var: int, lb: float, ub: float):
        """Tighten/relax the box of a variable that already carries bound
        rows.  Only b changes, so the factorization is reused."""
        off = self.bound_row_offset
        if off is None:
            raise InvalidInput("program has no bound rows")
        pinned = np.isfinite(lb) and np.isfinite(ub) and lb == ub
        for side, val, sgn in (("lo", lb, -1.0), ("hi", ub, 1.0)):
            key = (var, side)
            if key not in self.bound_rows:
                raise InvalidInput(f"variable {var} has no {side} bound row")
            r = off + self.bound_rows[key]
            self.b[r] = sgn * val
            self.b_s[r] = self.sigma_b * self.D[r] * self.b[r]
            pos = self._nonneg_pos.get(r)
            if pos is not None:
                self._nonneg_active[pos] = not pinned
            if side == "lo" and pinned:
                self._disabled_rows.add(r)
            else:
                self._disabled_rows.discard(r)
        self.nonneg_idx = self._nonneg_base[self._nonneg_active]
        self._disabled_idx = np.fromiter(sorted(self._disabled_rows), dtype=int,
                                         count=len(self._disabled_rows))
        self._refresh_border()

    def get_bound_values(self):
        return dict(self.bound_rows)

    # -- projections -----------------------------------------------------------

    def _project_dual_cone_y(self, y: np.ndarray) -> np.ndarray:
        out = y.copy()
        # zero-cone duals are free; nonneg/soc/psd are self-dual
        ni = self.nonneg_idx
        if ni.size:
            out[ni] = np.maximum(out[ni], 0.0)
        if self._disabled_idx.size:
            out[self._disabled_idx] = 0.0
        for idx in self._soc_plan:
            Z = out[idx]                              # (k, dim)
            t = Z[:, 0]
            nx = np.linalg.norm(Z[:, 1:], axis=1)
            inside = nx <= t
            polar = nx <= -t
            mid = ~(inside | polar)
            if np.any(polar):
                Z[polar] = 0.0
            if np.any(mid):
                alpha = 0.5 * (t[mid] + nx[mid])
                Z[mid, 0] = alpha
                Z[mid, 1:] *= (alpha / nx[mid])[:, None]
            out[idx] = Z
        for side, (idx, ti, tj, scale) in self._psd_plan.items():
            V = out[idx] / scale                       # (k, dim)
            Mb = np.zeros((V.shape[0], side, side))
            Mb[:, ti, tj] = V
            Mb[:, tj, ti] = V
            w, Q = np.linalg.eigh(Mb)
            w = np.clip(w, 0.0, None)
            R = Q * w[:, None, :] @ np.transpose(Q, (0, 2, 1))
            out[idx] = R[:, ti, tj] * scale
        return out

    # -- main loop ---------------------------------------------------------------

    def solve(self, warm: WarmStart | None = None,
              state: tuple | None = None) -> SolveResult:
        st = self.settings
        n, m = self.n, self.m
        N = n + m
        t0 = time.perf_counter()

        u = np.zeros(N + 1)
        v = np.zeros(N + 1)
        u[N] = 1.0
        v[N] = 1.0
        used_fallback = False
        if state is not None and len(state[0]) == N + 1:
            u = state[0].copy()
            v = state[1].copy()
            if u[N] < 1e-8:   # re-center a degenerate tau
                u[N] = 1.0
        elif warm is not None and warm.x is not None:
            if (len(warm.x) == n and warm.y is not None and len(warm.y) == m
                    and warm.s is not None and len(warm.s) == m):
                u[:n] = self.sigma_b * (warm.x / self.E)
                u[n:N] = self.sigma_c * (self.D * warm.y)
                v[n:N] = self.sigma_b * (self.D * warm.s)
                v[N] = 0.0
            else:
                used_fallback = True

        A_unscaled = self.A
        b_un, c_un = self.b, self.c
        norm_b = 1.0 + np.linalg.norm(b_un)
        norm_c = 1.0 + np.linalg.norm(c_un)

        best = None
        status = Status.ITER_LIMIT
        iters = 0
        pres = dres = gap = np.inf

        for k in range(1, st.max_iters + 1):
            iters = k
            w = u + v
            g = w[:N] - w[N] * self.zeta
            p = self.lu.solve(g)
            z = p - self.mz * ((self.zeta @ p) / self.denom)
            ut_tau = w[N] + self.zeta @ z

            # over-relaxed reflection + projection onto C
            tvec_x = st.alpha * z[:n] + (1 - st.alpha) * u[:n] - v[:n]
            tvec_y = st.alpha * z[n:] + (1 - st.alpha) * u[n:N] - v[n:N]
            tvec_t = st.alpha * ut_tau + (1 - st.alpha) * u[N] - v[N]

            new_u = np.empty(N + 1)
            new_u[:n] = tvec_x
            new_u[n:N] = self._project_dual_cone_y(tvec_y)
            new_u[N] = max(tvec_t, 0.0)

            new_v = np.empty(N + 1)
            new_v[:N] = v[:N] - st.alpha * z - (1 - st.alpha) * u[:N] + new_u[:N]
            new_v[N] = v[N] - st.alpha * ut_tau - (1 - st.alpha) * u[N] + new_u[N]
            u, v = new_u, new_v

            if k % st.check_interval != 0 and k != st.max_iters:
                continue

            tau = u[N]
            if tau > 1e-12:
                x = (self.E * u[:n]) / (self.sigma_b * tau)
                y = (self.D * u[n:N]) / (self.sigma_c * tau)
                s = (v[n:N] / self.D) / (self.sigma_b * tau)
                pres = np.linalg.norm(A_unscaled @ x + s - b_un) / norm_b
                dres = np.linalg.norm(A_unscaled.T @ y + c_un) / norm_c
                ctx = c_un @ x
                bty = b_un @ y
                gap = abs(ctx + bty) / (1.0 + abs(ctx) + abs(bty))
                best = (x, y, s)
                if pres <= st.tol and dres <= st.tol and gap <= st.tol:
                    status = Status.OPTIMAL
                    break

            # certificates from the raw homogeneous variables
            ycert = self.D * u[n:N]
            btyc = b_un @ ycert
            if btyc < -1e-12:
                if np.linalg.norm(A_unscaled.T @ ycert) * norm_b <= -btyc * st.tol:
                    status = Status.INFEASIBLE
                    break
            xcert = self.E * u[:n]
            scert = v[n:N] / self.D
            ctxc = c_un @ xcert
            if ctxc < -1e-12:
                if np.linalg.norm(A_unscaled @ xcert + scert) * norm_c <= -ctxc * st.tol:
                    status = Status.UNBOUNDED
                    break

        wall = time.perf_counter() - t0
        if best is None:
            best = (np.zeros(n), np.zeros(m), np.zeros(m))
        x, y, s = best
        x_orig = x[: self.n_orig]
        objective = self.prog.objective_value(x_orig) if status in (
            Status.OPTIMAL, Status.ITER_LIMIT) else np.nan
        res = SolveResult(
            status=status, x=x_orig, objective=objective,
            primal_residual=float(pres) if np.isfinite(pres) else np.inf,
            dual_residual=float(dres) if np.isfinite(dres) else np.inf,
            gap=float(gap) if np.isfinite(gap) else np.inf,
            iterations=iters, wall_time=wall,
            x_full=x, y_full=y, s_full=s, state=(u, v))
        if used_fallback:
            res.warm_start_fallback = True
        if st.verbose:
            print(f"status={status.value} iters={iters} pres={pres:.2e} "
                  f"dres={dres:.2e} gap={gap:.2e} time={wall:.3f}s")
        return res


def solve(prog: ConicProgram, settings: Settings | None = None,
          warm: WarmStart | None = None) -> SolveResult:
    """Solve a convex conic program (binary set must be empty)."""
    if prog.binary_vars:
        raise InvalidInput("program has binary variables; use mip.solve_mip")
    if prog.n == 0 or (not prog.blocks and not prog.P_triplets
                       and not np.any(prog.q)):
        raise InvalidInput("structurally empty program")
    return Workspace(prog, settings).solve(warm)
