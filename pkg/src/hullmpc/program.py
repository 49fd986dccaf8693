"""Conic program container.

A program is: minimize 0.5 x'Px + q'x + offset subject to Ax + s = b with
s lying in a product of cones, optional [lb, ub] variable boxes, and an
optional set of binary variable indices (handled by the branch-and-bound
layer; the convex solver requires it empty).

Constraint rows are held as per-block sparse triplets so builders can be
composed freely; the solver assembles them once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cones import Cone, ConeKind, nonneg_cone, psd_cone, soc_cone, zero_cone
from .numerics import InvalidInput


@dataclass
class ConstraintBlock:
    triplets: list            # (local_row, col, value)
    b: np.ndarray
    cone: Cone


@dataclass
class DisjunctionGroup:
    """Metadata for a big-M disjunction: binary k relaxes face k.

    Face k, when enforced (binary = 0), requires coeffs_k . x >= rhs_k over
    the continuous variables.  At most ``max_relaxed`` faces may be relaxed.
    Used by branch-and-bound heuristics; carries no constraint of its own.
    """

    binaries: list
    face_coeffs: list         # list of {var: coeff}
    face_rhs: list
    max_relaxed: int


class ConicProgram:
    def __init__(self, n: int = 0):
        self.n = n
        self.P_triplets: list = []     # (i, j, value), symmetric part stored once (i <= j)
        self.q = np.zeros(n)
        self.objective_offset = 0.0
        self.blocks: list[ConstraintBlock] = []
        self.binary_vars: set[int] = set()
        self.lower = np.full(n, -np.inf)
        self.upper = np.full(n, np.inf)
        self.disjunctions: list[DisjunctionGroup] = []

    # -- variables ---------------------------------------------------------

    def add_vars(self, k: int) -> range:
        start = self.n
        self.n += k
        self.q = np.concatenate([self.q, np.zeros(k)])
        self.lower = np.concatenate([self.lower, np.full(k, -np.inf)])
        self.upper = np.concatenate([self.upper, np.full(k, np.inf)])
        return range(start, start + k)

    def set_bounds(self, i: int, lb: float = -np.inf, ub: float = np.inf):
        self._check_var(i)
        if lb > ub:
            raise InvalidInput(f"lower bound {lb} exceeds upper bound {ub}")
        self.lower[i] = lb
        self.upper[i] = ub

    def mark_binary(self, i: int):
        self._check_var(i)
        self.binary_vars.add(i)
        self.set_bounds(i, 0.0, 1.0)

    def _check_var(self, i: int):
        if not (0 <= i < self.n):
            raise InvalidInput(f"variable index {i} out of range [0, {self.n})")

    # -- objective ---------------------------------------------------------

    def add_quadratic(self, i: int, j: int, value: float):
        """Add value * x_i * x_j to the objective (so 0.5*P has this entry;
        P gets value on (i,i) doubled accordingly)."""
        self._check_var(i)
        self._check_var(j)
        if i > j:
            i, j = j, i
        self.P_triplets.append((i, j, float(value)))

    def add_linear(self, i: int, value: float):
        self._check_var(i)
        self.q[i] += value

    def add_squared_term(self, indices, weight, center=None):
        """Add ||x_I - center||^2_W to the objective for diagonal weight W.

        ``weight`` may be a scalar or per-index array.  Expands to
        quadratic + linear + constant terms.
        """
        indices = list(indices)
        w = np.broadcast_to(np.asarray(weight, dtype=float), (len(indices),))
        c = np.zeros(len(indices)) if center is None else np.asarray(center, dtype=float)
        for k, i in enumerate(indices):
            if w[k] == 0.0:
                continue
            self.add_quadratic(i, i, w[k])
            if c[k] != 0.0:
                self.add_linear(i, -2.0 * w[k] * c[k])
                self.objective_offset += w[k] * c[k] ** 2

    # -- constraints -------------------------------------------------------

    def add_block(self, triplets, b, cone: Cone) -> ConstraintBlock:
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if len(b) != cone.dim:
            raise InvalidInput("offset length does not match cone dim")
        for r, c, v in triplets:
            if not (0 <= r < cone.dim):
                raise InvalidInput(f"row {r} out of range for cone dim {cone.dim}")
            self._check_var(c)
            if not np.isfinite(v):
                raise InvalidInput("non-finite constraint coefficient")
        block = ConstraintBlock(list(triplets), b, cone)
        self.blocks.append(block)
        return block

    def add_equality(self, coeffs: dict, rhs: float):
        """Single linear equality sum coeffs[i]*x_i = rhs (zero cone row)."""
        triplets = [(0, i, float(v)) for i, v in coeffs.items()]
        return self.add_block(triplets, np.array([rhs]), zero_cone(1))

    def add_inequality(self, coeffs: dict, rhs: float):
        """Single row sum coeffs[i]*x_i <= rhs (nonnegative slack)."""
        triplets = [(0, i, float(v)) for i, v in coeffs.items()]
        return self.add_block(triplets, np.array([rhs]), nonneg_cone(1))

    # -- evaluation helpers --------------------------------------------------

    def objective_value(self, x: np.ndarray) -> float:
        val = self.objective_offset + float(self.q @ x)
        for i, j, v in self.P_triplets:
            val += v * x[i] * x[j]
        return val

    def dense_P(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        for i, j, v in self.P_triplets:
            if i == j:
                P[i, i] += 2.0 * v
            else:
                P[i, j] += v
                P[j, i] += v
        return P  # objective is 0.5 x'Px + q'x

    def slacks(self, x: np.ndarray) -> list[np.ndarray]:
        out = []
        for blk in self.blocks:
            s = blk.b.copy()
            for r, c, v in blk.triplets:
                s[r] -= v * x[c]
            out.append(s)
        return out

    def max_violation(self, x: np.ndarray) -> float:
        """Worst cone/bound violation at x (0 when feasible)."""
        from .cones import project_cone

        worst = 0.0
        for blk, s in zip(self.blocks, self.slacks(x)):
            worst = max(worst, float(np.max(np.abs(s - project_cone(s, blk.cone)))))
        finite_lo = np.isfinite(self.lower)
        finite_hi = np.isfinite(self.upper)
        if np.any(finite_lo):
            worst = max(worst, float(np.max(self.lower[finite_lo] - x[finite_lo], initial=0.0)))
        if np.any(finite_hi):
            worst = max(worst, float(np.max(x[finite_hi] - self.upper[finite_hi], initial=0.0)))
        return worst

    # -- debug dump ----------------------------------------------------------

    def dump(self, path):
        """Write the program to a structured text file (see README for the
        schema) so solver issues can be reproduced offline."""
        with open(path, "w") as f:
            f.write("conic-program v1\n")
            f.write(f"n {self.n}\n")
            f.write(f"offset {float(self.objective_offset)!r}\n")
            f.write(f"P {len(self.P_triplets)}\n")
            for i, j, v in self.P_triplets:
                f.write(f"{i} {j} {float(v)!r}\n")
            f.write("q\n")
            f.write(" ".join(repr(float(v)) for v in self.q) + "\n")
            f.write("bounds\n")
            f.write(" ".join(repr(float(v)) for v in self.lower) + "\n")
            f.write(" ".join(repr(float(v)) for v in self.upper) + "\n")
            f.write(f"binaries {len(self.binary_vars)}\n")
            if self.binary_vars:
                f.write(" ".join(str(i) for i in sorted(self.binary_vars)) + "\n")
            f.write(f"blocks {len(self.blocks)}\n")
            for blk in self.blocks:
                f.write(f"block {blk.cone.kind.value} {blk.cone.dim} {blk.cone.side} "
                        f"{len(blk.triplets)}\n")
                for r, c, v in blk.triplets:
                    f.write(f"{r} {c} {float(v)!r}\n")
                f.write(" ".join(repr(float(v)) for v in blk.b) + "\n")

    @classmethod
    def load(cls, path) -> "ConicProgram":
        with open(path) as f:
            header = f.readline().strip()
            if header != "conic-program v1":
                raise InvalidInput(f"unrecognized dump header: {header!r}")
            n = int(f.readline().split()[1])
            prog = cls(n)
            prog.objective_offset = float(f.readline().split()[1])
            np_entries = int(f.readline().split()[1])
            for _ in range(np_entries):
                i, j, v = f.readline().split()
                prog.P_triplets.append((int(i), int(j), float(v)))
            assert f.readline().strip() == "q"
            prog.q = np.array([float(v) for v in f.readline().split()])
            assert f.readline().strip() == "bounds"
            prog.lower = np.array([float(v) for v in f.readline().split()])
            prog.upper = np.array([float(v) for v in f.readline().split()])
            nbin = int(f.readline().split()[1])
            if nbin:
                prog.binary_vars = set(int(i) for i in f.readline().split())
            nblocks = int(f.readline().split()[1])
            for _ in range(nblocks):
                _, kind, dim, side, ntrip = f.readline().split()
                kind = ConeKind(kind)
                dim, side, ntrip = int(dim), int(side), int(ntrip)
                if kind is ConeKind.PSD:
                    cone = psd_cone(side)
                elif kind is ConeKind.SECOND_ORDER:
                    cone = soc_cone(dim)
                elif kind is ConeKind.NONNEGATIVE:
                    cone = nonneg_cone(dim)
                else:
                    cone = zero_cone(dim)
                triplets = []
                for _ in range(ntrip):
                    r, c, v = f.readline().split()
                    triplets.append((int(r), int(c), float(v)))
                b = np.array([float(v) for v in f.readline().split()])
                prog.add_block(triplets, b, cone)
        return prog
