"""Cones, Euclidean cone projections, and rotation-hull constraint builders.

The two hull builders encode membership of a rotation-like state in the
convex hull of SO(2) (a unit disk, one second-order cone) and of SO(3)
(a 4x4 linear matrix inequality, one PSD cone).  PSD slacks are stored in
scaled-lower-triangular (svec) form so the cone inner product matches the
Euclidean one and a single projection interface serves every cone kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numerics import InvalidInput, _check_finite, svd, sym_eig

SQRT2 = np.sqrt(2.0)


class ConeKind(Enum):
    ZERO = "zero"
    NONNEGATIVE = "nonneg"
    SECOND_ORDER = "soc"
    PSD = "psd"


@dataclass(frozen=True)
class Cone:
    """A cone block of a conic program's slack vector.

    ``dim`` is the slack-vector length; for PSD cones dim = m(m+1)/2
    with the matrix side m kept in ``side``.
    """

    kind: ConeKind
    dim: int
    side: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput("cone dim must be >= 1")
        if self.kind is ConeKind.SECOND_ORDER and self.dim < 2:
            raise InvalidInput("second-order cone needs dim >= 2")
        if self.kind is ConeKind.PSD:
            if not (1 <= self.side <= 4):
                raise InvalidInput("PSD cone side must be in 1..4")
            if self.dim != self.side * (self.side + 1) // 2:
                raise InvalidInput("PSD cone dim must be side*(side+1)/2")


def zero_cone(dim: int) -> Cone:
    return Cone(ConeKind.ZERO, dim)


def nonneg_cone(dim: int) -> Cone:
    return Cone(ConeKind.NONNEGATIVE, dim)


def soc_cone(dim: int) -> Cone:
    return Cone(ConeKind.SECOND_ORDER, dim)


def psd_cone(side: int) -> Cone:
    return Cone(ConeKind.PSD, side * (side + 1) // 2, side)


# ---------------------------------------------------------------------------
# svec / smat: scaled lower-triangular storage, column by column.


def svec_indices(side: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for j in range(side):
        for i in range(j, side):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def svec(M: np.ndarray) -> np.ndarray:
    """Symmetric matrix -> vector with off-diagonals scaled by sqrt(2)."""
    side = M.shape[0]
    out = []
    for j in range(side):
        for i in range(j, side):
            out.append(M[i, j] if i == j else SQRT2 * M[i, j])
    return np.array(out)


def smat(v: np.ndarray, side: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    M = np.zeros((side, side))
    k = 0
    for j in range(side):
        for i in range(j, side):
            if i == j:
                M[i, j] = v[k]
            else:
                M[i, j] = M[j, i] = v[k] / SQRT2
            k += 1
    return M


# ---------------------------------------------------------------------------
# Projections.


def project_cone(z: np.ndarray, cone: Cone) -> np.ndarray:
    """Euclidean projection of ``z`` onto ``cone``.  Idempotent."""
    z = np.asarray(z, dtype=float)
    if z.shape != (cone.dim,):
        raise InvalidInput(f"slack length {z.shape} does not match cone dim {cone.dim}")
    if cone.kind is ConeKind.ZERO:
        return np.zeros_like(z)
    if cone.kind is ConeKind.NONNEGATIVE:
        return np.maximum(z, 0.0)
    if cone.kind is ConeKind.SECOND_ORDER:
        t, x = z[0], z[1:]
        nx = np.linalg.norm(x)
        if nx <= t:
            return z.copy()
        if nx <= -t:
            return np.zeros_like(z)
        alpha = 0.5 * (t + nx)
        out = np.empty_like(z)
        out[0] = alpha
        out[1:] = (alpha / nx) * x
        return out
    # PSD: eigenvalue clipping in svec coordinates.
    M = smat(z, cone.side)
    w, Q = np.linalg.eigh(M)
    w = np.clip(w, 0.0, None)
    return svec((Q * w) @ Q.T)


def project_dual_cone(z: np.ndarray, cone: Cone) -> np.ndarray:
    """Projection onto the dual cone; zero cone's dual is all of R^dim."""
    if cone.kind is ConeKind.ZERO:
        return np.asarray(z, dtype=float).copy()
    return project_cone(z, cone)  # the other kinds are self-dual


# ---------------------------------------------------------------------------
# Hull membership rows.  Convention: rows are (A_triplets, b, cone) with the
# slack s = b - A x required to be in the cone.


def so2_hull_rows(var_index_a: int, var_index_b: int, num_vars: int):
    """Second-order-cone rows encoding (a, b) in the unit disk.

    Slack layout: s = (1, a, b), so feasibility is ||(a, b)|| <= 1.
    Returns (triplets, b, cone); triplets are (row, col, value).
    """
    if var_index_a == var_index_b:
        raise InvalidInput("disk constraint needs two distinct variables")
    for idx in (var_index_a, var_index_b):
        if not (0 <= idx < num_vars):
            raise InvalidInput(f"variable index {idx} out of range [0, {num_vars})")
    triplets = [(1, var_index_a, -1.0), (2, var_index_b, -1.0)]
    b = np.array([1.0, 0.0, 0.0])
    return triplets, b, soc_cone(3)


# Coefficient map of the 4x4 LMI certifying X in conv(SO(3)): entry (i, j)
# of the matrix is lmi_offset[i,j] + sum_k lmi_coeff[i,j][k] * x_k with x
# the row-major flattening of X.
_LMI_TERMS = {
    (0, 0): [(0, 1.0), (4, 1.0), (8, 1.0)],
    (1, 1): [(0, 1.0), (4, -1.0), (8, -1.0)],
    (2, 2): [(0, -1.0), (4, 1.0), (8, -1.0)],
    (3, 3): [(0, -1.0), (4, -1.0), (8, 1.0)],
    (1, 0): [(7, 1.0), (5, -1.0)],   # x32 - x23
    (2, 0): [(2, 1.0), (6, -1.0)],   # x13 - x31
    (3, 0): [(3, 1.0), (1, -1.0)],   # x21 - x12
    (2, 1): [(3, 1.0), (1, 1.0)],    # x21 + x12
    (3, 1): [(2, 1.0), (6, 1.0)],    # x13 + x31
    (3, 2): [(7, 1.0), (5, 1.0)],    # x32 + x23
}


def so3_hull_lmi(X: np.ndarray) -> np.ndarray:
    """The 4x4 matrix whose positive semidefiniteness certifies that the
    3x3 matrix X lies in the convex hull of SO(3)."""
    X = _check_finite(X, "X")
    x = X.reshape(9)
    M = np.eye(4)
    for (i, j), terms in _LMI_TERMS.items():
        val = sum(c * x[k] for k, c in terms)
        if i == j:
            M[i, j] += val
        else:
            M[i, j] = M[j, i] = val
    return M


def so3_hull_rows(var_indices_x, num_vars: int):
    """PSD rows encoding a 3x3 block of variables in conv(SO(3)).

    ``var_indices_x`` lists the nine variable indices in row-major order
    x11..x33.  The slack is the svec of the 4x4 LMI matrix.
    """
    idx = list(var_indices_x)
    if len(idx) != 9 or len(set(idx)) != 9:
        raise InvalidInput("need nine distinct variable indices for conv(SO(3))")
    for i in idx:
        if not (0 <= i < num_vars):
            raise InvalidInput(f"variable index {i} out of range [0, {num_vars})")

    cone = psd_cone(4)
    rows_i, cols_j = svec_indices(4)
    b = np.zeros(cone.dim)
    triplets = []
    for r in range(cone.dim):
        i, j = int(rows_i[r]), int(cols_j[r])
        scale = 1.0 if i == j else SQRT2
        if i == j:
            b[r] = 1.0  # identity offset on the diagonal
        for k, c in _LMI_TERMS.get((i, j), []):
            triplets.append((r, idx[k], -scale * c))
    return triplets, b, cone


# ---------------------------------------------------------------------------
# Rounding hull points back onto SO(n).


@dataclass(frozen=True)
class RotationProjection:
    rotation: np.ndarray
    distance: float
    unique: bool


def project_to_SOn(S: np.ndarray) -> RotationProjection:
    """Nearest proper rotation to S in Frobenius norm.

    Uses the SVD with a determinant sign correction so the result lies in
    SO(n) even when det(S) <= 0.  When the nearest rotation is not unique
    (degenerate spectrum, e.g. S = 0) a valid rotation is still returned
    with ``unique=False``.
    """
    S = _check_finite(S, "S")
    n = S.shape[0]
    if S.shape != (n, n) or n not in (2, 3):
        raise InvalidInput("project_to_SOn expects a square 2x2 or 3x3 matrix")
    U, sigma, V = svd(S)
    d = np.sign(np.linalg.det(U @ V.T))
    if d == 0.0:
        d = 1.0
    D = np.ones(n)
    D[-1] = d
    R = (U * D) @ V.T
    # Uniqueness: the minimizer is unique iff sigma[n-2] + d*sigma[n-1] > 0.
    unique = bool(sigma[n - 2] + d * sigma[n - 1] > 1e-12)
    return RotationProjection(rotation=R, distance=float(np.linalg.norm(S - R)), unique=unique)
