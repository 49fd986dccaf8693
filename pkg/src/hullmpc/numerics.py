"""Small dense linear algebra: Jacobi eigendecomposition and SVD for
matrices up to 9x9 (4x4 in practice).

Everything here is deliberately dependency-free and deterministic: the
eigensolver is a cyclic Jacobi sweep, and the SVD is built on top of it
through the normal matrix A^T A.  At these sizes that is both fast enough
and accurate to ~1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidInput(ValueError):
    """Raised when an operation receives malformed or non-finite input."""


MAX_DIM = 9


def _check_finite(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        Q = self.eigenvectors
        return (Q * self.eigenvalues) @ Q.T


def sym_eig(A: np.ndarray, tol: float = 1e-14) -> EigenDecomposition:
    """Eigendecomposition of a small symmetric matrix via cyclic Jacobi.

    The input is symmetrized on entry; it must be symmetric to ~1e-12
    already.  Eigenvalues are returned ascending with matching
    eigenvector columns.
    """
    A = _check_finite(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("sym_eig expects a square matrix")
    n = A.shape[0]
    if n > MAX_DIM:
        raise InvalidInput(f"dimension {n} exceeds supported maximum {MAX_DIM}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise InvalidInput("matrix is not symmetric within 1e-12")

    B = 0.5 * (A + A.T)
    Q = np.eye(n)
    # Cyclic Jacobi: sweep all (p, q) pairs until off-diagonal mass is gone.
    for _ in range(100):
        off = np.sqrt(np.sum(np.tril(B, -1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = B[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = 0.5 * (B[q, q] - B[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot_p = c * B[:, p] - s * B[:, q]
                rot_q = s * B[:, p] + c * B[:, q]
                B[:, p], B[:, q] = rot_p, rot_q
                rot_p = c * B[p, :] - s * B[q, :]
                rot_q = s * B[p, :] + c * B[q, :]
                B[p, :], B[q, :] = rot_p, rot_q
                B[p, q] = B[q, p] = 0.0
                rot_p = c * Q[:, p] - s * Q[:, q]
                rot_q = s * Q[:, p] + c * Q[:, q]
                Q[:, p], Q[:, q] = rot_p, rot_q

    w = np.diag(B).copy()
    order = np.argsort(w, kind="stable")
    return EigenDecomposition(eigenvalues=w[order], eigenvectors=Q[:, order])


def _complete_basis(U: np.ndarray, have: int) -> None:
    """Fill columns have..n-1 of U with an orthonormal completion."""
    m = U.shape[0]
    k = have
    for cand in range(m):
        if k == U.shape[1]:
            break
        v = np.zeros(m)
        v[cand] = 1.0
        for j in range(k):
            v -= (U[:, j] @ v) * U[:, j]
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            U[:, k] = v / nv
            k += 1
    if k < U.shape[1]:
        raise InvalidInput("failed to complete orthonormal basis")


def svd(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a small matrix, A = U @ diag(sigma) @ V.T.

    Singular values are nonnegative and descending.  Computed from the
    Jacobi eigendecomposition of A^T A, with the left factor recovered
    through A V = U Sigma and completed to an orthonormal basis where
    singular values vanish.
    """
    A = _check_finite(A)
    if A.ndim != 2:
        raise InvalidInput("svd expects a matrix")
    m, n = A.shape
    if max(m, n) > MAX_DIM:
        raise InvalidInput(f"dimension {max(m, n)} exceeds supported maximum {MAX_DIM}")
    if m < n:
        U, s, V = svd(A.T)
        return V, s, U

    eig = sym_eig(A.T @ A)
    # descending order
    lam = eig.eigenvalues[::-1]
    V = eig.eigenvectors[:, ::-1].copy()
    sigma = np.sqrt(np.clip(lam, 0.0, None))

    U = np.zeros((m, m))
    smax = sigma[0] if n > 0 else 0.0
    k = 0
    for i in range(n):
        if sigma[i] > 1e-13 * max(1.0, smax):
            u = A @ V[:, i] / sigma[i]
            for j in range(k):
                u -= (U[:, j] @ u) * U[:, j]
            nu = np.linalg.norm(u)
            if nu > 1e-8:
                U[:, k] = u / nu
                k += 1
    _complete_basis(U, k)

    # One refinement of sigma against the recovered factors (sign fix-up):
    # sigma_i = u_i^T A v_i, guaranteed >= 0 up to roundoff for the leading
    # block; flip v where negative.
    for i in range(n):
        si = U[:, i] @ A @ V[:, i]
        if si < 0:
            V[:, i] = -V[:, i]
            si = -si
        sigma[i] = si
    return U, sigma, V
