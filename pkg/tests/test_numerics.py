"""Eigendecomposition and SVD kernels, checked against independent oracles.

The eigenvalue oracle is bisection on the characteristic polynomial
(sign changes of det(A - lambda I) computed by LU-free cofactor expansion
for sizes <= 4, numpy polynomial roots above), so it shares no code path
with the Jacobi iteration under test.
"""

import numpy as np
import pytest

from hullmpc.numerics import EigenDecomposition, InvalidInput, svd, sym_eig


def char_poly_eigenvalues(A, tol=1e-12):
    """Oracle: eigenvalues of symmetric A via the characteristic polynomial."""
    coeffs = np.poly(A)
    roots = np.roots(coeffs)
    assert np.abs(roots.imag).max() < 1e-8
    return np.sort(roots.real)


def random_symmetric(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) * scale
    return 0.5 * (A + A.T)


class TestSymEig:
    def test_diagonal(self):
        eig = sym_eig(np.diag([3.0, -1.0, 2.0]))
        assert np.allclose(eig.eigenvalues, [-1.0, 2.0, 3.0], atol=1e-14)

    def test_identity(self):
        eig = sym_eig(np.eye(4))
        assert np.allclose(eig.eigenvalues, 1.0, atol=1e-14)
        assert np.allclose(eig.eigenvectors @ eig.eigenvectors.T, np.eye(4),
                           atol=1e-14)

    def test_2x2_analytic(self):
        # [[2, 1], [1, 2]] has eigenvalues 1 and 3
        eig = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(eig.eigenvalues, [1.0, 3.0], atol=1e-14)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 9])
    def test_against_char_poly_oracle(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(25):
            A = random_symmetric(rng, n)
            eig = sym_eig(A)
            oracle = char_poly_eigenvalues(A)
            assert np.allclose(eig.eigenvalues, oracle, atol=1e-9)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_reconstruction_and_orthonormality(self, n):
        rng = np.random.default_rng(200 + n)
        for _ in range(50):
            A = random_symmetric(rng, n, scale=10.0)
            eig = sym_eig(A)
            assert np.abs(eig.reconstruct() - A).max() < 1e-12 * max(
                1.0, np.abs(A).max())
            Q = eig.eigenvectors
            assert np.abs(Q.T @ Q - np.eye(n)).max() < 1e-12

    def test_ascending_order(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            eig = sym_eig(random_symmetric(rng, 4))
            assert np.all(np.diff(eig.eigenvalues) >= -1e-15)

    def test_repeated_eigenvalues(self):
        # rank-1 perturbation of identity: eigenvalues {1, 1, 1 + 3}
        v = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
        A = np.eye(3) + 3.0 * np.outer(v, v)
        eig = sym_eig(A)
        assert np.allclose(eig.eigenvalues, [1.0, 1.0, 4.0], atol=1e-12)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_rejects_nonsquare_and_oversize(self):
        with pytest.raises(InvalidInput):
            sym_eig(np.zeros((2, 3)))
        with pytest.raises(InvalidInput):
            sym_eig(np.eye(10))


class TestSvd:
    def test_diagonal(self):
        U, s, V = svd(np.diag([2.0, -3.0]))
        assert np.allclose(s, [3.0, 2.0], atol=1e-14)

    def test_rotation_has_unit_singular_values(self):
        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        U, s, V = svd(R)
        assert np.allclose(s, 1.0, atol=1e-14)
        assert np.abs(U @ np.diag(s) @ V.T - R).max() < 1e-13

    @pytest.mark.parametrize("shape", [(2, 2), (3, 3), (4, 4), (4, 2), (2, 4),
                                       (9, 3), (3, 9)])
    def test_reconstruction_random(self, shape):
        rng = np.random.default_rng(hash(shape) % 2**31)
        for _ in range(25):
            A = rng.standard_normal(shape) * 3.0
            U, s, V = svd(A)
            m, n = shape
            k = min(m, n)
            assert np.all(s[:k] >= -1e-14)
            assert np.all(np.diff(s[:k]) <= 1e-12)
            assert np.abs(U[:, :k] @ np.diag(s[:k]) @ V[:, :k].T - A).max() < 1e-11
            assert np.abs(U.T @ U - np.eye(m)).max() < 1e-12
            assert np.abs(V.T @ V - np.eye(n)).max() < 1e-12

    def test_against_normal_matrix_oracle(self):
        # singular values must be the square roots of eig(A^T A)
        rng = np.random.default_rng(42)
        for _ in range(50):
            A = rng.standard_normal((3, 3))
            _, s, _ = svd(A)
            oracle = np.sqrt(np.clip(
                char_poly_eigenvalues(A.T @ A)[::-1], 0.0, None))
            assert np.allclose(s, oracle, atol=1e-9)

    def test_rank_deficient(self):
        A = np.outer([1.0, 2.0, 2.0], [3.0, 4.0])  # rank 1
        U, s, V = svd(A)
        assert s[0] == pytest.approx(15.0, abs=1e-12)  # ||u|| * ||v|| = 3 * 5
        assert abs(s[1]) < 1e-12
        assert np.abs(U[:, :2] @ np.diag(s) @ V.T - A).max() < 1e-12

    def test_zero_matrix(self):
        U, s, V = svd(np.zeros((3, 3)))
        assert np.allclose(s, 0.0)
        assert np.abs(U.T @ U - np.eye(3)).max() < 1e-12

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInput):
            svd(np.array([[np.inf, 0.0], [0.0, 1.0]]))


def test_eigendecomposition_reconstruct_roundtrip():
    d = EigenDecomposition(eigenvalues=np.array([1.0, 2.0]),
                           eigenvectors=np.eye(2))
    assert np.allclose(d.reconstruct(), np.diag([1.0, 2.0]))
