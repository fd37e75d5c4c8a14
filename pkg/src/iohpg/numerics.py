"""Dense real-matrix kernels: Lyapunov/Riccati solvers, ranges, sampling.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
solver validates its inputs (finite entries, square shapes) and raises a
subclass of :class:`iohpg.errors.IOHPGError` on failure.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NonFinite, NotSchur, ZeroMatrix

#: Relative singular-value cut used to decide numerical rank.
RANK_TOL = 1e-9
#: Absolute floor below which a matrix is treated as identically zero.
ZERO_FLOOR = 1e-14
#: Matrices with spectral radius above ``1 - SCHUR_MARGIN`` are not Schur.
SCHUR_MARGIN = 1e-12


def as_matrix(M, name="matrix", *, square=False) -> np.ndarray:
    """Return ``M`` as a finite float64 2-D array (scalars become 1x1)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFinite(f"{name} contains NaN or Inf")
    if square and M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    return M


def spectral_radius(A) -> float:
    A = as_matrix(A, "A", square=True)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def is_schur(A, margin: float = SCHUR_MARGIN) -> bool:
    return spectral_radius(A) < 1.0 - margin


def _doubling(A: np.ndarray, Qs: np.ndarray, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    # X = sum_t (A^T)^t Qs A^t, squaring A each sweep
    X = Qs.copy()
    Ak = A.copy()
    for _ in range(max_iter):
        inc = Ak.T @ X @ Ak
        X = X + inc
        nx = np.linalg.norm(X)
        if not np.isfinite(nx):
            break
        if np.linalg.norm(inc) <= tol * (1.0 + nx):
            return 0.5 * (X + X.T)
        Ak = Ak @ Ak
    raise NoConvergence("Lyapunov doubling did not converge")


def _check_lyap_inputs(A, Qs):
    A = as_matrix(A, "A", square=True)
    Qs = as_matrix(Qs, "Qs", square=True)
    if A.shape != Qs.shape:
        raise DimensionMismatch(f"A {A.shape} and Qs {Qs.shape} disagree")
    rho = spectral_radius(A)
    if rho >= 1.0 - SCHUR_MARGIN:
        raise NotSchur(f"spectral radius {rho:.6g} >= 1")
    return A, Qs


def solve_dlyap_transpose(A, Qs) -> np.ndarray:
    """Solve ``A^T X A - X + Qs = 0`` for Schur ``A`` (observability form)."""
    A, Qs = _check_lyap_inputs(A, Qs)
    return _doubling(A, Qs)


def solve_dlyap(A, Qs) -> np.ndarray:
    """Solve ``A X A^T - X + Qs = 0`` for Schur ``A`` (reachability form)."""
    A, Qs = _check_lyap_inputs(A, Qs)
    return _doubling(A.T.copy(), Qs)


def riccati_map(X, A, B, Qs, R) -> np.ndarray:
    """One step of the discrete Riccati recursion."""
    BtXA = B.T @ X @ A
    return A.T @ X @ A - BtXA.T @ np.linalg.solve(R + B.T @ X @ B, BtXA) + Qs


def solve_dare(A, B, Qs, R, *, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stabilizing solution of ``X = A'XA - A'XB (R + B'XB)^-1 B'XA + Qs``.

    Computed by value iteration of the Riccati map from ``X0 = Qs``; the
    iteration stops once the Frobenius change falls below
    ``tol * (1 + ||X||_F)``.
    """
    A = as_matrix(A, "A", square=True)
    B = as_matrix(B, "B")
    Qs = as_matrix(Qs, "Qs", square=True)
    R = as_matrix(R, "R", square=True)
    n, m = B.shape
    if A.shape[0] != n or Qs.shape[0] != n or R.shape[0] != m:
        raise DimensionMismatch("inconsistent DARE dimensions")
    X = Qs.copy()
    for _ in range(max_iter):
        Xn = riccati_map(X, A, B, Qs, R)
        Xn = 0.5 * (Xn + Xn.T)
        if not np.all(np.isfinite(Xn)):
            raise NonFinite("Riccati iteration produced non-finite values")
        change = np.linalg.norm(Xn - X)
        X = Xn
        if change <= tol * (1.0 + np.linalg.norm(X)):
            return X
    raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")


def orthonormal_range(M, tol: float = RANK_TOL) -> tuple[np.ndarray, int]:
    """Orthonormal basis of ``im M`` and its numerical rank.

    Singular values below ``tol * sigma_max`` are discarded.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = as_matrix(M, "M")
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] < ZERO_FLOOR:
        raise ZeroMatrix("matrix has no singular value above the zero floor")
    k = int(np.sum(s > tol * s[0]))
    return U[:, :k].copy(), k


def numerical_rank(M, tol: float = RANK_TOL) -> int:
    M = as_matrix(M, "M")
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] < ZERO_FLOOR:
        return 0
    return int(np.sum(s > tol * s[0]))


def orth_complement(P: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``im P``."""
    d, k = P.shape
    U, _, _ = np.linalg.svd(P, full_matrices=True)
    return U[:, k:].copy()


def principal_angles(P1: np.ndarray, P2: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the ranges of two orthonormal bases."""
    s = np.linalg.svd(P1.T @ P2, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def same_subspace(P1: np.ndarray, P2: np.ndarray, tol: float = 1e-8) -> bool:
    if P1.shape[1] != P2.shape[1]:
        return False
    if P1.shape[1] == 0:
        return True
    # sin of the largest angle; arccos loses precision near 0
    resid = P2 - P1 @ (P1.T @ P2)
    return float(np.linalg.norm(resid, 2)) <= tol


class RandomStream:
    """Seeded source of Gaussian draws with a draw counter.

    Wraps ``numpy.random.Generator(PCG64(seed))``, whose output is
    bit-reproducible across platforms for a given seed and call sequence.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size) -> np.ndarray:
        out = self._gen.standard_normal(size)
        self.position += int(np.size(out))
        return out

    def spawn(self, key: int) -> "RandomStream":
        """Independent child stream determined by ``(seed, key)``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        child = RandomStream.__new__(RandomStream)
        child.seed = self.seed
        child.position = 0
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, position={self.position})"


def sample_gaussian(stream: RandomStream, cov_factor) -> np.ndarray:
    """Return ``cov_factor @ z`` with ``z`` standard normal."""
    F = np.atleast_2d(np.asarray(cov_factor, dtype=float))
    return F @ stream.normal(F.shape[1])


def sample_unit_frobenius(stream: RandomStream, rows: int, cols: int) -> np.ndarray:
    """Direction uniform on the unit Frobenius sphere of ``rows x cols`` matrices."""
    if rows * cols < 1:
        raise ValueError("need at least one entry")
    while True:
        U = stream.normal((rows, cols))
        nrm = np.linalg.norm(U)
        if nrm > 0.0:
            return U / nrm
