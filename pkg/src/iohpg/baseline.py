"""Model-based optimal references: LQR gain, optimal IOH gain, optimal cost."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotSchur
from .ioh import IOHDynamics, Projection
from .numerics import as_matrix, is_schur, orth_complement, solve_dare
from .plant import PlantModel


@dataclass(frozen=True, eq=False)
class OptimalReference:
    X: np.ndarray
    K_SF: np.ndarray
    K_star: np.ndarray
    J_star: float
    Gamma_bar: np.ndarray


def optimal_state_gain(plant: PlantModel, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """DARE solution ``X`` for state weight ``C'QC`` and ``K_SF = -(R + B'XB)^-1 B'XA``."""
    Q = as_matrix(Q, "Q", square=True)
    R = as_matrix(R, "R", square=True)
    A, B, C = plant.A, plant.B, plant.C
    X = solve_dare(A, B, C.T @ Q @ C, R)
    K_SF = -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
    if not is_schur(A + B @ K_SF):
        raise NotSchur("optimal state feedback does not stabilize the plant")
    return X, K_SF


def default_kernel_map(ioh: IOHDynamics) -> np.ndarray:
    """Deterministic ``n x (d - p)`` coefficient matrix for the off-subspace term."""
    return np.eye(ioh.n, ioh.d - ioh.p)


def gamma_bar(ioh: IOHDynamics, proj: Projection, M=None) -> np.ndarray:
    """``M @ Pbar'`` with ``Pbar`` spanning the complement of the reachable subspace.

    Its kernel always contains the subspace; it equals it only when ``M``
    has full column rank, which needs ``Lr - n <= n``.
    """
    Pbar = orth_complement(proj.P)
    if M is None:
        M = default_kernel_map(ioh)
    M = np.asarray(M, dtype=float).reshape(ioh.n, Pbar.shape[1])
    return M @ Pbar.T


def optimal_ioh_gain(ioh: IOHDynamics, proj: Projection, K_SF, M=None) -> np.ndarray:
    K_SF = as_matrix(K_SF, "K_SF")
    if K_SF.shape != (ioh.m, ioh.n):
        raise DimensionMismatch(f"K_SF must be {ioh.m}x{ioh.n}")
    return K_SF @ (ioh.Gamma + gamma_bar(ioh, proj, M))


def optimal_cost(plant: PlantModel, ioh: IOHDynamics, proj: Projection, Q, R, X=None) -> float:
    """``tr(X Gamma Phi Gamma')``: the LQR value of ``x(L) = Gamma v(L)``."""
    if X is None:
        X, _ = optimal_state_gain(plant, Q, R)
    G = ioh.Gamma
    return float(np.trace(X @ G @ proj.Phi @ G.T))


def optimal_reference(plant: PlantModel, ioh: IOHDynamics, proj: Projection, Q, R, M=None) -> OptimalReference:
    X, K_SF = optimal_state_gain(plant, Q, R)
    Gb = gamma_bar(ioh, proj, M)
    return OptimalReference(
        X=X, K_SF=K_SF, K_star=K_SF @ (ioh.Gamma + Gb),
        J_star=optimal_cost(plant, ioh, proj, Q, R, X=X), Gamma_bar=Gb,
    )
