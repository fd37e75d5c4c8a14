"""Input-output-history (IOH) lifting of a plant.

The IOH at time ``t`` stacks the last ``L`` inputs and outputs,
``v(t) = [u(t-L); ...; u(t-1); y(t-L); ...; y(t-1)]``, of dimension
``d = L(m + r)``. It evolves as ``v(t+1) = Theta v(t) + Pi u(t)`` with
``y(t) = C Gamma v(t)`` and never leaves the ``(Lm + n)``-dimensional
reachable subspace of ``(Theta, Pi)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import plant as plant_mod
from .errors import DimensionMismatch, Inconclusive, PhiMismatch, RankDeficient, RankMismatch, Underfilled
from .numerics import RANK_TOL, as_matrix, orthonormal_range, same_subspace


@dataclass(frozen=True, eq=False)
class IOHDynamics:
    Theta: np.ndarray
    Pi: np.ndarray
    Gamma: np.ndarray
    L: int
    m: int
    r: int
    n: int
    C: np.ndarray
    script_p: np.ndarray  # maps [u-window; x(t-L)] to v(t)

    @property
    def d(self) -> int:
        return self.L * (self.m + self.r)

    @property
    def p(self) -> int:
        return self.L * self.m + self.n

    def controllability(self) -> np.ndarray:
        blocks, M = [], self.Pi
        for _ in range(self.d):
            blocks.append(M)
            M = self.Theta @ M
        return np.hstack(blocks[::-1])


@dataclass(frozen=True, eq=False)
class Projection:
    """Orthonormal basis ``P`` of the reachable subspace and the IOH moments."""

    P: np.ndarray
    Phi: np.ndarray
    PhiHat: np.ndarray
    Phi_factor: np.ndarray  # Phi = Phi_factor @ Phi_factor.T

    @property
    def p(self) -> int:
        return self.P.shape[1]


def shift_structure(L: int, m: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """The 0/1 part of ``Theta`` (without the ``C Gamma`` rows) and ``Pi``."""
    d = L * (m + r)
    S = np.zeros((d, d))
    for i in range(L - 1):
        S[i * m:(i + 1) * m, (i + 1) * m:(i + 2) * m] = np.eye(m)
        S[L * m + i * r:L * m + (i + 1) * r, L * m + (i + 1) * r:L * m + (i + 2) * r] = np.eye(r)
    Pi = np.zeros((d, m))
    Pi[(L - 1) * m:L * m] = np.eye(m)
    return S, Pi


def build_ioh(plant: plant_mod.PlantModel, L: int) -> IOHDynamics:
    if not plant_mod.check_L(plant, L):
        raise RankDeficient(f"rank O_{L} < n = {plant.n}; choose a longer history")
    m, r, n = plant.m, plant.r, plant.n
    O = plant_mod.observability(plant, L)
    H = plant_mod.markov_toeplitz(plant, L)
    RL = plant_mod.reachability(plant, L)
    AL_Opinv = np.linalg.matrix_power(plant.A, L) @ np.linalg.pinv(O)
    Gamma = np.hstack([RL - AL_Opinv @ H, AL_Opinv])
    Theta, Pi = shift_structure(L, m, r)
    d = L * (m + r)
    Theta[d - r:, :] = plant.C @ Gamma
    for M in (Theta, Pi, Gamma):
        M.setflags(write=False)
    return IOHDynamics(Theta=Theta, Pi=Pi, Gamma=Gamma, L=L, m=m, r=r, n=n,
                       C=plant.C, script_p=plant_mod.script_p(plant, L))


def reachable_projection(ioh: IOHDynamics, Phi=None, *, tol: float = RANK_TOL) -> Projection:
    """Basis of the reachable subspace and the (projected) second moment.

    ``Phi=None`` uses ``script_p @ script_p.T``: the moment of ``v(L)`` when
    ``x(0) ~ N(0, I)`` and the first ``L`` inputs are i.i.d. ``N(0, 1)``.
    A custom ``Phi`` must be PSD with ``im Phi`` equal to the subspace.
    """
    P, k = orthonormal_range(ioh.controllability(), tol)
    if k != ioh.p:
        raise RankMismatch(f"reachable subspace has dimension {k}, expected Lm+n = {ioh.p}")
    Ps, ks = orthonormal_range(ioh.script_p, tol)
    if ks != k or not same_subspace(P, Ps, 1e-8):
        raise RankMismatch("controllability range of (Theta, Pi) disagrees with script_p")
    if Phi is None:
        factor = ioh.script_p.copy()
        Phi = factor @ factor.T
    else:
        Phi = as_matrix(Phi, "Phi", square=True)
        if Phi.shape[0] != ioh.d:
            raise DimensionMismatch(f"Phi must be {ioh.d}x{ioh.d}")
        Phi = 0.5 * (Phi + Phi.T)
        w, V = np.linalg.eigh(Phi)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise PhiMismatch("Phi is not positive semidefinite")
        factor = V * np.sqrt(np.clip(w, 0.0, None))
    Pphi, kphi = orthonormal_range(Phi, tol)
    if kphi != k or not same_subspace(P, Pphi, 1e-6):
        raise PhiMismatch("im Phi differs from the reachable subspace")
    PhiHat = P.T @ Phi @ P
    PhiHat = 0.5 * (PhiHat + PhiHat.T)
    for M in (P, Phi, PhiHat, factor):
        M.setflags(write=False)
    return Projection(P=P, Phi=Phi, PhiHat=PhiHat, Phi_factor=factor)


def project_closed_loop(ioh: IOHDynamics, proj: Projection, K) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(P'(Theta + Pi K)P, K P, Gamma P)``."""
    K = as_matrix(K, "K")
    if K.shape != (ioh.m, ioh.d):
        raise DimensionMismatch(f"gain must be {ioh.m}x{ioh.d}, got {K.shape}")
    P = proj.P
    return P.T @ (ioh.Theta + ioh.Pi @ K) @ P, K @ P, ioh.Gamma @ P


class IOHBuffer:
    """Sliding window of the last ``L`` input/output pairs."""

    def __init__(self, L: int, m: int, r: int):
        self.L, self.m, self.r = int(L), int(m), int(r)
        self._u = deque(maxlen=self.L)
        self._y = deque(maxlen=self.L)
        self.t = 0

    def push(self, u, y) -> "IOHBuffer":
        u = np.asarray(u, dtype=float).reshape(self.m)
        y = np.asarray(y, dtype=float).reshape(self.r)
        self._u.append(u.copy())
        self._y.append(y.copy())
        self.t += 1
        return self

    @property
    def filled(self) -> bool:
        return len(self._u) == self.L

    def current_v(self) -> np.ndarray:
        if not self.filled:
            raise Underfilled(f"{len(self._u)} of {self.L} pairs pushed")
        return np.concatenate(list(self._u) + list(self._y))

    def load(self, v) -> "IOHBuffer":
        """Overwrite the window from a stacked IOH vector."""
        v = np.asarray(v, dtype=float).reshape(-1)
        Lm = self.L * self.m
        self._u = deque(v[:Lm].reshape(self.L, self.m), maxlen=self.L)
        self._y = deque(v[Lm:].reshape(self.L, self.r), maxlen=self.L)
        return self


def buffer_push(buf: IOHBuffer, u, y) -> IOHBuffer:
    return buf.push(u, y)


def ioh_windows(u_seq, y_seq, L: int) -> np.ndarray:
    """Stack ``v(t)`` for ``t = L .. T`` from input/output records (rows = time)."""
    u_seq = np.asarray(u_seq, dtype=float)
    y_seq = np.asarray(y_seq, dtype=float)
    T = min(u_seq.shape[0], y_seq.shape[0])
    rows = []
    for t in range(L, T + 1):
        rows.append(np.concatenate([u_seq[t - L:t].ravel(), y_seq[t - L:t].ravel()]))
    return np.array(rows)


def gap_rank(M, gap: float = 1e3) -> int:
    """Rank of PSD ``M`` at its largest singular-value ratio, if that ratio is at least ``gap``."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] <= 0:
        return 0
    pos = s[s > 0]
    if len(pos) < len(s):
        fi = np.finfo(float)
        s = np.append(pos, max(pos[-1] * fi.eps ** 2, fi.tiny))
    if len(s) == 1:
        return 1
    ratios = s[:-1] / s[1:]
    i = int(np.argmax(ratios))
    return i + 1 if ratios[i] >= gap else len(s)


def estimate_L(moments: Mapping[int, np.ndarray], m: int, gap: float = 1e3) -> int:
    """Smallest history length at which ``rank E[v v'] - L m`` stops growing.

    ``moments`` maps each candidate ``L`` to an empirical second moment of
    its IOH (or to a sample matrix with one IOH per row). The cut between
    signal and numerical noise is the largest singular-value ratio, used when
    it is at least ``gap``; this is a heuristic and can fail on badly scaled data.
    """
    if not moments:
        raise Inconclusive("no candidate history lengths")
    excess = {}
    for L in sorted(moments):
        M = np.asarray(moments[L], dtype=float)
        d = M.shape[1]
        if M.shape[0] != d or not np.allclose(M, M.T):
            M = M.T @ M / M.shape[0]
        excess[L] = gap_rank(M, gap) - L * m
    Ls = sorted(excess)
    for i, L in enumerate(Ls[:-1]):
        if all(excess[L2] == excess[L] for L2 in Ls[i + 1:]):
            return L
    raise Inconclusive(f"no rank plateau among candidates {Ls}: excess ranks {excess}")

