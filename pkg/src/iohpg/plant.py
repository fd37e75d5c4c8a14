"""Ground-truth LTI plant, simulation, and its structural matrices.

The plant is ``x(t+1) = A x(t) + B u(t)``, ``y(t) = C x(t)`` with no
feedthrough and no noise. Stacked windows follow the convention
``[z]_{t-1}^{t-L} = [z(t-L); ...; z(t-1)]`` (oldest sample first).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NotMinimal, NotSchur
from .numerics import RANK_TOL, as_matrix, numerical_rank, spectral_radius, SCHUR_MARGIN


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Minimal, Schur-stable discrete-time plant ``(A, B, C)``.

    Construction rejects non-Schur ``A`` and non-minimal realizations.
    Pass ``check=False`` only for deliberately invalid test fixtures.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    name: str = ""
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = as_matrix(self.A, "A", square=True)
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        if B.shape[0] != A.shape[0] or C.shape[1] != A.shape[0]:
            raise DimensionMismatch(f"A {A.shape}, B {B.shape}, C {C.shape} are inconsistent")
        for M in (A, B, C):
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if self.check:
            rho = spectral_radius(A)
            if rho >= 1.0 - SCHUR_MARGIN:
                raise NotSchur(f"plant A is not Schur (spectral radius {rho:.6g})")
            n = self.n
            if numerical_rank(reachability(self, n), RANK_TOL) < n:
                raise NotMinimal("(A, B) is not reachable")
            if numerical_rank(observability(self, n), RANK_TOL) < n:
                raise NotMinimal("(A, C) is not observable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def r(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        return {"name": self.name, "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}


@dataclass
class StateTrace:
    """Simulated trajectory; row ``k`` of each array is time ``t0 + k``."""

    x_seq: np.ndarray
    u_seq: np.ndarray
    y_seq: np.ndarray
    t0: int = 0

    def __len__(self):
        return self.u_seq.shape[0]


def _check_L(L):
    if int(L) != L or L < 1:
        raise ValueError(f"history length must be a positive integer, got {L!r}")
    return int(L)


def observability(plant: PlantModel, L: int) -> np.ndarray:
    """Block rows ``C, CA, ..., CA^{L-1}`` (shape ``Lr x n``)."""
    L = _check_L(L)
    blocks, M = [], plant.C
    for _ in range(L):
        blocks.append(M)
        M = M @ plant.A
    return np.vstack(blocks)


def reachability(plant: PlantModel, L: int) -> np.ndarray:
    """Block columns ``A^{L-1}B, ..., AB, B`` (shape ``n x Lm``)."""
    L = _check_L(L)
    blocks, M = [], plant.B
    for _ in range(L):
        blocks.append(M)
        M = plant.A @ M
    return np.hstack(blocks[::-1])


def markov_toeplitz(plant: PlantModel, L: int) -> np.ndarray:
    """Strictly block-lower-triangular Toeplitz matrix of Markov parameters.

    Block ``(i, j)`` equals ``C A^{i-j-1} B`` for ``i > j`` and zero otherwise.
    """
    L = _check_L(L)
    m, r = plant.m, plant.r
    H = np.zeros((L * r, L * m))
    markov = []
    M = plant.B
    for _ in range(L - 1):
        markov.append(plant.C @ M)
        M = plant.A @ M
    for i in range(L):
        for j in range(i):
            H[i * r:(i + 1) * r, j * m:(j + 1) * m] = markov[i - j - 1]
    return H


def script_p(plant: PlantModel, L: int) -> np.ndarray:
    """Map ``[u-window; x(t-L)] -> v(t)``: ``[[I, 0], [H_L, O_L]]``."""
    L = _check_L(L)
    m, n = plant.m, plant.n
    top = np.hstack([np.eye(L * m), np.zeros((L * m, n))])
    bottom = np.hstack([markov_toeplitz(plant, L), observability(plant, L)])
    return np.vstack([top, bottom])


def rollout(plant: PlantModel, x0, u_seq) -> StateTrace:
    """Open-loop simulation; returns ``len(u_seq)`` steps plus the final state.

    ``x_seq`` has one more row than ``u_seq`` (it includes ``x(T)``);
    ``y_seq[k] = C x_seq[k]`` for the same rows.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u_seq = np.asarray(u_seq, dtype=float)
    if x0.shape[0] != plant.n or (u_seq.ndim == 2 and u_seq.shape[1] != plant.m) or u_seq.size % plant.m:
        raise DimensionMismatch("x0 or u_seq has the wrong dimension")
    u_seq = u_seq.reshape(-1, plant.m)
    T = u_seq.shape[0]
    xs = np.empty((T + 1, plant.n))
    xs[0] = x0
    A, B = plant.A, plant.B
    for t in range(T):
        xs[t + 1] = A @ xs[t] + B @ u_seq[t]
    ys = xs @ plant.C.T
    return StateTrace(x_seq=xs, u_seq=u_seq, y_seq=ys, t0=0)


def check_L(plant: PlantModel, L: int) -> bool:
    """True iff the L-step observability matrix has full column rank."""
    return numerical_rank(observability(plant, L), RANK_TOL) == plant.n


def observability_index(plant: PlantModel) -> int:
    for L in range(1, plant.n + 1):
        if check_L(plant, L):
            return L
    raise NotMinimal("(A, C) is not observable")


def reachability_index(plant: PlantModel) -> int:
    """Smallest ``n'`` with ``rank R_{n'} = n``."""
    for k in range(1, plant.n + 1):
        if numerical_rank(reachability(plant, k), RANK_TOL) == plant.n:
            return k
    raise NotMinimal("(A, B) is not reachable")


def random_plant(rng: np.random.Generator, n: int, m: int, r: int, radius: float = 0.9) -> PlantModel:
    """Random minimal plant with spectral radius exactly ``radius``."""
    while True:
        A = rng.standard_normal((n, n))
        A *= radius / spectral_radius(A)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((r, n))
        try:
            return PlantModel(A, B, C, name="random")
        except (NotMinimal, NotSchur):
            continue


# -- plant definition files --------------------------------------------------

def load_plant(path) -> PlantModel:
    """Read a plant definition (JSON).

    Either ``{"preset": "<name>"}`` or ``{"A": [[...]], "B": [[...]],
    "C": [[...]]}`` with row-major nested lists; ``name`` is optional.
    """
    doc = json.loads(Path(path).read_text())
    return plant_from_dict(doc)


def plant_from_dict(doc: dict) -> PlantModel:
    if "preset" in doc and "A" not in doc:
        from .presets import get_preset
        return get_preset(doc["preset"]).plant
    try:
        return PlantModel(np.array(doc["A"], dtype=float), np.array(doc["B"], dtype=float),
                          np.array(doc["C"], dtype=float), name=doc.get("name", ""))
    except KeyError as exc:
        raise DimensionMismatch(f"plant file is missing field {exc}") from None


def save_plant(plant: PlantModel, path) -> None:
    Path(path).write_text(json.dumps(plant.to_dict(), indent=2))
