"""Dynamic output-feedback realization of an IOH gain.

A gain ``K = [A_L ... A_1, B_L ... B_1]`` implements
``u(t) = sum_i A_i u(t-i) + B_i y(t-i)``. The same law is produced by the
order-``Lm`` controller

    xi(t+1) = Xi xi(t) + Lambda y(t),   u(t) = Omega xi(t)

in observer-companion form, started from a state ``xi(0)`` that replays the
first ``L`` inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SingularObservability
from .numerics import as_matrix
from .plant import PlantModel, StateTrace

COND_LIMIT = 1e12


@dataclass(eq=False)
class DynamicController:
    Xi: np.ndarray
    Lambda: np.ndarray
    Omega: np.ndarray
    L: int
    m: int
    r: int
    xi0: np.ndarray | None = None

    @property
    def order(self) -> int:
        return self.Xi.shape[0]

    def to_dict(self) -> dict:
        return {
            "Xi": self.Xi.tolist(), "Lambda": self.Lambda.tolist(), "Omega": self.Omega.tolist(),
            "xi0": None if self.xi0 is None else np.asarray(self.xi0).tolist(),
            "L": self.L, "m": self.m, "r": self.r,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DynamicController":
        xi0 = doc.get("xi0")
        return cls(Xi=np.array(doc["Xi"], dtype=float), Lambda=np.array(doc["Lambda"], dtype=float),
                   Omega=np.array(doc["Omega"], dtype=float), L=int(doc["L"]), m=int(doc["m"]),
                   r=int(doc["r"]), xi0=None if xi0 is None else np.array(xi0, dtype=float))


def split_gain(K, L: int, m: int, r: int) -> tuple[list, list]:
    """Return ``([A_1, ..., A_L], [B_1, ..., B_L])``; ``A_i`` multiplies ``u(t-i)``."""
    K = as_matrix(K, "K")
    if K.shape != (m, L * (m + r)):
        raise DimensionMismatch(f"K must be {m}x{L * (m + r)}, got {K.shape}")
    Ku, Ky = K[:, :L * m], K[:, L * m:]
    A = [Ku[:, (L - i) * m:(L - i + 1) * m] for i in range(1, L + 1)]
    B = [Ky[:, (L - i) * r:(L - i + 1) * r] for i in range(1, L + 1)]
    return A, B


def realize(K, L: int, m: int, r: int) -> DynamicController:
    A, B = split_gain(K, L, m, r)
    n = L * m
    Xi = np.zeros((n, n))
    for k in range(1, L):
        Xi[k * m:(k + 1) * m, (k - 1) * m:k * m] = np.eye(m)
    # last block column [A_L; ...; A_1], Lambda = [B_L; ...; B_1]
    Xi[:, (L - 1) * m:] = np.vstack(A[::-1])
    Lam = np.vstack(B[::-1])
    Omega = np.zeros((m, n))
    Omega[:, (L - 1) * m:] = np.eye(m)
    return DynamicController(Xi=Xi, Lambda=Lam, Omega=Omega, L=L, m=m, r=r)


def controller_observability(ctrl: DynamicController) -> np.ndarray:
    """``[Omega; Omega Xi; ...; Omega Xi^(L-1)]``."""
    rows, M = [], ctrl.Omega
    for _ in range(ctrl.L):
        rows.append(M)
        M = M @ ctrl.Xi
    return np.vstack(rows)


def controller_toeplitz(ctrl: DynamicController) -> np.ndarray:
    """Block lower-triangular map from ``y(0..L-1)`` to ``u(0..L-1)``."""
    L, m, r = ctrl.L, ctrl.m, ctrl.r
    marks, M = [], ctrl.Omega
    for _ in range(L - 1):
        marks.append(M @ ctrl.Lambda)
        M = M @ ctrl.Xi
    H = np.zeros((L * m, L * r))
    for i in range(L):
        for j in range(i):
            H[i * m:(i + 1) * m, j * r:(j + 1) * r] = marks[i - j - 1]
    return H


def initial_state(ctrl: DynamicController, v_L) -> np.ndarray:
    """Controller state at time 0 that reproduces the stored input window.

    ``v_L = [u(0..L-1); y(0..L-1)]``. Raises :class:`SingularObservability`
    when the controller observability matrix is numerically singular.
    """
    L, m, r = ctrl.L, ctrl.m, ctrl.r
    v_L = np.asarray(v_L, dtype=float).ravel()
    if v_L.size != L * (m + r):
        raise DimensionMismatch(f"v(L) must have length {L * (m + r)}")
    O = controller_observability(ctrl)
    cond = np.linalg.cond(O)
    if not cond < COND_LIMIT:
        raise SingularObservability(f"controller observability matrix has condition {cond:.3g}")
    H = controller_toeplitz(ctrl)
    return np.linalg.solve(O, v_L[:L * m] - H @ v_L[L * m:])


def _warmup(plant: PlantModel, x0, u_init, L):
    u_init = np.asarray(u_init, dtype=float).reshape(L, plant.m)
    x = np.asarray(x0, dtype=float).ravel().copy()
    ys = np.empty((L, plant.r))
    for t in range(L):
        ys[t] = plant.C @ x
        x = plant.A @ x + plant.B @ u_init[t]
    return u_init, ys


def simulate_dynamic_closed_loop(plant: PlantModel, ctrl: DynamicController, x0, u_init,
                                 T: int = 200) -> StateTrace:
    """Plant driven by ``u_init`` for ``t < L`` and by the controller afterwards.

    The controller runs from ``t = 0`` with ``xi(0)`` from :func:`initial_state`,
    so its output over the warm-up matches ``u_init``.
    """
    L = ctrl.L
    u_init, ys_w = _warmup(plant, x0, u_init, L)
    xi = initial_state(ctrl, np.concatenate([u_init.ravel(), ys_w.ravel()]))
    ctrl.xi0 = xi.copy()
    x = np.asarray(x0, dtype=float).ravel().copy()
    xs, us, ys = [x.copy()], np.empty((T, plant.m)), np.empty((T, plant.r))
    for t in range(T):
        y = plant.C @ x
        u = u_init[t] if t < L else ctrl.Omega @ xi
        xi = ctrl.Xi @ xi + ctrl.Lambda @ y
        x = plant.A @ x + plant.B @ u
        us[t], ys[t] = u, y
        xs.append(x.copy())
    return StateTrace(x_seq=np.array(xs), u_seq=us, y_seq=ys)


def simulate_ioh_closed_loop(plant: PlantModel, K, L: int, x0, u_init, T: int = 200) -> StateTrace:
    """Plant driven by ``u_init`` for ``t < L`` and by ``u = K v(t)`` afterwards."""
    m, r = plant.m, plant.r
    K = as_matrix(K, "K")
    u_init = np.asarray(u_init, dtype=float).reshape(L, m)
    x = np.asarray(x0, dtype=float).ravel().copy()
    xs, us, ys = [x.copy()], np.empty((T, m)), np.empty((T, r))
    for t in range(T):
        y = plant.C @ x
        if t < L:
            u = u_init[t]
        else:
            v = np.concatenate([us[t - L:t].ravel(), ys[t - L:t].ravel()])
            u = K @ v
        x = plant.A @ x + plant.B @ u
        us[t], ys[t] = u, y
        xs.append(x.copy())
    return StateTrace(x_seq=np.array(xs), u_seq=us, y_seq=ys)


def simulate_state_feedback(plant: PlantModel, K_SF, L: int, x0, u_init, T: int = 200) -> StateTrace:
    """Same warm-up, then full-state feedback ``u = K_SF x`` (reference trajectory)."""
    u_init = np.asarray(u_init, dtype=float).reshape(L, plant.m)
    x = np.asarray(x0, dtype=float).ravel().copy()
    xs, us, ys = [x.copy()], np.empty((T, plant.m)), np.empty((T, plant.r))
    for t in range(T):
        y = plant.C @ x
        u = u_init[t] if t < L else K_SF @ x
        x = plant.A @ x + plant.B @ u
        us[t], ys[t] = u, y
        xs.append(x.copy())
    return StateTrace(x_seq=np.array(xs), u_seq=us, y_seq=ys)


def save_controller(ctrl: DynamicController, path, extra: dict | None = None) -> None:
    doc = ctrl.to_dict()
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2))


def load_controller(path) -> DynamicController:
    return DynamicController.from_dict(json.loads(Path(path).read_text()))
