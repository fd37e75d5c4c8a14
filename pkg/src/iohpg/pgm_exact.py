"""Exact cost, exact gradient and model-based gradient descent on IOH gains.

All quantities are evaluated on the projected closed loop
``Theta_hat_K = P'(Theta + Pi K)P`` of dimension ``p = Lm + n``:

* ``Psi_hat`` solves ``Theta_hat' Psi_hat Theta_hat - Psi_hat = -(Q_hat + K_hat' R K_hat)``
* ``V_hat`` solves ``Theta_hat V_hat Theta_hat' - V_hat = -Phi_hat``
* ``J(K) = tr(Phi_hat Psi_hat)`` and ``grad J(K) = 2 E_K P V_hat P'``.
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import Diverged, NotInSublevel, NotSchur, Unbounded
from .ioh import IOHDynamics, Projection, project_closed_loop
from .numerics import as_matrix, is_schur, solve_dlyap, solve_dlyap_transpose


@dataclass
class CostModel:
    """Output/input weights and the sublevel bound ``c``.

    ``c=None`` means "twice the cost of the zero gain", filled in by
    :func:`resolve_sublevel`.
    """

    Q: np.ndarray
    R: np.ndarray
    c: float | None = None

    def __post_init__(self):
        self.Q = as_matrix(self.Q, "Q", square=True)
        self.R = as_matrix(self.R, "R", square=True)
        for name, M in (("Q", self.Q), ("R", self.R)):
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")


@dataclass
class GradientParts:
    PsiHat: np.ndarray
    VHat: np.ndarray
    E_K: np.ndarray
    grad: np.ndarray
    J: float


def q_hat(ioh: IOHDynamics, proj: Projection, cost: CostModel) -> np.ndarray:
    Gh = ioh.Gamma @ proj.P
    return Gh.T @ ioh.C.T @ cost.Q @ ioh.C @ Gh


def _closed_loop(ioh, proj, K):
    Th, Kh, Gh = project_closed_loop(ioh, proj, K)
    if not is_schur(Th):
        raise Unbounded("projected closed loop is not Schur; the cost is unbounded")
    return Th, Kh, Gh


def value_matrix(ioh: IOHDynamics, proj: Projection, cost: CostModel, K) -> np.ndarray:
    Th, Kh, _ = _closed_loop(ioh, proj, K)
    return solve_dlyap_transpose(Th, q_hat(ioh, proj, cost) + Kh.T @ cost.R @ Kh)


def lq_cost(ioh: IOHDynamics, proj: Projection, cost: CostModel, K) -> float:
    """``J(K) = tr(Phi_hat Psi_hat_K)``; raises :class:`Unbounded` off the stable set."""
    return float(np.sum(proj.PhiHat * value_matrix(ioh, proj, cost, K)))


def cost_or_inf(ioh, proj, cost, K) -> float:
    try:
        return lq_cost(ioh, proj, cost, K)
    except NotSchur:
        return np.inf


def state_covariance(ioh: IOHDynamics, proj: Projection, K) -> np.ndarray:
    """``V_hat_K = sum_t Theta_hat^t Phi_hat Theta_hat'^t``."""
    Th, _, _ = _closed_loop(ioh, proj, K)
    return solve_dlyap(Th, proj.PhiHat)


def gradient(ioh: IOHDynamics, proj: Projection, cost: CostModel, K) -> GradientParts:
    K = as_matrix(K, "K")
    Th, Kh, Gh = _closed_loop(ioh, proj, K)
    Qh = Gh.T @ ioh.C.T @ cost.Q @ ioh.C @ Gh
    PsiHat = solve_dlyap_transpose(Th, Qh + Kh.T @ cost.R @ Kh)
    VHat = solve_dlyap(Th, proj.PhiHat)
    P = proj.P
    Psi = P @ PsiHat @ P.T
    Pi = ioh.Pi
    E = (cost.R + Pi.T @ Psi @ Pi) @ K + Pi.T @ Psi @ ioh.Theta
    grad = 2.0 * E @ (P @ VHat @ P.T)
    return GradientParts(PsiHat=PsiHat, VHat=VHat, E_K=E, grad=grad,
                         J=float(np.sum(proj.PhiHat * PsiHat)))


def resolve_sublevel(ioh, proj, cost: CostModel) -> float:
    if cost.c is None:
        cost.c = 2.0 * lq_cost(ioh, proj, cost, np.zeros((ioh.m, ioh.d)))
    return cost.c


def smoothness_constant(ioh: IOHDynamics, proj: Projection, cost: CostModel) -> float:
    """Conservative Lipschitz constant ``q`` of the gradient over the sublevel set."""
    c = resolve_sublevel(ioh, proj, cost)
    L, p = ioh.L, ioh.p
    smin_phi = float(np.linalg.eigvalsh(proj.PhiHat).min())
    rho = min(np.linalg.svd(cost.Q, compute_uv=False).min(), np.linalg.svd(cost.R, compute_uv=False).min())
    normR = float(np.linalg.norm(cost.R, 2))
    Lc_rho = L * c / rho
    return (2 * p * (c / smin_phi + normR) * Lc_rho
            + 4 * p * (2 * c / smin_phi + np.trace(cost.R) - np.trace(q_hat(ioh, proj, cost))) * Lc_rho ** 1.5)


@dataclass
class PGMReport:
    """Trace of a gradient-descent run, logged every ``stride`` iterations."""

    iters: np.ndarray
    J: np.ndarray
    grad_norm: np.ndarray
    K: np.ndarray
    iterations: int
    wall_clock: float
    converged: bool = False
    n_increase: int = 0
    max_rel_increase: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def J_final(self) -> float:
        return float(self.J[-1])

    def write_csv(self, path, columns=("iter", "J", "grad_norm")) -> None:
        data = {"iter": self.iters, "J": self.J, "grad_norm": self.grad_norm}
        data.update(self.extra.get("columns", {}))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in zip(*(data[c] for c in columns)):
                w.writerow([format_number(x) for x in row])

    def summary(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "J_initial": float(self.J[0]),
            "J_final": self.J_final,
            "converged": bool(self.converged),
            "n_increase": int(self.n_increase),
            "max_rel_increase": float(self.max_rel_increase),
            "wall_clock": float(self.wall_clock),
            "K": np.asarray(self.K).tolist(),
        }


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def run_model_based(ioh: IOHDynamics, proj: Projection, cost: CostModel, alpha: float,
                    max_iters: int, tol: float | None = None, *, K0=None, log_stride: int = 1000,
                    checkpoint_every: int = 100_000, checkpoint=None, backend=None) -> PGMReport:
    """Plain gradient descent ``K <- K - alpha grad J(K)`` from ``K0`` (default 0).

    Stops after ``max_iters`` updates or once ``||grad J||_F <= tol``
    (default ``1e-9 (1 + J(K0))``). Raises :class:`Diverged` if an iterate
    leaves the sublevel set ``J <= c``. ``checkpoint(i, K)`` is called
    every ``checkpoint_every`` iterations.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    impl = kernels.get_backend(backend)
    K0 = np.zeros((ioh.m, ioh.d)) if K0 is None else as_matrix(K0, "K0")
    c = resolve_sublevel(ioh, proj, cost)
    J0 = lq_cost(ioh, proj, cost, K0)
    if J0 > c:
        raise NotInSublevel(f"initial cost {J0:.6g} exceeds the sublevel bound {c:.6g}")
    q = smoothness_constant(ioh, proj, cost)
    if alpha >= 2.0 / q:
        warnings.warn(f"step size {alpha:g} >= 2/q = {2.0 / q:.3g}; the linear-rate guarantee does not apply",
                      stacklevel=2)
    if tol is None:
        tol = 1e-9 * (1.0 + J0)

    P = proj.P
    Th0 = P.T @ ioh.Theta @ P
    Pih = P.T @ ioh.Pi
    Qh = q_hat(ioh, proj, cost)
    Khat = K0 @ P
    K_perp = K0 - Khat @ P.T  # never changes: the gradient lies in im P'

    t0 = time.perf_counter()
    it_log, J_log, g_log = [], [], []
    done = 0
    n_inc, max_inc = 0, 0.0
    converged = False
    chunk = max(log_stride, (checkpoint_every // log_stride) * log_stride)
    J_last = J0
    while True:
        n = min(chunk, max_iters - done)
        Khat, Jl, gl, k, status, ni, mi, J_end, g_end = impl.pgm_descent(
            Th0, Pih, Qh, proj.PhiHat, cost.R, Khat, float(alpha), int(n), int(log_stride), float(tol), float(c))
        if status != kernels.OK:
            raise Diverged(f"iterate left the sublevel set near iteration {done + k}; reduce alpha")
        first = 0 if done == 0 else 1  # chunk start duplicates the previous chunk end
        idx = np.arange(first, len(Jl))
        keep = idx[np.isfinite(Jl[idx])]
        it_log.extend(done + keep * log_stride)
        J_log.extend(Jl[keep])
        g_log.extend(gl[keep])
        n_inc += ni
        max_inc = max(max_inc, mi)
        J_last = J_end
        done += k
        if g_end <= tol:
            converged = True
        if converged or done >= max_iters:
            break
        if checkpoint is not None:
            checkpoint(done, Khat @ P.T + K_perp)
    if it_log[-1] != done:
        it_log.append(done)
        J_log.append(J_last)
        g_log.append(g_end)
    return PGMReport(iters=np.array(it_log, dtype=int), J=np.array(J_log), grad_norm=np.array(g_log),
                     K=Khat @ P.T + K_perp, iterations=done, wall_clock=time.perf_counter() - t0,
                     converged=converged, n_increase=n_inc, max_rel_increase=max_inc)


@dataclass
class Diagnostics:
    q: float
    rho: float
    QHat: np.ndarray
    beta: float | None
    in_sublevel: bool
    pl_ratio: float
    J: float
    J_star: float
    sigma_min_VHat: float
    norm_VHat_star: float

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def beta_rate(alpha: float, q: float, sigma_min_R: float, smin_VK: float, norm_V_star: float) -> float:
    return 1.0 - 4.0 * sigma_min_R * smin_VK ** 2 / norm_V_star * (alpha - 0.5 * q * alpha ** 2)


def diagnostics(ioh: IOHDynamics, proj: Projection, cost: CostModel, K, K_star, *,
                alpha: float | None = None, J_star: float | None = None) -> Diagnostics:
    """Convergence-theory constants at gain ``K`` relative to the optimum ``K_star``."""
    c = resolve_sublevel(ioh, proj, cost)
    parts = gradient(ioh, proj, cost, K)
    if parts.J > c:
        raise NotInSublevel(f"J(K) = {parts.J:.6g} exceeds c = {c:.6g}")
    if J_star is None:
        J_star = lq_cost(ioh, proj, cost, K_star)
    V_star = state_covariance(ioh, proj, K_star)
    norm_V_star = float(np.linalg.norm(V_star, 2))
    smin_V = float(np.linalg.eigvalsh(parts.VHat).min())
    smin_R = float(np.linalg.svd(cost.R, compute_uv=False).min())
    rho = min(float(np.linalg.svd(cost.Q, compute_uv=False).min()), smin_R)
    q = smoothness_constant(ioh, proj, cost)
    bound = norm_V_star / (4.0 * smin_R * smin_V ** 2) * float(np.sum(parts.grad ** 2))
    gap = parts.J - J_star
    pl = gap / bound if bound > 0 else (0.0 if gap <= 0 else np.inf)
    beta = None if alpha is None else beta_rate(alpha, q, smin_R, smin_V, norm_V_star)
    return Diagnostics(q=q, rho=rho, QHat=q_hat(ioh, proj, cost), beta=beta, in_sublevel=parts.J <= c,
                       pl_ratio=pl, J=parts.J, J_star=J_star, sigma_min_VHat=smin_V,
                       norm_VHat_star=norm_V_star)


def in_neighbourhood(ioh, proj, cost, K, K2, n_tau: int = 21) -> bool:
    """Whether the segment from ``K`` to ``K2`` stays in the sublevel set (grid check)."""
    c = resolve_sublevel(ioh, proj, cost)
    for tau in np.linspace(0.0, 1.0, n_tau):
        if cost_or_inf(ioh, proj, cost, (1 - tau) * K + tau * K2) > c:
            return False
    return True


def smoothness_gap(ioh, proj, cost, K, K2) -> float:
    """``J(K2) - J(K) - <grad J(K), K2 - K>``; bounded above by ``q/2 ||K2 - K||_F^2``."""
    g = gradient(ioh, proj, cost, K)
    return lq_cost(ioh, proj, cost, K2) - g.J - float(np.sum(g.grad * (K2 - K)))


def save_report(report: PGMReport, outdir, extra_summary: dict | None = None) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report.write_csv(outdir / "trace.csv")
    summary = report.summary()
    summary.update(extra_summary or {})
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
