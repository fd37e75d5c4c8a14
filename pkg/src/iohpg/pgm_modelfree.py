"""Model-free policy gradient on IOH gains.

The learner only sees inputs and outputs of a :class:`BlackBoxPlant`. The
gradient is replaced by the zeroth-order estimate

    grad ~ m L (m + r) / (s delta) * sum_j cost_j U_j

built from ``s`` closed-loop episodes under perturbed gains
``K + delta U_j`` with ``U_j`` uniform on the unit Frobenius sphere.

Model-based quantities (exact ``J`` for logging, the sample-complexity
constants) are only used for reporting and diagnostics.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from . import kernels
from .errors import Diverged, NonFinite, NotInSublevel
from .ioh import IOHBuffer, IOHDynamics, Projection, gap_rank
from .numerics import RandomStream, as_matrix, numerical_rank, sample_unit_frobenius
from .pgm_exact import (CostModel, PGMReport, diagnostics, gradient, lq_cost, q_hat, resolve_sublevel,
                        smoothness_constant)
from .plant import PlantModel


class BlackBoxPlant(Protocol):
    """Input/output access to a plant session.

    ``reset`` draws a fresh hidden initial state; ``step(u)`` returns the
    current output ``y(t)`` and then applies ``u(t)``.
    """

    m: int
    r: int

    def reset(self, stream: RandomStream) -> None: ...

    def step(self, u) -> np.ndarray: ...


class SimulatedPlant:
    """:class:`BlackBoxPlant` backed by a known model, with a compiled fast path."""

    def __init__(self, model: PlantModel):
        self._model = model
        self._A = np.ascontiguousarray(model.A)
        self._B = np.ascontiguousarray(model.B)
        self._C = np.ascontiguousarray(model.C)
        self._x = np.zeros(model.n)
        self.m, self.r = model.m, model.r
        self.t = 0

    def reset(self, stream: RandomStream) -> None:
        self._x = stream.normal(self._model.n)
        self.t = 0

    def set_state(self, x) -> None:
        self._x = np.array(x, dtype=float).ravel()

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.m)
        y = self._C @ self._x
        self._x = self._A @ self._x + self._B @ u
        self.t += 1
        return y

    def run_feedback(self, K, v, N, Q, R, cap=np.inf, excite=None):
        """``N`` steps of ``u = K v (+ excite)``; ``v`` is updated in place.

        Returns ``(cost, status, steps)`` with the kernel status codes.
        """
        L = v.size // (self.m + self.r)
        cost, status, steps, _ = kernels.ioh_feedback_run(
            self._A, self._B, self._C, K, self._x, v, int(N), Q, R, L, float(cap), excite)
        self.t += steps
        return cost, status, steps


@dataclass
class EpisodeRecord:
    j: int
    U: np.ndarray
    cost_sum: float
    N: int


@dataclass
class ComplexityDiagnostics:
    delta_st: float
    epsilon_K: float
    theta_o: float
    chi: float
    zeta: float
    prob_bound: float
    q: float
    v_max: float
    h_K: float
    prob_bound_raw: float = 0.0
    beta: float | None = None
    eps_star: float | None = None
    g_alpha: float | None = None
    o_bar: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def explore_gain(K, delta: float, stream: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    K = as_matrix(K, "K")
    U = sample_unit_frobenius(stream, *K.shape)
    return K + delta * U, U


def start_episode(plant: BlackBoxPlant, L: int, stream: RandomStream) -> IOHBuffer:
    """Reset the plant and apply ``L`` standard-normal inputs to fill the IOH window."""
    plant.reset(stream)
    buf = IOHBuffer(L, plant.m, plant.r)
    for u in stream.normal((L, plant.m)):
        buf.push(u, plant.step(u))
    return buf


def _run(plant, buf: IOHBuffer, K, N, Q, R, cap, excite=None):
    """Advance ``N`` closed-loop steps, returning ``(cost, status)``."""
    v = buf.current_v().copy()
    if hasattr(plant, "run_feedback"):
        total, status, _ = plant.run_feedback(K, v, N, Q, R, cap, excite)
        buf.load(v)
        buf.t += N
        return total, status
    total = 0.0
    for t in range(N):
        u = K @ buf.current_v()
        if excite is not None:
            u = u + excite[t]
        y = plant.step(u)
        total += float(y @ Q @ y + u @ R @ u)
        buf.push(u, y)
        if not total <= cap:
            return total, kernels.BLOWUP
    return total, kernels.OK


def episode_cost(plant: BlackBoxPlant, buf: IOHBuffer, Kd, N: int, cost: CostModel,
                 cap: float = np.inf) -> float:
    """Sum of stage costs ``y'Qy + u'Ru`` over ``N`` steps of ``u = Kd v``.

    Raises :class:`NonFinite` if the accumulated cost exceeds ``cap`` or
    stops being finite.
    """
    Kd = as_matrix(Kd, "Kd")
    if N == 0:
        return 0.0
    total, status = _run(plant, buf, Kd, int(N), cost.Q, cost.R, cap)
    if status != kernels.OK or not np.isfinite(total):
        raise NonFinite("episode cost blew up; the exploration gain is destabilizing")
    return float(total)


def zeroth_order_gradient(records, delta: float, m: int, L: int, r: int) -> np.ndarray:
    records = list(records)
    if not records:
        raise ValueError("need at least one episode")
    scale = m * L * (m + r) / (len(records) * delta)
    return scale * sum(rec.cost_sum * rec.U for rec in records)


def _converged(history, window: int, tol: float) -> bool:
    if tol is None or len(history) < 2 * window:
        return False
    a = np.mean(history[-2 * window:-window])
    b = np.mean(history[-window:])
    return abs(b - a) <= tol * abs(a)


def run_multi_episodic(plant: BlackBoxPlant, cost: CostModel, *, L: int, s: int, N: int, delta: float,
                       alpha: float, max_iters: int, seed: int = 0,
                       evaluator: Callable | None = None, log_stride: int = 1, K0=None,
                       tol: float | None = 1e-4, window: int = 50, max_resample: int = 100) -> PGMReport:
    """Multi-episodic model-free descent; every episode starts from a fresh reset.

    ``evaluator(K) -> J`` is optional and only used to log the exact cost.
    Without it the ``J`` column holds the mean episode cost.
    """
    if s < 1 or N < 1 or delta <= 0 or alpha < 0:
        raise ValueError("need s >= 1, N >= 1, delta > 0, alpha >= 0")
    m, r = plant.m, plant.r
    d = L * (m + r)
    K = np.zeros((m, d)) if K0 is None else as_matrix(K0, "K0").copy()
    cap = np.inf if cost.c is None else 1e6 * cost.c
    master = RandomStream(seed)
    t0 = time.perf_counter()
    it_log, J_log, g_log, ep_log = [], [], [], []
    proxy = []
    n_failed = 0
    converged = False
    i = 0
    while True:
        log_now = i % log_stride == 0
        if log_now or i >= max_iters:
            J_now = evaluator(K) if evaluator is not None else np.nan
        if i >= max_iters:
            break
        stream = master.spawn(i)
        records = []
        for j in range(s):
            for _ in range(max_resample):
                Kd, U = explore_gain(K, delta, stream)
                buf = start_episode(plant, L, stream)
                try:
                    c = episode_cost(plant, buf, Kd, N, cost, cap)
                    break
                except NonFinite:
                    n_failed += 1
            else:
                raise Diverged(f"{max_resample} consecutive exploration episodes blew up at iteration {i}")
            records.append(EpisodeRecord(j=j, U=U, cost_sum=c, N=N))
        G = zeroth_order_gradient(records, delta, m, L, r)
        mean_cost = float(np.mean([rec.cost_sum for rec in records]))
        if log_now:
            it_log.append(i)
            J_log.append(J_now if evaluator is not None else mean_cost)
            g_log.append(float(np.linalg.norm(G)))
            ep_log.append(mean_cost)
        proxy.append(J_now if evaluator is not None and log_stride == 1 else mean_cost)
        K = K - alpha * G
        i += 1
        if _converged(proxy, window, tol):
            converged = True
            J_now = evaluator(K) if evaluator is not None else np.nan
            break
    if not it_log or it_log[-1] != i:
        it_log.append(i)
        J_log.append(J_now if evaluator is not None else (ep_log[-1] if ep_log else np.nan))
        g_log.append(np.nan)
        ep_log.append(np.nan)
    return PGMReport(iters=np.array(it_log), J=np.array(J_log), grad_norm=np.array(g_log), K=K,
                     iterations=i, wall_clock=time.perf_counter() - t0, converged=converged,
                     extra={"columns": {"episode_cost": np.array(ep_log)}, "failed_episodes": n_failed,
                            "seed": seed})


def pe_signal(order: int, length: int, sigma: float, stream: RandomStream, m: int = 1) -> np.ndarray:
    """I.i.d. ``N(0, sigma^2 I_m)`` inputs, shape ``(length, m)``."""
    if length < order:
        raise ValueError("length must be at least the excitation order")
    return sigma * stream.normal((length, m))


def hankel_rank(signal, order: int, tol: float = 1e-9) -> int:
    """Rank of the depth-``order`` block Hankel matrix of a ``(T, m)`` signal."""
    w = np.asarray(signal, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    T, m = w.shape
    cols = T - order + 1
    H = np.empty((order * m, cols))
    for k in range(order):
        H[k * m:(k + 1) * m] = w[k:k + cols].T
    return numerical_rank(H, tol) if np.any(H) else 0


def run_single_episodic(plant: BlackBoxPlant, cost: CostModel, *, L: int, N: int, delta: float,
                        alpha: float, max_steps: int, seed: int = 0,
                        stationary_threshold: float = 0.01, excite_sigma: float = 0.1,
                        excite_after: int | None = None, alpha_excite: float | None = None,
                        excite_steps: int | None = None, evaluator: Callable | None = None,
                        K0=None, tol: float | None = None, window: int = 50,
                        rank_window: int | None = None) -> PGMReport:
    """Single-episodic model-free descent along one continuing trajectory.

    The gain is updated after every ``N``-step window. Excitation is enabled
    from time ``excite_after`` (from the start if ``None``); once enabled the
    step size becomes ``alpha_excite`` and, whenever ``||v|| <=
    stationary_threshold`` at a window boundary, ``excite_steps`` inputs
    with additive ``N(0, excite_sigma I)`` noise are applied before the next
    window. Those steps do not enter the gradient estimate.
    """
    if N < 1 or delta <= 0 or alpha < 0:
        raise ValueError("need N >= 1, delta > 0, alpha >= 0")
    m, r = plant.m, plant.r
    d = L * (m + r)
    excite_steps = d if excite_steps is None else int(excite_steps)
    alpha_excite = alpha if alpha_excite is None else alpha_excite
    rank_window = 4 * d if rank_window is None else rank_window
    K = np.zeros((m, d)) if K0 is None else as_matrix(K0, "K0").copy()
    cap = np.inf if cost.c is None else 1e6 * cost.c
    stream = RandomStream(seed)
    buf = start_episode(plant, L, stream)
    t = L
    t0 = time.perf_counter()
    t_log, J_log, g_log, y_log, rank_log, exc_log = [], [], [], [], [], []
    vs = deque(maxlen=rank_window)
    proxy = []
    n_excite = n_failed = 0
    converged = False
    i = 0
    while t + N <= max_steps:
        enabled = excite_after is None or t >= excite_after
        step = alpha_excite if enabled and excite_after is not None else alpha
        Kd, U = explore_gain(K, delta, stream)
        c, status = _run(plant, buf, Kd, N, cost.Q, cost.R, cap)
        t += N
        if status == kernels.OK and np.isfinite(c):
            G = zeroth_order_gradient([EpisodeRecord(0, U, c, N)], delta, m, L, r)
            K = K - step * G
        else:
            G = np.full_like(K, np.nan)
            n_failed += 1
        v = buf.current_v()
        if not np.all(np.isfinite(v)):
            raise Diverged(f"trajectory diverged at t={t}")
        excited = False
        if enabled and np.linalg.norm(v) <= stationary_threshold and t + excite_steps <= max_steps:
            noise = pe_signal(excite_steps, excite_steps, np.sqrt(excite_sigma), stream, m)
            _run(plant, buf, K, excite_steps, cost.Q, cost.R, np.inf, noise)
            t += excite_steps
            n_excite += 1
            excited = True
        # the rank condition concerns the history that starts the next window
        vs.append(buf.current_v().copy())
        J_now = evaluator(K) if evaluator is not None else c
        t_log.append(t)
        J_log.append(J_now)
        g_log.append(float(np.linalg.norm(G)))
        y_log.append(float(buf.current_v()[L * m + (L - 1) * r]))
        exc_log.append(int(excited))
        M = np.array(vs)
        rank_log.append(gap_rank(M.T @ M / len(M)) if len(M) >= d else 0)
        proxy.append(J_now)
        i += 1
        if _converged(proxy, window, tol):
            converged = True
            break
    return PGMReport(iters=np.array(t_log, dtype=int), J=np.array(J_log), grad_norm=np.array(g_log), K=K,
                     iterations=i, wall_clock=time.perf_counter() - t0, converged=converged,
                     extra={"columns": {"t": np.array(t_log, dtype=int), "y1": np.array(y_log),
                                        "rank": np.array(rank_log), "excited": np.array(exc_log)},
                            "excitations": n_excite, "failed_episodes": n_failed, "seed": seed})


def exact_evaluator(ioh: IOHDynamics, proj: Projection, cost: CostModel) -> Callable:
    """``K -> J(K)`` with ``inf`` outside the stabilizing set (reporting only)."""
    P = proj.P
    Th0 = P.T @ ioh.Theta @ P
    Pih = P.T @ ioh.Pi
    Qh = q_hat(ioh, proj, cost)

    def J(K):
        Kh = np.asarray(K, dtype=float) @ P
        X, status = kernels.lyap_doubling(Th0 + Pih @ Kh, Qh + Kh.T @ cost.R @ Kh)
        return float(np.sum(proj.PhiHat * X)) if status == kernels.OK else np.inf
    return J


def estimate_v_max(proj: Projection, stream: RandomStream, n_draws: int = 100_000,
                   quantile: float = 0.9999) -> float:
    """Empirical quantile of ``||v(L)||`` for ``v(L) ~ N(0, Phi)``."""
    F = proj.Phi_factor
    Z = stream.normal((n_draws, F.shape[1]))
    return float(np.quantile(np.linalg.norm(Z @ F.T, axis=1), quantile))


def _constants(ioh, proj, cost):
    c = resolve_sublevel(ioh, proj, cost)
    smin_phi = float(np.linalg.eigvalsh(proj.PhiHat).min())
    rho = min(float(np.linalg.svd(cost.Q, compute_uv=False).min()),
              float(np.linalg.svd(cost.R, compute_uv=False).min()))
    return c, smin_phi, rho


def _h(ioh, proj, K):
    Th = proj.P.T @ (ioh.Theta + ioh.Pi @ K) @ proj.P
    return float(np.linalg.norm(Th, 2) + np.linalg.norm(K, 2))


def epsilon_K(ioh, proj, cost, K) -> float:
    c, smin_phi, rho = _constants(ioh, proj, cost)
    a = ioh.L * c * ioh.p
    nK = float(np.linalg.norm(K, 2))
    nR = float(np.linalg.norm(cost.R, 2))
    nQ = float(np.linalg.norm(q_hat(ioh, proj, cost), 2))
    trPhi = float(np.trace(proj.PhiHat))
    return (4 * a * trPhi * nK * nR / (rho * smin_phi)
            + 4 * a ** 2 * trPhi * _h(ioh, proj, K) * (nQ + 9 * nK ** 2 * nR) / (rho ** 2 * smin_phi ** 2))


def delta_st(ioh, proj, cost, K, J=None) -> float:
    c, smin_phi, rho = _constants(ioh, proj, cost)
    if J is None:
        J = lq_cost(ioh, proj, cost, K)
    eps = epsilon_K(ioh, proj, cost, K)
    terms = [rho * smin_phi / (4 * ioh.L * c * ioh.p * _h(ioh, proj, K)), 2 * float(np.linalg.norm(K, 2))]
    if eps > 0:
        terms += [J / eps, (c - J) / eps]
    return float(min(terms))


def theta_o(o, q, delta, chi):
    return o + q * delta + chi


def complexity_diagnostics(ioh: IOHDynamics, proj: Projection, cost: CostModel, K, *, delta: float,
                           N: int, s: int, o: float, v_max: float,
                           alpha: float | None = None, K_star=None) -> ComplexityDiagnostics:
    """Closed-form sample-complexity constants at gain ``K`` (needs the model)."""
    K = as_matrix(K, "K")
    c, smin_phi, rho = _constants(ioh, proj, cost)
    J = lq_cost(ioh, proj, cost, K)
    if J > c:
        raise NotInSublevel(f"J(K) = {J:.6g} exceeds c = {c:.6g}")
    L, m, r = ioh.L, ioh.m, ioh.r
    q = smoothness_constant(ioh, proj, cost)
    nK = float(np.linalg.norm(K, 2))
    nR = float(np.linalg.norm(cost.R, 2))
    nQ = float(np.linalg.norm(q_hat(ioh, proj, cost), 2))
    chi = (m * (m + r) ** 2 * L ** 4 * c ** 2 * (nQ + 9 * nK ** 2 * nR) * v_max ** 2
           / (N * delta * smin_phi ** 2 * rho ** 2))
    th = theta_o(o, q, delta, chi)
    zeta = 2 * m ** 1.5 * L * (m + r) * v_max ** 2 * J / (delta * smin_phi)
    pr_raw = 1.0 - (m + L * (m + r)) * np.exp(-(s * o ** 2 / 2) / (zeta ** 2 + zeta * o / 3))
    diag = ComplexityDiagnostics(
        delta_st=delta_st(ioh, proj, cost, K, J), epsilon_K=epsilon_K(ioh, proj, cost, K),
        theta_o=th, chi=chi, zeta=zeta, prob_bound=max(pr_raw, 0.0), q=q, v_max=v_max,
        h_K=_h(ioh, proj, K), prob_bound_raw=float(pr_raw))
    if alpha is not None:
        if K_star is None:
            raise ValueError("step-size diagnostics need the optimal gain K_star")
        beta = diagnostics(ioh, proj, cost, K, K_star, alpha=alpha).beta
        Kc = K - alpha * gradient(ioh, proj, cost, K).grad
        diag.beta = beta
        diag.eps_star = eps_star(ioh, proj, cost, Kc)
        diag.g_alpha = g_alpha(ioh, proj, cost, K, alpha, o, q, delta, chi, beta)
        diag.o_bar = o_bar(ioh, proj, cost, K, alpha, q, delta, chi, beta)
    return diag


def eps_star(ioh, proj, cost, K) -> float:
    parts = gradient(ioh, proj, cost, K)
    Psi = proj.P @ parts.PsiHat @ proj.P.T
    smin_phi = float(np.linalg.eigvalsh(proj.PhiHat).min())
    M = cost.R + ioh.Pi.T @ Psi @ ioh.Pi
    return smin_phi * float(np.sum(parts.E_K ** 2)) / float(np.linalg.norm(M, 2))


def g_alpha(ioh, proj, cost, K, alpha, o, q, delta, chi, beta) -> float:
    """Step-size bound for tolerance ``o``; ``beta`` is the model-based rate at ``K``."""
    c, smin_phi, rho = _constants(ioh, proj, cost)
    Kc = K - alpha * gradient(ioh, proj, cost, K).grad
    th = theta_o(o, q, delta, chi)
    return float(min(2.0 / q,
                     (1 - beta) * eps_star(ioh, proj, cost, Kc) / (2 * epsilon_K(ioh, proj, cost, K) * th),
                     2 * float(np.linalg.norm(Kc, 2)) / th,
                     rho * smin_phi / (4 * ioh.L * c * th * ioh.p * _h(ioh, proj, Kc))))


def o_bar(ioh, proj, cost, K, alpha, q, delta, chi, beta, o_max: float = 1e12, iters: int = 200) -> float:
    """Largest ``o`` with ``alpha < g_alpha(o)``, by bisection (0 if none).

    ``g_alpha`` is nonincreasing in ``o`` because ``theta_o`` grows with ``o``.
    """
    def ok(o):
        return alpha < g_alpha(ioh, proj, cost, K, alpha, o, q, delta, chi, beta)
    lo, hi = 0.0, 1.0
    if not ok(1e-300):
        return 0.0
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > o_max:
            return float("inf")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
