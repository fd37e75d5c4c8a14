"""Pure-NumPy implementations of the hot loops.

Mirrors the compiled ``_core`` module function for function; see
``iohpg.kernels`` for the selection logic and the calling conventions.
"""
import numpy as np

OK, DIVERGED, NO_CONVERGENCE, BLOWUP = 0, 1, 2, 3


def lyap_doubling(A, Q, tol=1e-14, max_iter=100):
    """Return ``(X, status)`` with ``A'XA - X + Q = 0`` on success."""
    X = np.array(Q, dtype=float, copy=True)
    Ak = np.array(A, dtype=float, copy=True)
    for _ in range(max_iter):
        inc = Ak.T @ X @ Ak
        X += inc
        nx = np.linalg.norm(X)
        if not np.isfinite(nx):
            return X, NO_CONVERGENCE
        if np.linalg.norm(inc) <= tol * (1.0 + nx):
            return 0.5 * (X + X.T), OK
        Ak = Ak @ Ak
    return X, NO_CONVERGENCE


def pgm_descent(Th0, Pih, Qh, PhiH, R, Khat0, alpha, iters, stride, gtol, jmax):
    """Projected model-based gradient descent.

    Returns ``(Khat, J_log, g_log, done, status, n_increase, max_rel_increase, J_last, g_last)``.
    ``J_log``/``g_log`` hold the values at iterations ``0, stride, 2 stride, ...``.
    """
    Khat = np.array(Khat0, dtype=float, copy=True)
    nlog = iters // stride + 1
    J_log = np.full(nlog, np.nan)
    g_log = np.full(nlog, np.nan)
    J_prev = np.inf
    n_inc, max_inc = 0, 0.0
    J = g = np.nan
    status = OK
    i = 0
    while True:
        Tk = Th0 + Pih @ Khat
        Psi, st1 = lyap_doubling(Tk, Qh + Khat.T @ R @ Khat)
        V, st2 = lyap_doubling(Tk.T, PhiH)
        if st1 or st2:
            status = DIVERGED
            break
        J = float(np.sum(PhiH * Psi))
        if J > jmax or not np.isfinite(J):
            status = DIVERGED
            break
        E = (R + Pih.T @ Psi @ Pih) @ Khat + Pih.T @ Psi @ Th0
        G = 2.0 * E @ V
        g = float(np.linalg.norm(G))
        if J > J_prev:
            n_inc += 1
            max_inc = max(max_inc, (J - J_prev) / J_prev)
        J_prev = J
        if i % stride == 0:
            J_log[i // stride] = J
            g_log[i // stride] = g
        if i >= iters or g <= gtol:
            break
        Khat -= alpha * G
        i += 1
    return Khat, J_log, g_log, i, status, n_inc, max_inc, J, g


def ioh_feedback_run(A, B, C, K, x, v, N, Q, R, L, cap, excite):
    """Run ``N`` closed-loop steps of ``u = K v (+ excite[t])`` in place.

    ``x`` and ``v`` are updated in place. Returns ``(cost, status, steps, y_last)``;
    ``status`` is ``BLOWUP`` once the accumulated cost exceeds ``cap`` or
    becomes non-finite.
    """
    m = B.shape[1]
    r = C.shape[0]
    Lm = L * m
    cost = 0.0
    y = np.zeros(r)
    for t in range(N):
        u = K @ v
        if excite is not None:
            u = u + excite[t]
        y = C @ x
        cost += y @ Q @ y + u @ R @ u
        if not cost <= cap:
            return cost, BLOWUP, t + 1, y
        x[:] = A @ x + B @ u
        v[:Lm - m] = v[m:Lm]
        v[Lm - m:Lm] = u
        v[Lm:Lm + (L - 1) * r] = v[Lm + r:]
        v[Lm + (L - 1) * r:] = y
    return cost, OK, N, y


def ioh_feedback_trace(A, B, C, K, x, v, N, L, excite):
    """Like :func:`ioh_feedback_run` but returns the ``u`` and ``y`` sequences."""
    m = B.shape[1]
    r = C.shape[0]
    Lm = L * m
    us = np.empty((N, m))
    ys = np.empty((N, r))
    for t in range(N):
        u = K @ v
        if excite is not None:
            u = u + excite[t]
        y = C @ x
        us[t] = u
        ys[t] = y
        x[:] = A @ x + B @ u
        v[:Lm - m] = v[m:Lm]
        v[Lm - m:Lm] = u
        v[Lm:Lm + (L - 1) * r] = v[Lm + r:]
        v[Lm + (L - 1) * r:] = y
    return us, ys
