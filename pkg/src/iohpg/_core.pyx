# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; same API and semantics as ``iohpg._fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()

cdef int OK = 0
cdef int DIVERGED = 1
cdef int NO_CONVERGENCE = 2
cdef int BLOWUP = 3


cdef inline void _gemm(double[:, ::1] A, double[:, ::1] B, double[:, ::1] out,
                       bint ta, Py_ssize_t n, Py_ssize_t k, Py_ssize_t p) nogil:
    # out (n x p) = op(A) (n x k) @ B (k x p); op(A) = A.T when ta
    cdef Py_ssize_t i, j, l
    cdef double a
    for i in range(n):
        for j in range(p):
            out[i, j] = 0.0
        for l in range(k):
            a = A[l, i] if ta else A[i, l]
            if a != 0.0:
                for j in range(p):
                    out[i, j] += a * B[l, j]


cdef inline double _fro(double[:, ::1] A, Py_ssize_t n, Py_ssize_t p) nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for i in range(n):
        for j in range(p):
            s += A[i, j] * A[i, j]
    return sqrt(s)


cdef int _doubling(double[:, ::1] A, double[:, ::1] Q, double[:, ::1] X,
                   double[:, ::1] Ak, double[:, ::1] T1, double[:, ::1] T2,
                   Py_ssize_t n, double tol, int max_iter) nogil:
    # X = sum_t (A^T)^t Q A^t
    cdef Py_ssize_t i, j
    cdef int it
    cdef double ninc, nx
    for i in range(n):
        for j in range(n):
            X[i, j] = Q[i, j]
            Ak[i, j] = A[i, j]
    for it in range(max_iter):
        _gemm(Ak, X, T1, True, n, n, n)      # Ak^T X
        _gemm(T1, Ak, T2, False, n, n, n)    # Ak^T X Ak
        ninc = 0.0
        nx = 0.0
        for i in range(n):
            for j in range(n):
                X[i, j] += T2[i, j]
                ninc += T2[i, j] * T2[i, j]
                nx += X[i, j] * X[i, j]
        if not isfinite(nx):
            return NO_CONVERGENCE
        if sqrt(ninc) <= tol * (1.0 + sqrt(nx)):
            for i in range(n):
                for j in range(i + 1, n):
                    X[i, j] = 0.5 * (X[i, j] + X[j, i])
                    X[j, i] = X[i, j]
            return OK
        _gemm(Ak, Ak, T1, False, n, n, n)
        for i in range(n):
            for j in range(n):
                Ak[i, j] = T1[i, j]
    return NO_CONVERGENCE


def lyap_doubling(A, Q, double tol=1e-14, int max_iter=100):
    cdef double[:, ::1] a = np.array(A, dtype=np.float64, order="C")
    cdef double[:, ::1] q = np.array(Q, dtype=np.float64, order="C")
    cdef Py_ssize_t n = a.shape[0]
    X = np.empty((n, n))
    cdef double[:, ::1] x = X
    cdef double[:, ::1] ak = np.empty((n, n))
    cdef double[:, ::1] t1 = np.empty((n, n))
    cdef double[:, ::1] t2 = np.empty((n, n))
    cdef int st
    with nogil:
        st = _doubling(a, q, x, ak, t1, t2, n, tol, max_iter)
    return X, st


def pgm_descent(Th0, Pih, Qh, PhiH, R, Khat0, double alpha, long iters, long stride,
                double gtol, double jmax):
    cdef double[:, ::1] th0 = np.array(Th0, dtype=np.float64, order="C")
    cdef double[:, ::1] pih = np.array(Pih, dtype=np.float64, order="C")
    cdef double[:, ::1] qh = np.array(Qh, dtype=np.float64, order="C")
    cdef double[:, ::1] phih = np.array(PhiH, dtype=np.float64, order="C")
    cdef double[:, ::1] rr = np.array(R, dtype=np.float64, order="C")
    Khat_arr = np.array(Khat0, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] kh = Khat_arr
    cdef Py_ssize_t p = th0.shape[0]
    cdef Py_ssize_t m = pih.shape[1]
    cdef long nlog = iters // stride + 1
    J_log_arr = np.full(nlog, np.nan)
    g_log_arr = np.full(nlog, np.nan)
    cdef double[::1] J_log = J_log_arr
    cdef double[::1] g_log = g_log_arr

    cdef double[:, ::1] tk = np.empty((p, p))
    cdef double[:, ::1] tkt = np.empty((p, p))
    cdef double[:, ::1] w = np.empty((p, p))
    cdef double[:, ::1] psi = np.empty((p, p))
    cdef double[:, ::1] vv = np.empty((p, p))
    cdef double[:, ::1] ak = np.empty((p, p))
    cdef double[:, ::1] t1 = np.empty((p, p))
    cdef double[:, ::1] t2 = np.empty((p, p))
    cdef double[:, ::1] rk = np.empty((m, p))
    cdef double[:, ::1] psipi = np.empty((p, m))
    cdef double[:, ::1] mm = np.empty((m, m))
    cdef double[:, ::1] e = np.empty((m, p))
    cdef double[:, ::1] e2 = np.empty((m, p))
    cdef double[:, ::1] g = np.empty((m, p))

    cdef long i = 0
    cdef long n_inc = 0
    cdef double max_inc = 0.0
    cdef double J = np.nan, J_prev = np.inf, gn = np.nan
    cdef int status = OK
    cdef int st1, st2
    cdef Py_ssize_t a, b, c

    with nogil:
        while True:
            # Tk = Th0 + Pih Khat
            _gemm(pih, kh, tk, False, p, m, p)
            for a in range(p):
                for b in range(p):
                    tk[a, b] += th0[a, b]
                    tkt[b, a] = tk[a, b]
            # W = Qh + Khat' R Khat
            _gemm(rr, kh, rk, False, m, m, p)
            _gemm(kh, rk, w, True, p, m, p)
            for a in range(p):
                for b in range(p):
                    w[a, b] += qh[a, b]
            st1 = _doubling(tk, w, psi, ak, t1, t2, p, 1e-14, 100)
            st2 = _doubling(tkt, phih, vv, ak, t1, t2, p, 1e-14, 100)
            if st1 != OK or st2 != OK:
                status = DIVERGED
                break
            J = 0.0
            for a in range(p):
                for b in range(p):
                    J += phih[a, b] * psi[a, b]
            if not (J <= jmax):
                status = DIVERGED
                break
            # E = (R + Pih' Psi Pih) Khat + Pih' Psi Th0
            _gemm(psi, pih, psipi, False, p, p, m)
            _gemm(pih, psipi, mm, True, m, p, m)
            for a in range(m):
                for b in range(m):
                    mm[a, b] += rr[a, b]
            _gemm(mm, kh, e, False, m, m, p)
            _gemm(psipi, th0, e2, True, m, p, p)
            for a in range(m):
                for b in range(p):
                    e[a, b] += e2[a, b]
            _gemm(e, vv, g, False, m, p, p)
            gn = 0.0
            for a in range(m):
                for b in range(p):
                    g[a, b] *= 2.0
                    gn += g[a, b] * g[a, b]
            gn = sqrt(gn)
            if J > J_prev:
                n_inc += 1
                if (J - J_prev) / J_prev > max_inc:
                    max_inc = (J - J_prev) / J_prev
            J_prev = J
            if i % stride == 0:
                J_log[i // stride] = J
                g_log[i // stride] = gn
            if i >= iters or gn <= gtol:
                break
            for a in range(m):
                for b in range(p):
                    kh[a, b] -= alpha * g[a, b]
            i += 1
    return Khat_arr, J_log_arr, g_log_arr, i, status, n_inc, max_inc, J, gn


def ioh_feedback_run(A, B, C, K, x_arr, v_arr, long N, Q, R, int L, double cap, excite):
    cdef double[:, ::1] a = np.array(A, dtype=np.float64, order="C")
    cdef double[:, ::1] bm = np.array(B, dtype=np.float64, order="C")
    cdef double[:, ::1] cm = np.array(C, dtype=np.float64, order="C")
    cdef double[:, ::1] k = np.array(K, dtype=np.float64, order="C")
    cdef double[:, ::1] q = np.array(Q, dtype=np.float64, order="C")
    cdef double[:, ::1] rr = np.array(R, dtype=np.float64, order="C")
    cdef double[::1] x = x_arr
    cdef double[::1] v = v_arr
    cdef bint has_ex = excite is not None
    cdef double[:, ::1] ex
    if has_ex:
        ex = np.array(excite, dtype=np.float64, order="C")
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = bm.shape[1]
    cdef Py_ssize_t r = cm.shape[0]
    cdef Py_ssize_t d = v.shape[0]
    cdef Py_ssize_t Lm = L * m
    y_arr = np.zeros(r)
    cdef double[::1] y = y_arr
    cdef double[::1] u = np.empty(m)
    cdef double[::1] xn = np.empty(n)
    cdef double cost = 0.0, s
    cdef long t, steps = N
    cdef int status = OK
    cdef Py_ssize_t i, j
    with nogil:
        for t in range(N):
            for i in range(m):
                s = 0.0
                for j in range(d):
                    s += k[i, j] * v[j]
                if has_ex:
                    s += ex[t, i]
                u[i] = s
            for i in range(r):
                s = 0.0
                for j in range(n):
                    s += cm[i, j] * x[j]
                y[i] = s
            for i in range(r):
                for j in range(r):
                    cost += y[i] * q[i, j] * y[j]
            for i in range(m):
                for j in range(m):
                    cost += u[i] * rr[i, j] * u[j]
            if not (cost <= cap):
                status = BLOWUP
                steps = t + 1
                break
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += a[i, j] * x[j]
                for j in range(m):
                    s += bm[i, j] * u[j]
                xn[i] = s
            for i in range(n):
                x[i] = xn[i]
            for i in range(Lm - m):
                v[i] = v[i + m]
            for i in range(m):
                v[Lm - m + i] = u[i]
            for i in range(Lm, d - r):
                v[i] = v[i + r]
            for i in range(r):
                v[d - r + i] = y[i]
    return cost, status, steps, y_arr


def ioh_feedback_trace(A, B, C, K, x_arr, v_arr, long N, int L, excite):
    cdef double[:, ::1] a = np.array(A, dtype=np.float64, order="C")
    cdef double[:, ::1] bm = np.array(B, dtype=np.float64, order="C")
    cdef double[:, ::1] cm = np.array(C, dtype=np.float64, order="C")
    cdef double[:, ::1] k = np.array(K, dtype=np.float64, order="C")
    cdef double[::1] x = x_arr
    cdef double[::1] v = v_arr
    cdef bint has_ex = excite is not None
    cdef double[:, ::1] ex
    if has_ex:
        ex = np.array(excite, dtype=np.float64, order="C")
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = bm.shape[1]
    cdef Py_ssize_t r = cm.shape[0]
    cdef Py_ssize_t d = v.shape[0]
    cdef Py_ssize_t Lm = L * m
    us_arr = np.empty((N, m))
    ys_arr = np.empty((N, r))
    cdef double[:, ::1] us = us_arr
    cdef double[:, ::1] ys = ys_arr
    cdef double[::1] xn = np.empty(n)
    cdef double s
    cdef long t
    cdef Py_ssize_t i, j
    with nogil:
        for t in range(N):
            for i in range(m):
                s = 0.0
                for j in range(d):
                    s += k[i, j] * v[j]
                if has_ex:
                    s += ex[t, i]
                us[t, i] = s
            for i in range(r):
                s = 0.0
                for j in range(n):
                    s += cm[i, j] * x[j]
                ys[t, i] = s
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += a[i, j] * x[j]
                for j in range(m):
                    s += bm[i, j] * us[t, j]
                xn[i] = s
            for i in range(n):
                x[i] = xn[i]
            for i in range(Lm - m):
                v[i] = v[i + m]
            for i in range(m):
                v[Lm - m + i] = us[t, i]
            for i in range(Lm, d - r):
                v[i] = v[i + r]
            for i in range(r):
                v[d - r + i] = ys[t, i]
    return us_arr, ys_arr
