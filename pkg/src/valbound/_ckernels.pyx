# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tabular kernels. Signatures mirror ``valbound._pykernels``."""

from libc.math cimport exp, log, fabs, isinf, INFINITY

import numpy as np

cdef void _state_values(const double[:, ::1] q, const double[:, ::1] log_prior,
                        double beta, double[::1] out) noexcept nogil:
    cdef Py_ssize_t S = q.shape[0]
    cdef Py_ssize_t A = q.shape[1]
    cdef Py_ssize_t s, a
    cdef double m, x, acc
    if isinf(beta):
        for s in range(S):
            m = q[s, 0]
            for a in range(1, A):
                if q[s, a] > m:
                    m = q[s, a]
            out[s] = m
        return
    for s in range(S):
        m = -INFINITY
        for a in range(A):
            if log_prior[s, a] != -INFINITY:
                x = beta * q[s, a] + log_prior[s, a]
                if x > m:
                    m = x
        acc = 0.0
        for a in range(A):
            if log_prior[s, a] != -INFINITY:
                acc += exp(beta * q[s, a] + log_prior[s, a] - m)
        out[s] = (m + log(acc)) / beta


cdef void _backup(const double[:, :, ::1] P, const double[:, ::1] r,
                  const double[::1] cont, double gamma, const double[::1] v,
                  double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t S = r.shape[0]
    cdef Py_ssize_t A = r.shape[1]
    cdef Py_ssize_t s, a, t
    cdef double acc, g
    for s in range(S):
        g = gamma * cont[s]
        for a in range(A):
            if g == 0.0:
                out[s, a] = r[s, a]
                continue
            acc = 0.0
            for t in range(S):
                acc += P[s, a, t] * v[t]
            out[s, a] = r[s, a] + g * acc


def state_values(q, log_prior, double beta):
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, ::1] lp = np.ascontiguousarray(log_prior, dtype=np.float64)
    out = np.empty(qv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        _state_values(qv, lp, beta, ov)
    return out


def backup(P, r, cont, double gamma, v):
    cdef const double[:, :, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(cont, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty((rv.shape[0], rv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        _backup(Pv, rv, cv, gamma, vv, ov)
    return out


def value_iteration(P, r, cont, double gamma, log_prior, double beta,
                    double tol, Py_ssize_t max_iter, q0):
    """Iterate the (soft or hard) backup from ``q0``.

    Returns ``(q, iterations, residual)`` where ``residual`` is the sup-norm
    distance between the last two iterates.
    """
    cdef const double[:, :, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(cont, dtype=np.float64)
    cdef const double[:, ::1] lp = np.ascontiguousarray(log_prior, dtype=np.float64)
    cur_arr = np.array(q0, dtype=np.float64, order="C", copy=True)
    nxt_arr = np.empty_like(cur_arr)
    v_arr = np.empty(rv.shape[0], dtype=np.float64)
    cdef double[:, ::1] cur = cur_arr
    cdef double[:, ::1] nxt = nxt_arr
    cdef double[:, ::1] tmp
    cdef double[::1] vv = v_arr
    cdef Py_ssize_t S = rv.shape[0]
    cdef Py_ssize_t A = rv.shape[1]
    cdef Py_ssize_t it = 0
    cdef Py_ssize_t s, a
    cdef double res = INFINITY
    cdef double d
    cdef bint swapped = False
    with nogil:
        while it < max_iter:
            _state_values(cur, lp, beta, vv)
            _backup(Pv, rv, cv, gamma, vv, nxt)
            res = 0.0
            for s in range(S):
                for a in range(A):
                    d = fabs(nxt[s, a] - cur[s, a])
                    if d > res:
                        res = d
            tmp = cur
            cur = nxt
            nxt = tmp
            swapped = not swapped
            it += 1
            if res <= tol:
                break
    return (nxt_arr if swapped else cur_arr), it, res
