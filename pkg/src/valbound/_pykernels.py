"""Pure-numpy tabular kernels. Same signatures as the compiled ``_ckernels``."""

import math

import numpy as np


def state_values(q, log_prior, beta):
    q = np.asarray(q, dtype=np.float64)
    if math.isinf(beta):
        return q.max(axis=1)
    x = beta * q + log_prior
    m = x.max(axis=1)
    acc = np.exp(x - m[:, None]).sum(axis=1)
    return (m + np.log(acc)) / beta


def backup(P, r, cont, gamma, v):
    return r + (gamma * cont)[:, None] * (P @ v)


def value_iteration(P, r, cont, gamma, log_prior, beta, tol, max_iter, q0):
    q = np.array(q0, dtype=np.float64, copy=True)
    res = math.inf
    it = 0
    gc = (gamma * cont)[:, None]
    while it < max_iter:
        nxt = r + gc * (P @ state_values(q, log_prior, beta))
        res = float(np.max(np.abs(nxt - q)))
        q = nxt
        it += 1
        if res <= tol:
            break
    return q, it, res
