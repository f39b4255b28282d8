"""Compiled SMO loop for the one-class dual

    min 1/2 a^T K a   s.t.  0 <= a_i <= C,  sum(a) = 1

Working-set selection uses the maximal violating pair with second-order
information for the second index.
"""

import numba
import numpy as np

TAU = 1e-12


@numba.njit(cache=True)
def _kernel_row(X, gamma, i, out):
    n, d = X.shape
    for t in range(n):
        s = 0.0
        for k in range(d):
            diff = X[t, k] - X[i, k]
            s += diff * diff
        out[t] = np.exp(-gamma * s)


@numba.njit(cache=True)
def _get_row(i, K, X, gamma, cache, tags):
    # dense matrix when given, else a direct-mapped row cache
    if K.shape[0] > 0:
        return K[i]
    slot = i % tags.shape[0]
    if tags[slot] != i:
        _kernel_row(X, gamma, i, cache[slot])
        tags[slot] = i
    return cache[slot]


@numba.njit(cache=True)
def smo_solve(alpha, C, tol, max_iter, K, X, gamma, n_slots):
    """Run SMO in place on ``alpha``.

    Returns (gradient, iterations, final KKT violation).  ``iterations ==
    max_iter`` with violation above ``tol`` signals non-convergence.
    """
    n = alpha.shape[0]
    if K.shape[0] > 0:
        cache = np.empty((1, 1))
        tags = np.full(1, -1, dtype=np.int64)
    else:
        cache = np.empty((n_slots, n))
        tags = np.full(n_slots, -1, dtype=np.int64)

    G = np.zeros(n)
    for j in range(n):
        if alpha[j] > 0.0:
            row = _get_row(j, K, X, gamma, cache, tags)
            aj = alpha[j]
            for t in range(n):
                G[t] += aj * row[t]

    it = 0
    violation = np.inf
    while True:
        # i: maximal -G over the indices that may increase
        gmax = -np.inf
        i = -1
        for t in range(n):
            if alpha[t] < C and -G[t] >= gmax:
                gmax = -G[t]
                i = t
        if i < 0:
            violation = 0.0
            break
        Qi = _get_row(i, K, X, gamma, cache, tags).copy()

        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if alpha[t] > 0.0:
                if G[t] >= gmax2:
                    gmax2 = G[t]
                b = gmax + G[t]
                if b > 0.0:
                    a = Qi[i] + 1.0 - 2.0 * Qi[t]
                    if a <= 0.0:
                        a = TAU
                    obj = -(b * b) / a
                    if obj <= best:
                        best = obj
                        j = t
        violation = gmax + gmax2
        if violation < tol or j < 0:
            break
        if it >= max_iter:
            break
        it += 1

        Qj = _get_row(j, K, X, gamma, cache, tags)
        quad = Qi[i] + Qj[j] - 2.0 * Qi[j]
        if quad <= 0.0:
            quad = TAU
        old_ai = alpha[i]
        old_aj = alpha[j]
        delta = (G[i] - G[j]) / quad
        s = old_ai + old_aj
        ai = old_ai - delta
        aj = old_aj + delta
        if s > C:
            if ai > C:
                ai = C
                aj = s - C
            elif aj > C:
                aj = C
                ai = s - C
        else:
            if aj < 0.0:
                aj = 0.0
                ai = s
            elif ai < 0.0:
                ai = 0.0
                aj = s
        alpha[i] = ai
        alpha[j] = aj
        di = ai - old_ai
        dj = aj - old_aj
        for t in range(n):
            G[t] += Qi[t] * di + Qj[t] * dj
    return G, it, violation
