"""Numba kernels for the two hot loops: long fixed-step ODE integrations and
dense log-likelihood grids. Pure float64, no fastmath, so results match the
equivalent numpy expressions and are independent of thread count."""

import numpy as np
from numba import njit, prange

# Probabilities are clamped at this floor before taking logs, so saturated
# psychometric values cannot produce -inf.
LOG_PROB_FLOOR = np.log(1e-12)


@njit(cache=True)
def rk4_relax(a_nodes, a_mids, k1, k2, h):
    """RK4 for y' = k1*(k2*A(t) - y), y(0) = 0, with A presampled.

    ``a_nodes`` holds A at the n+1 step boundaries, ``a_mids`` at the n step
    midpoints; both are (.., 2) offsets. Returns the (n+1, 2) state offsets.
    """
    n = a_mids.shape[0]
    out = np.zeros((n + 1, 2))
    y0 = 0.0
    y1 = 0.0
    for i in range(n):
        for c in range(2):
            y = y0 if c == 0 else y1
            an = k2 * a_nodes[i, c]
            am = k2 * a_mids[i, c]
            ae = k2 * a_nodes[i + 1, c]
            s1 = k1 * (an - y)
            s2 = k1 * (am - (y + 0.5 * h * s1))
            s3 = k1 * (am - (y + 0.5 * h * s2))
            s4 = k1 * (ae - (y + h * s3))
            y = y + (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
            out[i + 1, c] = y
            if c == 0:
                y0 = y
            else:
                y1 = y
    return out


@njit(cache=True, parallel=True)
def grid_loglik(h_unit, m_off, is_lagging, k2s, psy_k, psy_x0):
    """Bernoulli log-likelihood over a (k1, k2) grid.

    ``h_unit`` is the (n_k1, n_trials) closed-form offset per unit k2,
    ``m_off`` the signed midpoint offsets from white along the traversal,
    ``is_lagging`` the observed choices. Choice probability is the logistic
    of psy_k * (m - a - psy_x0); each log term is clamped at the floor.
    """
    n_k1, n_t = h_unit.shape
    n_k2 = k2s.shape[0]
    out = np.empty((n_k1, n_k2))
    for i in prange(n_k1):
        for l in range(n_k2):
            total = 0.0
            for j in range(n_t):
                z = psy_k * (m_off[j] - k2s[l] * h_unit[i, j] - psy_x0)
                if not is_lagging[j]:
                    z = -z
                # log sigmoid(z) = -softplus(-z)
                if z < 0.0:
                    lp = z - np.log1p(np.exp(z))
                else:
                    lp = -np.log1p(np.exp(-z))
                if lp < LOG_PROB_FLOOR:
                    lp = LOG_PROB_FLOOR
                total += lp
            out[i, l] = total
    return out
