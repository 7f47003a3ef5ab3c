"""Fused inner loops that would otherwise make several passes over large arrays."""
import numba
import numpy as np


@numba.njit(cache=True)
def soe_history_update(u, decay, coef_new, coef_old, weights, phi_new, phi_old):
    """In place ``u[i] = decay[i]*u[i] + coef_new[i]*phi_new + coef_old[i]*phi_old``.

    Returns ``sum_i weights[i] * u[i]`` (the updated accumulators).  The loop
    order is fixed so results are bitwise reproducible.
    """
    k, n = u.shape
    total = np.zeros(n)
    for i in range(k):
        d = decay[i]
        a = coef_new[i]
        b = coef_old[i]
        w = weights[i]
        row = u[i]
        for j in range(n):
            v = d * row[j] + a * phi_new[j] + b * phi_old[j]
            row[j] = v
            total[j] += w * v
    return total
