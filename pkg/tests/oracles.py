"""Independent brute-force oracles used by the tests."""

import numpy as np


def simplex_grid(K, step=0.01):
    n = int(round(1 / step))
    if K == 1:
        return np.ones((1, 1))
    if K == 2:
        a = np.arange(n + 1) / n
        return np.column_stack([a, 1 - a])
    pts = [(i / n, j / n, (n - i - j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts)


def grid_nnls(P, y, w, step=0.01):
    """Best point of the ``step`` grid on the simplex."""
    G = simplex_grid(P.shape[1], step)
    R = y[None, :] - G @ P.T
    obj = (R * R) @ w
    k = int(np.argmin(obj))
    return G[k], float(obj[k])


def repeated_product(base, n):
    out = 1.0
    for _ in range(n):
        out *= base
    return out
